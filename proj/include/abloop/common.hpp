#pragma once
// Shared aliases, error helpers and seed derivation.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace abloop {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr const char* kVersion = "0.1.0";

using Rng = std::mt19937_64;

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// splitmix64; used to derive independent child seeds so that parallel
// workers produce the same streams as a serial run.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a over a string; stable across runs/platforms (used for config
// fingerprints in checkpoints and manifests).
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string rng_state_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void rng_restore(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
}

}  // namespace abloop
