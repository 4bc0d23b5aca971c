#pragma once
// Canonical amino-acid alphabet and per-residue scalar properties.
//
// The alphabet is ordered alphabetically by one-letter code; every index
// in the codebase (one-hot blocks, coupling matrices, frequency vectors)
// refers to this ordering.

#include <array>
#include <string>

#include "abloop/common.hpp"

namespace abloop {

inline constexpr int kNumAA = 20;
inline constexpr const char* kAlphabet = "ACDEFGHIKLMNPQRSTVWY";

inline int aa_index(char c) {
    for (int i = 0; i < kNumAA; ++i)
        if (kAlphabet[i] == c) return i;
    fail(std::string("unknown amino acid code '") + c + "'");
}

inline char aa_letter(int idx) {
    check(idx >= 0 && idx < kNumAA, "amino acid index out of range");
    return kAlphabet[idx];
}

// Kyte-Doolittle hydropathy, same ordering as kAlphabet.
inline constexpr std::array<double, kNumAA> kHydropathy = {
    1.8,  /*A*/ 2.5,  /*C*/ -3.5, /*D*/ -3.5, /*E*/ 2.8,  /*F*/
    -0.4, /*G*/ -3.2, /*H*/ 4.5,  /*I*/ -3.9, /*K*/ 3.8,  /*L*/
    1.9,  /*M*/ -3.5, /*N*/ -1.6, /*P*/ -3.5, /*Q*/ -4.5, /*R*/
    -0.8, /*S*/ -0.7, /*T*/ 4.2,  /*V*/ -0.9, /*W*/ -1.3, /*Y*/
};

// Hydropathy scaled to [-1, 1].
inline double hydropathy_scaled(int aa) { return kHydropathy[size_t(aa)] / 4.5; }

// Background CDR amino-acid distribution used by the synthetic generator:
// glycine/tyrosine heavy, the rest uniform.
inline Vec cdr_background_distribution() {
    Vec p = Vec::Constant(kNumAA, 0.6 / 18.0);
    p[aa_index('G')] = 0.2;
    p[aa_index('Y')] = 0.2;
    return p;
}

}  // namespace abloop
