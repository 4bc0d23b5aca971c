#pragma once
// Backbone geometry helpers: dihedrals, local frames, quaternions and
// rigid motions. Everything here is plain (non-differentiated) math.

#include <cmath>
#include <random>

#include "abloop/common.hpp"

namespace abloop {

// Signed dihedral angle (radians) of the chain a-b-c-d.
inline double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    Vec3 b1 = b - a, b2 = c - b, b3 = d - c;
    Vec3 n1 = b1.cross(b2), n2 = b2.cross(b3);
    Vec3 m = n1.cross(b2.normalized());
    return std::atan2(m.dot(n2), n1.dot(n2));
}

// Bond angle (radians) at vertex b of a-b-c.
inline double bond_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 u = (a - b).normalized(), v = (c - b).normalized();
    return std::acos(std::clamp(u.dot(v), -1.0, 1.0));
}

// Right-handed orthonormal residue frame built from N, CA, C:
// e1 along CA->C, e2 the CA->N component orthogonal to e1, e3 = e1 x e2.
// Columns of the returned matrix are (e1, e2, e3).
inline Mat3 residue_frame(const Vec3& n, const Vec3& ca, const Vec3& c) {
    Vec3 e1 = (c - ca).normalized();
    Vec3 v = n - ca;
    Vec3 e2 = (v - v.dot(e1) * e1).normalized();
    Vec3 e3 = e1.cross(e2);
    Mat3 r;
    r.col(0) = e1;
    r.col(1) = e2;
    r.col(2) = e3;
    return r;
}

// Unit quaternion (w, x, y, z) of a rotation matrix, canonicalized to w >= 0.
inline Eigen::Vector4d rotation_to_quaternion(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z()};
}

struct RigidMotion {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

    // Applies the motion to an n x 3k matrix of packed xyz triples.
    Mat apply_packed(const Mat& coords) const {
        check(coords.cols() % 3 == 0, "packed coordinate matrix must have 3k columns");
        Mat out = coords;
        for (Eigen::Index i = 0; i < coords.rows(); ++i)
            for (Eigen::Index b = 0; b < coords.cols(); b += 3)
                out.row(i).segment<3>(b) = (rotation * Vec3(coords.row(i).segment<3>(b).transpose()) + translation).transpose();
        return out;
    }
};

// Uniform random rotation via a random unit quaternion.
inline Mat3 random_rotation(Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline RigidMotion random_rigid_motion(Rng& rng, double translation_scale = 10.0) {
    std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
    RigidMotion m;
    m.rotation = random_rotation(rng);
    m.translation = Vec3(u(rng), u(rng), u(rng));
    return m;
}

}  // namespace abloop
