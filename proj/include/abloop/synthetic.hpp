#pragma once
// Deterministic synthetic antibody-antigen complexes with a controllable
// antigen-class -> CDR-sequence dependence.
//
// Geometry: the antigen is an idealized alpha helix floating above a CDR
// loop arc that bridges two fixed framework strands. Class identity is
// carried by the epitope amino-acid composition; the CDR sequence follows
// the class profile with probability rho and a fixed glycine/tyrosine-heavy
// background otherwise. Class c's profile assigns position i the amino acid
// class_set_c[i mod 5]; the four class sets are disjoint 5-AA blocks.

#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "abloop/amino.hpp"
#include "abloop/common.hpp"
#include "abloop/complex.hpp"
#include "abloop/geometry.hpp"

namespace abloop {

struct GenConfig {
    int n_complexes = 16;
    int cdr_min = 6, cdr_max = 10;
    int antigen_min = 10, antigen_max = 13;
    int n_antigen_classes = 2;
    double rho = 0.9;    // P(CDR position follows the class profile)
    double sigma = 0.3;  // per-atom Gaussian noise, Angstrom
    uint64_t seed = 0;
    int framework_flank = 6;  // residues per framework strand

    void validate() const {
        check(n_complexes >= 1, "gen: n_complexes must be >= 1");
        check(cdr_min >= 3 && cdr_max >= cdr_min, "gen: cdr lengths must be >= 3");
        check(antigen_min >= 3 && antigen_max >= antigen_min, "gen: antigen lengths must be >= 3");
        check(n_antigen_classes >= 1 && n_antigen_classes <= 4,
              "gen: n_antigen_classes must be in [1, 4] (disjoint 5-AA profiles)");
        check(rho >= 0.0 && rho <= 1.0, "gen: rho must be in [0, 1]");
        check(sigma >= 0.0, "gen: sigma must be >= 0");
        check(framework_flank >= 2, "gen: framework_flank must be >= 2");
    }
};

namespace synth {

inline constexpr double kCaSpacing = 3.8;

// Epitope AA block for class c and the (offset) CDR profile block.
inline int epitope_set_base(int cls) { return 5 * cls; }
inline int profile_set_base(int cls) { return 5 * ((cls + 2) % 4); }
inline int profile_aa(int cls, int position) { return profile_set_base(cls) + position % 5; }

// Builds a residue around a CA given local tangent/normal directions.
inline Residue make_residue(int aa, const Vec3& ca, const Vec3& tangent, const Vec3& normal) {
    Vec3 t = tangent.normalized();
    Vec3 n = (normal - normal.dot(t) * t).normalized();
    Vec3 b = t.cross(n);
    Residue r;
    r.aa = aa;
    r.atoms.row(kCA) = ca.transpose();
    r.atoms.row(kN) = (ca - 1.20 * t + 0.83 * n).transpose();
    r.atoms.row(kC) = (ca + 1.25 * t + 0.87 * n).transpose();
    r.atoms.row(kO) = (ca + 1.25 * t + 0.87 * n + 1.23 * (-0.17 * t + 0.60 * n + 0.78 * b)).transpose();
    return r;
}

// CA positions of an arc in the xz-plane from (-gap/2,0,0) to (gap/2,0,0)
// bulging toward +z, with n interior points at kCaSpacing arc spacing.
// Errors when the chord exceeds what the loop can span.
inline std::vector<Vec3> arc_points(int n, double gap) {
    double arc_len = kCaSpacing * (n + 1);
    check(arc_len > gap, "infeasible loop geometry: anchor gap " + std::to_string(gap) +
                             " A exceeds the span of " + std::to_string(n) + " residues");
    // solve sin(theta)/theta = gap/arc_len by bisection
    double target = gap / arc_len;
    double lo = 1e-6, hi = M_PI - 1e-9;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (std::sin(mid) / mid > target ? lo : hi) = mid;
    }
    double theta = 0.5 * (lo + hi);
    double r = arc_len / (2.0 * theta);
    double zc = -r * std::cos(theta);
    std::vector<Vec3> pts;
    pts.reserve(size_t(n));
    for (int k = 0; k < n; ++k) {
        double u = -theta + 2.0 * theta * double(k + 1) / double(n + 1);
        pts.emplace_back(r * std::sin(u), 0.0, zc + r * std::cos(u));
    }
    return pts;
}

inline double arc_apex_height(int n, double gap) {
    double arc_len = kCaSpacing * (n + 1);
    double target = gap / arc_len;
    double lo = 1e-6, hi = M_PI - 1e-9;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (std::sin(mid) / mid > target ? lo : hi) = mid;
    }
    double theta = 0.5 * (lo + hi);
    double r = arc_len / (2.0 * theta);
    return r * (1.0 - std::cos(theta));
}

}  // namespace synth

struct LabeledComplexes {
    std::vector<Complex> complexes;
    std::vector<int> labels;  // antigen class per complex
};

inline LabeledComplexes generate(const GenConfig& cfg) {
    cfg.validate();
    const double kAnchorGap = 8.0;
    const Vec background = cdr_background_distribution();
    // fixed framework template sequence, tiled to the flank length
    const std::string fw_template = "EVQLVESGGGLVQPGGSLRL";

    LabeledComplexes out;
    out.complexes.reserve(size_t(cfg.n_complexes));
    for (int ci = 0; ci < cfg.n_complexes; ++ci) {
        Rng rng(mix_seed(cfg.seed, uint64_t(ci)));
        std::normal_distribution<double> noise(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::uniform_int_distribution<int> any_aa(0, kNumAA - 1);

        const int cls = ci % cfg.n_antigen_classes;
        const int cdr_len = cfg.cdr_min + int(rng() % uint64_t(cfg.cdr_max - cfg.cdr_min + 1));
        const int ant_len = cfg.antigen_min + int(rng() % uint64_t(cfg.antigen_max - cfg.antigen_min + 1));
        const int flank = cfg.framework_flank;

        Complex cx;
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "syn-%06d", ci);
            cx.id = buf;
        }

        // heavy chain CAs: left strand -> CDR arc -> right strand
        std::vector<Vec3> heavy_ca;
        for (int k = 0; k < flank; ++k)
            heavy_ca.emplace_back(-kAnchorGap / 2 - synth::kCaSpacing * (flank - 1 - k), 0.0, 0.0);
        for (const Vec3& p : synth::arc_points(cdr_len, kAnchorGap)) heavy_ca.push_back(p);
        for (int k = 0; k < flank; ++k)
            heavy_ca.emplace_back(kAnchorGap / 2 + synth::kCaSpacing * k, 0.0, 0.0);

        // heavy sequence: template framework, profile/background CDR
        std::vector<int> heavy_aa(heavy_ca.size());
        for (size_t i = 0; i < heavy_ca.size(); ++i)
            heavy_aa[i] = aa_index(fw_template[i % fw_template.size()]);
        for (int i = 0; i < cdr_len; ++i) {
            int aa;
            if (unif(rng) < cfg.rho) {
                aa = synth::profile_aa(cls, i);
            } else {
                double u = unif(rng), acc = 0.0;
                aa = kNumAA - 1;
                for (int a = 0; a < kNumAA; ++a) {
                    acc += background[a];
                    if (u < acc) {
                        aa = a;
                        break;
                    }
                }
            }
            heavy_aa[size_t(flank + i)] = aa;
        }

        // antigen helix above the arc apex, centered on x
        const double apex = synth::arc_apex_height(cdr_len, kAnchorGap);
        const double helix_r = 2.3, rise = 1.5, twist = 100.0 * M_PI / 180.0;
        std::vector<Vec3> ant_ca;
        for (int m = 0; m < ant_len; ++m) {
            double x = rise * (m - (ant_len - 1) / 2.0);
            ant_ca.emplace_back(x, helix_r * std::cos(twist * m),
                                apex + 6.0 + helix_r * std::sin(twist * m));
        }

        // epitope: antigen residues nearest the CDR anchor midpoint (origin)
        const int epi_n = std::min<int>(6, ant_len);
        std::vector<int> order(static_cast<size_t>(ant_len));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return ant_ca[size_t(a)].norm() < ant_ca[size_t(b)].norm();
        });
        std::vector<int> epitope(order.begin(), order.begin() + epi_n);
        std::sort(epitope.begin(), epitope.end());

        std::vector<int> ant_aa(static_cast<size_t>(ant_len));
        for (int m = 0; m < ant_len; ++m) ant_aa[size_t(m)] = any_aa(rng);
        for (size_t e = 0; e < epitope.size(); ++e)
            ant_aa[size_t(epitope[e])] = synth::epitope_set_base(cls) + int(e) % 5;

        // assemble residues with noise
        auto build_chain = [&](const std::vector<Vec3>& cas, const std::vector<int>& aas,
                               const Vec3& normal_hint) {
            Chain chain;
            for (size_t i = 0; i < cas.size(); ++i) {
                Vec3 prev = i > 0 ? cas[i - 1] : cas[i] - Vec3(1, 0, 0);
                Vec3 next = i + 1 < cas.size() ? cas[i + 1] : cas[i] + Vec3(1, 0, 0);
                Vec3 tangent = next - prev;
                Vec3 normal = normal_hint;
                if (std::abs(tangent.normalized().dot(normal.normalized())) > 0.9)
                    normal = Vec3(1, 0, 0);
                Residue r = synth::make_residue(aas[i], cas[i], tangent, normal);
                for (int a = 0; a < 4; ++a)
                    for (int d = 0; d < 3; ++d) r.atoms(a, d) += cfg.sigma * noise(rng);
                chain.push_back(r);
            }
            return chain;
        };
        cx.heavy = build_chain(heavy_ca, heavy_aa, Vec3(0, 1, 0));
        cx.antigen = build_chain(ant_ca, ant_aa, Vec3(0, 0, 1));
        cx.epitope = epitope;
        cx.cdr_spans = {{"H3", flank, flank + cdr_len}};
        cx.validate();
        out.complexes.push_back(std::move(cx));
        out.labels.push_back(cls);
    }
    return out;
}

inline void save_labels(const std::string& path, const LabeledComplexes& data) {
    std::ofstream out(path);
    check(out.good(), "cannot write " + path);
    out << "id,class\n";
    for (size_t i = 0; i < data.complexes.size(); ++i)
        out << data.complexes[i].id << "," << data.labels[i] << "\n";
}

}  // namespace abloop
