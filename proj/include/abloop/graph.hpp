#pragma once
// Heterogeneous antibody-antigen graph: 10 typed edge sets, residue and
// edge feature vectors, global tokens and virtual nodes.
//
// Node order: heavy residues, light residues, antigen residues, 3 global
// tokens (heavy/light/antigen segments), 3 virtual nodes (epitope centroid,
// CDR centroid, complex centroid). Coordinates are packed n x 12 with atom
// order N, CA, C, O; token/virtual nodes replicate their centroid.
//
// Edge types:
//   0 intra-chain radial (CA < 8 A)     5 sequential d=2 (antibody only)
//   1 global<->segment residues         6 inter-chain radial (CA < 12 A)
//   2 global<->global                   7 inter-chain KNN (K=8)
//   3 sequential d=1 (antibody only)    8 virtual<->epitope (all pairs)
//   4 intra-chain KNN (K=8)             9 virtual<->CDR (all pairs)
// A residue pair may satisfy several criteria and then appears once under
// each type it satisfies.
//
// Edge features (104): type one-hot 8 | relative position 16 | pair-distance
// RBFs 64 (N-CA, CA-CA, C-CA, O-CA x 16) | quaternion 4 | frame directions 12.
// The positional block is zeroed for types 1/2/6/7; frame-dependent blocks
// are zeroed when either endpoint lacks a backbone frame; types 8/9 carry a
// learnable vector owned by the model, the graph stores zeros for them.

#include <array>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "abloop/amino.hpp"
#include "abloop/common.hpp"
#include "abloop/complex.hpp"
#include "abloop/geometry.hpp"

namespace abloop {

enum class Mode { Train, Infer };

enum class NodeKind : uint8_t { Heavy, Light, Antigen, Global, Virtual };

struct NodeFeat {
    static constexpr int kPos = 0, kPosW = 16;
    static constexpr int kBond = 16, kBondW = 48;
    static constexpr int kAngle = 64, kAngleW = 12;
    static constexpr int kFrame = 76, kFrameW = 9;
    static constexpr int kAA = 85, kAAW = 20;
    static constexpr int kComp = 105, kCompW = 4;
    static constexpr int kSeg = 109, kSegW = 3;
    static constexpr int kTotal = 112;   // dense 108 + sparse complementarity 4
    static constexpr int kDenseW = 108;
};

struct EdgeFeat {
    static constexpr int kType = 0, kTypeW = 8;  // standard types 0..7
    static constexpr int kRelPos = 8, kRelPosW = 16;
    static constexpr int kRbf = 24, kRbfW = 64;
    static constexpr int kQuat = 88, kQuatW = 4;
    static constexpr int kFrameDir = 92, kFrameDirW = 12;
    static constexpr int kTotal = 104;
};

inline constexpr int kNumEdgeTypes = 10;
inline constexpr int kNumVirtualNodes = 3;
inline constexpr int kNumGlobalNodes = 3;

// 16 Gaussians with centers evenly spaced on [0, 20] A, sigma = spacing.
inline Eigen::RowVectorXd rbf16(double d) {
    constexpr int n = 16;
    const double spacing = 20.0 / (n - 1);
    Eigen::RowVectorXd out(n);
    for (int k = 0; k < n; ++k) {
        double mu = spacing * k;
        out[k] = std::exp(-(d - mu) * (d - mu) / (2.0 * spacing * spacing));
    }
    return out;
}

// Sine ladder over geometric frequencies; odd in delta so that reversing an
// edge negates the encoding.
inline Eigen::RowVectorXd relpos16(double delta) {
    constexpr int n = 16;
    Eigen::RowVectorXd out(n);
    for (int k = 0; k < n; ++k) out[k] = std::sin(delta / std::pow(10000.0, double(k) / n));
    return out;
}

// Interleaved sin/cos positional embedding.
inline Eigen::RowVectorXd posenc16(int pos) {
    constexpr int n = 16;
    Eigen::RowVectorXd out(n);
    for (int m = 0; m < n / 2; ++m) {
        double f = std::pow(10000.0, 2.0 * m / n);
        out[2 * m] = std::sin(pos / f);
        out[2 * m + 1] = std::cos(pos / f);
    }
    return out;
}

struct TypedEdges {
    std::vector<int> dst, src;  // edge e: src[e] -> dst[e]
    Mat features;               // E x 104 (zeros for learnable types 8/9)
    int size() const { return int(dst.size()); }
};

struct HeteroGraph {
    int n_res = 0;
    int n_nodes = 0;
    std::vector<NodeKind> node_kind;
    Mat node_features_raw;  // n_res x 112
    Mat node_coords;        // n_nodes x 12
    std::array<TypedEdges, kNumEdgeTypes> edges;

    std::vector<uint8_t> cdr_mask, epitope_mask, framework_hc_mask;  // per node
    std::vector<int> heavy_nodes, light_nodes, antigen_nodes;
    std::vector<int> cdr_nodes;      // span order
    std::vector<int> epitope_nodes;  // ascending
    std::vector<int> framework_hc_nodes;
    std::vector<int> global_nodes, virtual_nodes;

    std::vector<int> chain_of;    // 0 heavy / 1 light / 2 antigen, -1 tokens
    std::vector<int> local_index; // index within own chain, -1 for tokens
};

// Replaces CDR backbone coordinates by linear interpolation between the CA
// of the flanking framework anchors, with N/C/O offset by the anchors' mean
// local geometry. Deterministic and rigid-motion equivariant.
inline void reinit_cdr_coords(Complex& cx) {
    for (const CdrSpan& s : cx.cdr_spans) {
        int left = s.start - 1, right = s.end;
        bool has_left = left >= 0, has_right = right < int(cx.heavy.size());
        check(has_left || has_right, "complex " + cx.id + ": CDR span " + s.name +
                                         " has no flanking framework anchor");
        const Residue& a0 = cx.heavy[size_t(has_left ? left : right)];
        const Residue& a1 = cx.heavy[size_t(has_right ? right : left)];
        Eigen::Matrix<double, 4, 3> offsets =
            0.5 * (a0.atoms.rowwise() - a0.atoms.row(kCA)) +
            0.5 * (a1.atoms.rowwise() - a1.atoms.row(kCA));
        Vec3 ca0 = a0.ca(), ca1 = a1.ca();
        int len = s.length();
        for (int k = 0; k < len; ++k) {
            double t = double(k + 1) / double(len + 1);
            Vec3 ca = (1.0 - t) * ca0 + t * ca1;
            Residue& r = cx.heavy[size_t(s.start + k)];
            r.atoms = offsets.rowwise() + ca.transpose();
        }
    }
}

namespace graph_detail {

struct ChainView {
    const Chain* chain;
    int chain_id;    // 0 heavy, 1 light, 2 antigen
    int node_base;   // first node index
};

inline bool has_residue_frame(const Residue&) { return true; }

// Per-node geometry bundle used by edge features.
struct NodeGeom {
    bool has_frame = false;
    Mat3 frame = Mat3::Identity();
    Eigen::Matrix<double, 4, 3> atoms = Eigen::Matrix<double, 4, 3>::Zero();
};

}  // namespace graph_detail

// Raw residue features (n_res x 112). CDR amino-acid one-hot slots are
// zeroed (the CDR sequence is the prediction target in both modes); the mode
// parameter is kept for interface symmetry with framework_dropout.
inline Mat encode_node_features(const Complex& cx, Mode /*mode*/ = Mode::Train) {
    const std::vector<const Chain*> chains = {&cx.heavy, &cx.light, &cx.antigen};
    int n_res = int(cx.heavy.size() + cx.light.size() + cx.antigen.size());
    Mat feats = Mat::Zero(n_res, NodeFeat::kTotal);

    std::vector<uint8_t> is_cdr_heavy(cx.heavy.size(), 0);
    for (const CdrSpan& s : cx.cdr_spans)
        for (int i = s.start; i < s.end; ++i) is_cdr_heavy[size_t(i)] = 1;
    std::vector<uint8_t> is_epi_ant(cx.antigen.size(), 0);
    for (int e : cx.epitope) is_epi_ant[size_t(e)] = 1;

    // min CA distance to the opposite molecule, for the complementarity block
    Mat ab_ca(Eigen::Index(cx.heavy.size() + cx.light.size()), 3);
    {
        Eigen::Index r = 0;
        for (const Residue& res : cx.heavy) ab_ca.row(r++) = res.atoms.row(kCA);
        for (const Residue& res : cx.light) ab_ca.row(r++) = res.atoms.row(kCA);
    }
    Mat ant_ca = chain_ca(cx.antigen);

    int row = 0;
    for (int c = 0; c < 3; ++c) {
        const Chain& chain = *chains[size_t(c)];
        int n = int(chain.size());
        for (int i = 0; i < n; ++i, ++row) {
            const Residue& r = chain[size_t(i)];
            auto f = feats.row(row);

            f.segment<NodeFeat::kPosW>(NodeFeat::kPos) = posenc16(i);

            f.segment<16>(NodeFeat::kBond) = rbf16((r.atoms.row(kN) - r.atoms.row(kCA)).norm());
            f.segment<16>(NodeFeat::kBond + 16) = rbf16((r.atoms.row(kCA) - r.atoms.row(kC)).norm());
            f.segment<16>(NodeFeat::kBond + 32) = rbf16((r.atoms.row(kC) - r.atoms.row(kO)).norm());

            // dihedrals phi/psi/omega and three bond angles, sin-cos pairs;
            // entries needing a missing neighbor stay zero
            const Residue* prev = i > 0 ? &chain[size_t(i - 1)] : nullptr;
            const Residue* next = i + 1 < n ? &chain[size_t(i + 1)] : nullptr;
            auto put_angle = [&](int slot, double ang) {
                f[NodeFeat::kAngle + 2 * slot] = std::sin(ang);
                f[NodeFeat::kAngle + 2 * slot + 1] = std::cos(ang);
            };
            Vec3 N = r.atoms.row(kN).transpose(), CA = r.atoms.row(kCA).transpose(),
                 C = r.atoms.row(kC).transpose(), O = r.atoms.row(kO).transpose();
            if (prev) put_angle(0, dihedral(prev->atoms.row(kC).transpose(), N, CA, C));
            if (next) put_angle(1, dihedral(N, CA, C, next->atoms.row(kN).transpose()));
            if (next) put_angle(2, dihedral(CA, C, next->atoms.row(kN).transpose(),
                                            next->atoms.row(kCA).transpose()));
            put_angle(3, bond_angle(N, CA, C));
            put_angle(4, bond_angle(CA, C, O));
            if (prev) put_angle(5, bond_angle(prev->atoms.row(kC).transpose(), N, CA));

            // directions to chain neighbors and own O in the local frame
            Mat3 fr = residue_frame(N, CA, C);
            auto put_dir = [&](int slot, const Vec3& target) {
                Vec3 d = target - CA;
                if (d.norm() > 1e-9) f.segment<3>(NodeFeat::kFrame + 3 * slot) = (fr.transpose() * d.normalized()).transpose();
            };
            if (prev) put_dir(0, prev->atoms.row(kCA).transpose());
            if (next) put_dir(1, next->atoms.row(kCA).transpose());
            put_dir(2, O);

            bool masked = (c == 0) && is_cdr_heavy[size_t(i)];
            if (!masked) f[NodeFeat::kAA + r.aa] = 1.0;

            const Mat& opposite = (c == 2) ? ab_ca : ant_ca;
            double min_d = opposite.rows() == 0
                               ? 20.0
                               : (opposite.rowwise() - r.atoms.row(kCA)).rowwise().norm().minCoeff();
            f[NodeFeat::kComp + 0] = min_d / 20.0;
            f[NodeFeat::kComp + 1] = (c == 2 && is_epi_ant[size_t(i)]) ? 1.0 : 0.0;
            f[NodeFeat::kComp + 2] = masked ? 1.0 : 0.0;
            f[NodeFeat::kComp + 3] = hydropathy_scaled(r.aa);

            f[NodeFeat::kSeg + c] = 1.0;
        }
    }
    return feats;
}

// Independently zeroes rows where mask is set with probability p. Pure: the
// input matrix is copied. Applied to heavy-chain framework embeddings before
// message passing during training.
inline Mat framework_dropout(const Mat& node_features, const std::vector<uint8_t>& mask,
                             double p, Rng& rng) {
    check(p >= 0.0 && p < 1.0, "framework_dropout: p must be in [0, 1)");
    check(int(mask.size()) == node_features.rows(), "framework_dropout: mask size mismatch");
    Mat out = node_features;
    std::bernoulli_distribution drop(p);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        if (mask[size_t(i)] && drop(rng)) out.row(i).setZero();
    return out;
}

// 104-wide feature vector for edge (src -> dst) of a standard type.
inline Eigen::RowVectorXd encode_edge_feature(
    int type, const graph_detail::NodeGeom& gi, const graph_detail::NodeGeom& gj,
    bool same_chain, int local_i, int local_j) {
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(EdgeFeat::kTotal);
    check(type >= 0 && type < 8, "encode_edge_feature: learnable types have no computed features");
    f[EdgeFeat::kType + type] = 1.0;

    bool positional = !(type == 1 || type == 2 || type == 6 || type == 7);
    if (positional && same_chain)
        f.segment<EdgeFeat::kRelPosW>(EdgeFeat::kRelPos) = relpos16(double(local_j - local_i));

    const Vec3 ca_j = gj.atoms.row(kCA).transpose();
    for (int a = 0; a < 4; ++a) {
        double d = (gi.atoms.row(a).transpose() - ca_j).norm();
        f.segment<16>(EdgeFeat::kRbf + 16 * a) = rbf16(d);
    }

    if (gi.has_frame && gj.has_frame) {
        Mat3 rel = gi.frame.transpose() * gj.frame;
        f.segment<4>(EdgeFeat::kQuat) = rotation_to_quaternion(rel).transpose();
        for (int a = 0; a < 4; ++a) {
            Vec3 d = ca_j - gi.atoms.row(a).transpose();
            if (d.norm() > 1e-9)
                f.segment<3>(EdgeFeat::kFrameDir + 3 * a) =
                    (gi.frame.transpose() * d.normalized()).transpose();
        }
    }
    return f;
}

// Builds the full heterogeneous graph. CDR coordinates are re-initialized
// from the framework anchors and CDR amino acids masked in both modes; the
// true complex is left untouched.
inline HeteroGraph build_graph(const Complex& complex_in, Mode mode = Mode::Train,
                               int knn_k = 8, double radial_intra = 8.0,
                               double radial_inter = 12.0) {
    check(knn_k >= 1, "build_graph: knn_k must be >= 1");
    check(complex_in.antigen.size() >= 2,
          "complex " + complex_in.id + ": needs at least 2 antigen residues");
    Complex cx = complex_in;
    cx.validate();
    reinit_cdr_coords(cx);

    HeteroGraph g;
    const int n_heavy = int(cx.heavy.size()), n_light = int(cx.light.size()),
              n_ant = int(cx.antigen.size());
    g.n_res = n_heavy + n_light + n_ant;
    g.n_nodes = g.n_res + kNumGlobalNodes + kNumVirtualNodes;

    g.node_kind.resize(size_t(g.n_nodes));
    g.chain_of.assign(size_t(g.n_nodes), -1);
    g.local_index.assign(size_t(g.n_nodes), -1);
    g.cdr_mask.assign(size_t(g.n_nodes), 0);
    g.epitope_mask.assign(size_t(g.n_nodes), 0);
    g.framework_hc_mask.assign(size_t(g.n_nodes), 0);

    const std::vector<const Chain*> chains = {&cx.heavy, &cx.light, &cx.antigen};
    int node = 0;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < int(chains[size_t(c)]->size()); ++i, ++node) {
            g.node_kind[size_t(node)] = c == 0 ? NodeKind::Heavy
                                      : c == 1 ? NodeKind::Light
                                               : NodeKind::Antigen;
            g.chain_of[size_t(node)] = c;
            g.local_index[size_t(node)] = i;
            if (c == 0) g.heavy_nodes.push_back(node);
            if (c == 1) g.light_nodes.push_back(node);
            if (c == 2) g.antigen_nodes.push_back(node);
        }
    }
    for (int k = 0; k < kNumGlobalNodes; ++k) {
        g.node_kind[size_t(node)] = NodeKind::Global;
        g.global_nodes.push_back(node++);
    }
    for (int k = 0; k < kNumVirtualNodes; ++k) {
        g.node_kind[size_t(node)] = NodeKind::Virtual;
        g.virtual_nodes.push_back(node++);
    }

    for (const CdrSpan& s : cx.cdr_spans)
        for (int i = s.start; i < s.end; ++i) {
            g.cdr_nodes.push_back(i);
            g.cdr_mask[size_t(i)] = 1;
        }
    for (int i : cx.framework_positions()) {
        g.framework_hc_nodes.push_back(i);
        g.framework_hc_mask[size_t(i)] = 1;
    }
    for (int e : cx.epitope) {
        int n = n_heavy + n_light + e;
        g.epitope_nodes.push_back(n);
        g.epitope_mask[size_t(n)] = 1;
    }

    // coordinates
    g.node_coords = Mat::Zero(g.n_nodes, 12);
    {
        int r = 0;
        for (int c = 0; c < 3; ++c)
            for (const Residue& res : *chains[size_t(c)]) {
                for (int a = 0; a < 4; ++a) g.node_coords.row(r).segment<3>(3 * a) = res.atoms.row(a);
                ++r;
            }
    }
    auto centroid_of = [&](const std::vector<int>& nodes) {
        Vec3 c = Vec3::Zero();
        for (int n : nodes) c += g.node_coords.row(n).segment<3>(3 * kCA).transpose();
        if (!nodes.empty()) c /= double(nodes.size());
        return c;
    };
    std::vector<int> all_res(size_t(g.n_res));
    std::iota(all_res.begin(), all_res.end(), 0);
    Vec3 complex_centroid = centroid_of(all_res);
    auto set_token_coords = [&](int n, const Vec3& c) {
        for (int a = 0; a < 4; ++a) g.node_coords.row(n).segment<3>(3 * a) = c.transpose();
    };
    set_token_coords(g.global_nodes[0], g.heavy_nodes.empty() ? complex_centroid : centroid_of(g.heavy_nodes));
    set_token_coords(g.global_nodes[1], g.light_nodes.empty() ? complex_centroid : centroid_of(g.light_nodes));
    set_token_coords(g.global_nodes[2], centroid_of(g.antigen_nodes));
    set_token_coords(g.virtual_nodes[0], centroid_of(g.epitope_nodes));
    set_token_coords(g.virtual_nodes[1], centroid_of(g.cdr_nodes));
    set_token_coords(g.virtual_nodes[2], complex_centroid);

    g.node_features_raw = encode_node_features(cx, mode);

    // ---- edges ----
    auto add_edge = [&](int type, int dst, int src) {
        g.edges[size_t(type)].dst.push_back(dst);
        g.edges[size_t(type)].src.push_back(src);
    };
    auto ca_of = [&](int n) { return Vec3(g.node_coords.row(n).segment<3>(3 * kCA).transpose()); };

    // radial + knn among residue nodes; KNN sorts on a quantized distance so
    // that exact geometric ties (e.g. the evenly interpolated CDR start) are
    // broken by index, stably under rigid motions of the input
    for (int i = 0; i < g.n_res; ++i) {
        std::vector<std::pair<int64_t, int>> same, other;
        for (int j = 0; j < g.n_res; ++j) {
            if (i == j) continue;
            double d = (ca_of(i) - ca_of(j)).norm();
            int64_t dq = llround(d * 1e6);
            if (g.chain_of[size_t(i)] == g.chain_of[size_t(j)]) {
                if (d < radial_intra) add_edge(0, i, j);
                same.emplace_back(dq, j);
            } else {
                if (d < radial_inter) add_edge(6, i, j);
                other.emplace_back(dq, j);
            }
        }
        auto take_knn = [&](std::vector<std::pair<int64_t, int>>& v, int type) {
            int k = std::min<int>(knn_k, int(v.size()));
            std::sort(v.begin(), v.end());
            for (int q = 0; q < k; ++q) add_edge(type, i, v[size_t(q)].second);
        };
        take_knn(same, 4);
        take_knn(other, 7);
    }

    // sequential edges within antibody chains
    auto sequential = [&](const std::vector<int>& nodes) {
        for (size_t i = 0; i + 1 < nodes.size(); ++i) {
            add_edge(3, nodes[i], nodes[i + 1]);
            add_edge(3, nodes[i + 1], nodes[i]);
        }
        for (size_t i = 0; i + 2 < nodes.size(); ++i) {
            add_edge(5, nodes[i], nodes[i + 2]);
            add_edge(5, nodes[i + 2], nodes[i]);
        }
    };
    sequential(g.heavy_nodes);
    sequential(g.light_nodes);

    // global tokens: segment membership + token clique
    const std::vector<const std::vector<int>*> segs = {&g.heavy_nodes, &g.light_nodes, &g.antigen_nodes};
    for (int t = 0; t < kNumGlobalNodes; ++t)
        for (int n : *segs[size_t(t)]) {
            add_edge(1, g.global_nodes[size_t(t)], n);
            add_edge(1, n, g.global_nodes[size_t(t)]);
        }
    for (int a : g.global_nodes)
        for (int b : g.global_nodes)
            if (a != b) add_edge(2, a, b);

    // virtual nodes: epitope and CDR cliques, both directions
    for (int v : g.virtual_nodes) {
        for (int e : g.epitope_nodes) {
            add_edge(8, v, e);
            add_edge(8, e, v);
        }
        for (int cnode : g.cdr_nodes) {
            add_edge(9, v, cnode);
            add_edge(9, cnode, v);
        }
    }

    // ---- edge features ----
    std::vector<graph_detail::NodeGeom> geom(size_t(g.n_nodes));
    {
        int r = 0;
        for (int c = 0; c < 3; ++c)
            for (const Residue& res : *chains[size_t(c)]) {
                geom[size_t(r)].has_frame = true;
                geom[size_t(r)].frame = residue_frame(res.atoms.row(kN).transpose(),
                                                      res.atoms.row(kCA).transpose(),
                                                      res.atoms.row(kC).transpose());
                geom[size_t(r)].atoms = res.atoms;
                ++r;
            }
        for (; r < g.n_nodes; ++r) {
            geom[size_t(r)].has_frame = false;
            for (int a = 0; a < 4; ++a)
                geom[size_t(r)].atoms.row(a) = g.node_coords.row(r).segment<3>(3 * a);
        }
    }
    for (int t = 0; t < kNumEdgeTypes; ++t) {
        TypedEdges& te = g.edges[size_t(t)];
        te.features = Mat::Zero(te.size(), EdgeFeat::kTotal);
        if (t >= 8) continue;  // learnable, owned by the model
        for (int e = 0; e < te.size(); ++e) {
            int i = te.dst[size_t(e)], j = te.src[size_t(e)];
            bool same_chain = g.chain_of[size_t(i)] >= 0 &&
                              g.chain_of[size_t(i)] == g.chain_of[size_t(j)];
            te.features.row(e) = encode_edge_feature(
                t, geom[size_t(i)], geom[size_t(j)], same_chain,
                g.local_index[size_t(i)], g.local_index[size_t(j)]);
        }
    }
    return g;
}

}  // namespace abloop
