// Graph construction: edge taxonomy, node/edge features, dropout, and the
// rigid-motion invariance of everything built here.

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "abloop/graph.hpp"
#include "abloop/synthetic.hpp"
#include "helpers.hpp"

using namespace abloop;

namespace {

Residue straight_residue(int aa, double x, double y = 0, double z = 0) {
    return synth::make_residue(aa, Vec3(x, y, z), Vec3(1, 0, 0), Vec3(0, 1, 0));
}

// Heavy chain along x at 3.8 A spacing, antigen pair far away on demand.
Complex line_complex(int n_heavy, double antigen_offset = 100.0) {
    Complex cx;
    cx.id = "line";
    for (int i = 0; i < n_heavy; ++i) cx.heavy.push_back(straight_residue(i % kNumAA, 3.8 * i));
    cx.antigen.push_back(straight_residue(2, antigen_offset, 0, 0));
    cx.antigen.push_back(straight_residue(3, antigen_offset + 3.8, 0, 0));
    cx.epitope = {0, 1};
    if (n_heavy >= 3) cx.cdr_spans = {{"H3", 1, 2}};
    cx.validate();
    return cx;
}

std::set<std::pair<int, int>> edge_set(const TypedEdges& te) {
    std::set<std::pair<int, int>> s;
    for (int e = 0; e < te.size(); ++e) s.insert({te.dst[size_t(e)], te.src[size_t(e)]});
    return s;
}

Complex apply_motion(const Complex& cx, const RigidMotion& m) {
    Complex out = cx;
    auto move_chain = [&](Chain& chain) {
        for (Residue& r : chain)
            for (int a = 0; a < 4; ++a) r.atoms.row(a) = m.apply(r.atoms.row(a).transpose()).transpose();
    };
    move_chain(out.heavy);
    move_chain(out.light);
    move_chain(out.antigen);
    return out;
}

}  // namespace

TEST_CASE("sequential edge types on a 3-residue heavy chain") {
    auto g = build_graph(line_complex(3));
    REQUIRE(edge_set(g.edges[3]) == std::set<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}});
    REQUIRE(edge_set(g.edges[5]) == std::set<std::pair<int, int>>{{0, 2}, {2, 0}});
}

TEST_CASE("radial and knn inter-chain edges are independent") {
    auto g = build_graph(line_complex(6, 500.0));
    REQUIRE(g.edges[6].size() == 0);  // everything farther than 12 A across chains
    // every residue still has K nearest from the other chain (capped by size)
    for (int i = 0; i < 6; ++i) {
        int cnt = 0;
        for (int e = 0; e < g.edges[7].size(); ++e) cnt += g.edges[7].dst[size_t(e)] == i;
        REQUIRE(cnt == 2);  // antigen has 2 residues
    }
}

TEST_CASE("type-0 edges equal the brute-force intra-chain distance filter") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 31;
    auto data = generate(cfg);
    auto g = build_graph(data.complexes[0]);

    std::set<std::pair<int, int>> oracle;
    for (int i = 0; i < g.n_res; ++i)
        for (int j = 0; j < g.n_res; ++j) {
            if (i == j || g.chain_of[size_t(i)] != g.chain_of[size_t(j)]) continue;
            Vec3 ci = g.node_coords.row(i).segment<3>(3 * kCA).transpose();
            Vec3 cj = g.node_coords.row(j).segment<3>(3 * kCA).transpose();
            if ((ci - cj).norm() < 8.0) oracle.insert({i, j});
        }
    REQUIRE(edge_set(g.edges[0]) == oracle);
    REQUIRE(!oracle.empty());
}

TEST_CASE("graph structural invariants") {
    GenConfig cfg;
    cfg.n_complexes = 2;
    cfg.seed = 17;
    auto data = generate(cfg);
    for (const auto& cx : data.complexes) {
        auto g = build_graph(cx);
        REQUIRE(g.global_nodes.size() == 3);
        REQUIRE(g.virtual_nodes.size() == 3);
        for (int t = 0; t < kNumEdgeTypes; ++t) {
            REQUIRE(g.edges[size_t(t)].features.cols() == 104);
            REQUIRE(edge_set(g.edges[size_t(t)]).size() == size_t(g.edges[size_t(t)].size()));
        }
        // types 3 and 5 never touch the antigen chain
        for (int t : {3, 5})
            for (int e = 0; e < g.edges[size_t(t)].size(); ++e) {
                REQUIRE(g.chain_of[size_t(g.edges[size_t(t)].dst[size_t(e)])] != 2);
                REQUIRE(g.chain_of[size_t(g.edges[size_t(t)].src[size_t(e)])] != 2);
            }
        // positional block zero for types 1, 2, 6, 7
        for (int t : {1, 2, 6, 7})
            if (g.edges[size_t(t)].size() > 0)
                REQUIRE(g.edges[size_t(t)].features.middleCols(EdgeFeat::kRelPos, EdgeFeat::kRelPosW)
                            .cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("build_graph rejects complexes with fewer than 2 antigen residues") {
    Complex cx = line_complex(4);
    cx.antigen.resize(1);
    cx.epitope = {0};
    REQUIRE_THROWS_WITH(build_graph(cx), Catch::Matchers::ContainsSubstring("antigen"));
}

TEST_CASE("CDR amino-acid one-hot is masked") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 9;
    auto data = generate(cfg);
    const Complex& cx = data.complexes[0];
    Mat f = encode_node_features(cx, Mode::Train);
    for (int p : cx.cdr_positions())
        REQUIRE(f.row(p).segment<NodeFeat::kAAW>(NodeFeat::kAA).cwiseAbs().sum() == 0.0);
    for (int p : cx.framework_positions())
        REQUIRE(f.row(p).segment<NodeFeat::kAAW>(NodeFeat::kAA).sum() == 1.0);
}

TEST_CASE("identical local geometry gives identical feature blocks") {
    // interior residues of a uniform straight chain differ only by position
    Complex cx = line_complex(8, 60.0);
    cx.cdr_spans.clear();
    for (Residue& r : cx.heavy) r.aa = 4;
    Mat f = encode_node_features(cx);
    // geometry blocks: bonds, angles, frame dirs (cols 16..84)
    REQUIRE((f.row(2).segment(16, 69) - f.row(4).segment(16, 69)).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((f.row(2).segment<20>(NodeFeat::kAA) - f.row(4).segment<20>(NodeFeat::kAA)).cwiseAbs().maxCoeff() == 0.0);
    // position embeddings differ
    REQUIRE((f.row(2).segment<16>(NodeFeat::kPos) - f.row(4).segment<16>(NodeFeat::kPos)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("bond-length RBF matches the closed form") {
    Complex cx = line_complex(4, 30.0);
    Mat f = encode_node_features(cx);
    double d = (cx.heavy[0].atoms.row(kN) - cx.heavy[0].atoms.row(kCA)).norm();
    const double spacing = 20.0 / 15.0;
    for (int k = 0; k < 16; ++k) {
        double mu = spacing * k;
        double expect = std::exp(-(d - mu) * (d - mu) / (2 * spacing * spacing));
        REQUIRE(f(0, NodeFeat::kBond + k) == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("edge reversal negates relative position and conjugates the quaternion") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 21;
    auto data = generate(cfg);
    auto g = build_graph(data.complexes[0]);
    const TypedEdges& te = g.edges[3];
    REQUIRE(te.size() > 0);
    // locate an edge and its reverse
    int fwd = 0, rev = -1;
    for (int e = 0; e < te.size(); ++e)
        if (te.dst[size_t(e)] == te.src[0] && te.src[size_t(e)] == te.dst[0]) rev = e;
    REQUIRE(rev >= 0);
    auto ffwd = te.features.row(fwd), frev = te.features.row(rev);
    REQUIRE((ffwd.segment<16>(EdgeFeat::kRelPos) + frev.segment<16>(EdgeFeat::kRelPos))
                .cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(ffwd[EdgeFeat::kQuat] == Catch::Approx(frev[EdgeFeat::kQuat]).margin(1e-9));
    for (int k = 1; k < 4; ++k)
        REQUIRE(ffwd[EdgeFeat::kQuat + k] == Catch::Approx(-frev[EdgeFeat::kQuat + k]).margin(1e-9));
}

TEST_CASE("aligned frames give the identity quaternion") {
    // translated copies have parallel frames
    Complex cx = line_complex(4, 40.0);
    cx.cdr_spans.clear();
    auto g = build_graph(cx);
    const TypedEdges& te = g.edges[3];
    REQUIRE(te.size() > 0);
    REQUIRE(te.features(0, EdgeFeat::kQuat) == Catch::Approx(1.0).margin(1e-9));
    for (int k = 1; k < 4; ++k)
        REQUIRE(te.features(0, EdgeFeat::kQuat + k) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("all node and edge features are rigid-motion invariant") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 77;
    auto data = generate(cfg);
    Rng rng(4);
    auto g0 = build_graph(data.complexes[0]);
    for (int trial = 0; trial < 3; ++trial) {
        RigidMotion m = random_rigid_motion(rng);
        auto g1 = build_graph(apply_motion(data.complexes[0], m));
        REQUIRE((g0.node_features_raw - g1.node_features_raw).cwiseAbs().maxCoeff() < 1e-8);
        for (int t = 0; t < kNumEdgeTypes; ++t) {
            REQUIRE(g0.edges[size_t(t)].dst == g1.edges[size_t(t)].dst);
            REQUIRE(g0.edges[size_t(t)].src == g1.edges[size_t(t)].src);
            if (g0.edges[size_t(t)].size() > 0)
                REQUIRE((g0.edges[size_t(t)].features - g1.edges[size_t(t)].features)
                            .cwiseAbs().maxCoeff() < 1e-8);
        }
        // coordinates co-transform
        REQUIRE((m.apply_packed(g0.node_coords) - g1.node_coords).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("build_graph is deterministic") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 55;
    auto data = generate(cfg);
    auto g1 = build_graph(data.complexes[0]);
    auto g2 = build_graph(data.complexes[0]);
    REQUIRE(g1.node_features_raw == g2.node_features_raw);
    for (int t = 0; t < kNumEdgeTypes; ++t) REQUIRE(g1.edges[size_t(t)].features == g2.edges[size_t(t)].features);
}

TEST_CASE("framework dropout") {
    GenConfig cfg;
    cfg.n_complexes = 1;
    cfg.seed = 3;
    auto data = generate(cfg);
    auto g = build_graph(data.complexes[0]);
    Mat x = Mat::Ones(g.n_res, 5);
    std::vector<uint8_t> mask(g.framework_hc_mask.begin(), g.framework_hc_mask.begin() + g.n_res);

    Rng rng(1);
    SECTION("p = 0 is the identity") {
        REQUIRE(framework_dropout(x, mask, 0.0, rng) == x);
    }
    SECTION("p near 1 zeroes only framework rows") {
        Mat y = framework_dropout(x, mask, 1.0 - 1e-12, rng);
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            if (mask[size_t(i)]) {
                REQUIRE(y.row(i).cwiseAbs().sum() == 0.0);
            } else {
                REQUIRE(y.row(i) == x.row(i));
            }
        }
    }
    SECTION("empirical rate matches p = 0.3 within 0.02") {
        int n_fw = 0;
        for (uint8_t m : mask) n_fw += m;
        REQUIRE(n_fw > 0);
        long zeroed = 0, draws = 10000;
        for (long trial = 0; trial < draws; ++trial) {
            Mat y = framework_dropout(x, mask, 0.3, rng);
            for (Eigen::Index i = 0; i < y.rows(); ++i)
                if (mask[size_t(i)] && y.row(i).cwiseAbs().sum() == 0.0) ++zeroed;
        }
        double rate = double(zeroed) / double(draws * n_fw);
        REQUIRE(rate == Catch::Approx(0.3).margin(0.02));
    }
}
