#pragma once
// Relation-aware VN-EGNN: dual-path feature fusion, typed message passing
// with Gram-matrix radial features, per-type aggregation and equivariant
// coordinate updates.

#include <string>
#include <vector>

#include "abloop/graph.hpp"
#include "abloop/nn.hpp"
#include "abloop/tape.hpp"

namespace abloop {

// Scale applied to the Gram radial block before it enters the message MLP;
// keeps squared-distance magnitudes (hundreds of A^2) in the unit range the
// other message inputs live in.
inline constexpr double kGramScale = 0.01;

// Gram matrix of two 4x3 displacement blocks, flattened row-major:
// entry (a, b) = <dx_i row a, dx_j row b>. E(3)-invariant.
inline Eigen::RowVectorXd gram_feature(const Eigen::Matrix<double, 4, 3>& dxi,
                                       const Eigen::Matrix<double, 4, 3>& dxj) {
    Eigen::RowVectorXd out(16);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) out[4 * a + b] = dxi.row(a).dot(dxj.row(b));
    return out;
}

struct EgnnLayerParams {
    Mlp2 msg;                       // [h_i, h_j, gram16, e_ij] -> d_hidden
    std::vector<int> type_proj;     // 10 x (d_hidden x d_hidden)
    Mlp2 node;                      // [h_i, agg] -> d_out
    int res_proj = -1;              // widening projection, -1 = identity
    std::vector<Mlp2> coord_gate;   // 10 x (d_hidden -> 1)
    int h_in = 0, h_out = 0, d_msg = 0;
};

struct EncoderParams {
    // dual-path fusion
    Mlp2 fuse_dense, fuse_sparse;
    LinearP fuse_proj;
    int epi_embed = -1;      // 1 x d_embed, zero-initialized
    int global_tokens = -1;  // 3 x d_embed
    int virtual_tokens = -1;
    int vn_edge_feat8 = -1;  // 1 x 104 learnable edge features
    int vn_edge_feat9 = -1;
    std::vector<EgnnLayerParams> layers;
    int d_embed = 0, d_hidden = 0;
};

inline EgnnLayerParams make_egnn_layer(ParamStore& s, const std::string& name, int h_in,
                                       int h_out, Rng& rng) {
    EgnnLayerParams p;
    p.h_in = h_in;
    p.h_out = h_out;
    p.d_msg = h_out;
    int msg_in = 2 * h_in + 16 + EdgeFeat::kTotal;
    p.msg = make_mlp2(s, name + ".msg", msg_in, h_out, h_out, rng);
    for (int t = 0; t < kNumEdgeTypes; ++t) {
        int w = s.create(name + ".type" + std::to_string(t), h_out, h_out);
        init_xavier(s.at(w).value, rng);
        p.type_proj.push_back(w);
    }
    p.node = make_mlp2(s, name + ".node", h_in + h_out, h_out, h_out, rng);
    if (h_in != h_out) {
        p.res_proj = s.create(name + ".res", h_in, h_out);
        init_xavier(s.at(p.res_proj).value, rng);
    }
    for (int t = 0; t < kNumEdgeTypes; ++t) {
        Mlp2 g = make_mlp2(s, name + ".coord" + std::to_string(t), h_out,
                           std::max(2, h_out / 2), 1, rng);
        // small nonzero output layer: keeps the coordinate stream active at
        // init without destabilizing early training
        init_normal(s.at(g.l2.w).value, 0.05, rng);
        p.coord_gate.push_back(g);
    }
    return p;
}

inline EncoderParams make_encoder(ParamStore& s, int d_embed, int d_hidden, int n_layers,
                                  Rng& rng) {
    EncoderParams p;
    p.d_embed = d_embed;
    p.d_hidden = d_hidden;
    p.fuse_dense = make_mlp2(s, "enc.fuse_dense", NodeFeat::kDenseW, d_embed, d_embed, rng);
    p.fuse_sparse = make_mlp2(s, "enc.fuse_sparse", NodeFeat::kCompW, 16, 16, rng);
    p.fuse_proj = make_linear(s, "enc.fuse_proj", d_embed + 16, d_embed, rng);
    p.epi_embed = s.create("enc.epi_embed", 1, d_embed);  // zero-init
    p.global_tokens = s.create("enc.global_tokens", kNumGlobalNodes, d_embed);
    p.virtual_tokens = s.create("enc.virtual_tokens", kNumVirtualNodes, d_embed);
    init_normal(s.at(p.global_tokens).value, 0.1, rng);
    init_normal(s.at(p.virtual_tokens).value, 0.1, rng);
    p.vn_edge_feat8 = s.create("enc.vn_edge8", 1, EdgeFeat::kTotal);
    p.vn_edge_feat9 = s.create("enc.vn_edge9", 1, EdgeFeat::kTotal);
    init_normal(s.at(p.vn_edge_feat8).value, 0.1, rng);
    init_normal(s.at(p.vn_edge_feat9).value, 0.1, rng);
    for (int l = 0; l < n_layers; ++l)
        p.layers.push_back(make_egnn_layer(s, "enc.layer" + std::to_string(l),
                                           l == 0 ? d_embed : d_hidden, d_hidden, rng));
    return p;
}

struct EncoderState {
    Var h;       // N x d
    Var coords;  // N x 12
};

// One relation-aware EGNN layer. Empty neighborhoods contribute zero to both
// the feature aggregate and the coordinate update.
inline EncoderState layer_forward(TapeBinding& tb, const HeteroGraph& g,
                                  const EgnnLayerParams& p, EncoderState state,
                                  Var vn_edge8, Var vn_edge9) {
    Tape& t = *tb.tape;
    check(state.h.cols == p.h_in, "layer_forward: state width mismatch");
    const int n = g.n_nodes;

    Var agg;     // N x d_msg, sum over types of W_t * scatter_add(m)
    Var cdelta;  // N x 3
    for (int ty = 0; ty < kNumEdgeTypes; ++ty) {
        const TypedEdges& te = g.edges[size_t(ty)];
        if (te.size() == 0) continue;
        Var hd = ad::gather_rows(t, state.h, te.dst);
        Var hs = ad::gather_rows(t, state.h, te.src);
        Var d = ad::sub(t, ad::gather_rows(t, state.coords, te.dst),
                        ad::gather_rows(t, state.coords, te.src));
        Var gram = ad::scale(t, ad::rowwise_gram(t, d, 4), kGramScale);
        Var e;
        if (ty == 8) {
            e = ad::tile_rows(t, vn_edge8, te.size());
        } else if (ty == 9) {
            e = ad::tile_rows(t, vn_edge9, te.size());
        } else {
            e = t.leaf(te.features);
        }
        Var msg_in = ad::concat_cols(t, {hd, hs, gram, e});
        Var m = apply_mlp2(tb, p.msg, msg_in, /*act_out=*/true);

        Var summed = ad::scatter_add_rows(t, m, te.dst, n);
        Var typed = ad::matmul(t, summed, tb.use(p.type_proj[size_t(ty)]));
        agg = agg.valid() ? ad::add(t, agg, typed) : typed;

        // neighbor-mean coordinate shift gated by a per-edge scalar
        Var gate = apply_mlp2(tb, p.coord_gate[size_t(ty)], m);
        Var dca = ad::slice_cols(t, d, 3 * kCA, 3);
        Var shift = ad::scatter_add_rows(t, ad::mul_colvec(t, dca, gate), te.dst, n);
        Mat recip = Mat::Zero(n, 1);
        for (int dst : te.dst) recip(dst, 0) += 1.0;
        for (int i = 0; i < n; ++i)
            if (recip(i, 0) > 0) recip(i, 0) = 1.0 / recip(i, 0);
        Var mean_shift = ad::mul_colvec(t, shift, t.leaf(recip));
        cdelta = cdelta.valid() ? ad::add(t, cdelta, mean_shift) : mean_shift;
    }
    if (!agg.valid()) agg = t.leaf(Mat::Zero(n, p.d_msg));

    Var node_in = ad::concat_cols(t, {state.h, agg});
    Var upd = apply_mlp2(tb, p.node, node_in);
    Var res = p.res_proj >= 0 ? ad::matmul(t, state.h, tb.use(p.res_proj)) : state.h;
    EncoderState out;
    out.h = ad::add(t, res, upd);
    out.coords = cdelta.valid()
                     ? ad::add(t, state.coords, ad::tile_cols_blocks(t, cdelta, 4))
                     : state.coords;
    return out;
}

// Dual-path fusion of raw residue features into d_embed node embeddings,
// token embeddings appended; the per-node keep mask implements framework
// dropout (all-ones at inference).
inline EncoderState fuse_inputs(TapeBinding& tb, const HeteroGraph& g, const EncoderParams& p,
                                const Vec& keep_mask) {
    Tape& t = *tb.tape;
    const Mat& raw = g.node_features_raw;
    Mat dense(raw.rows(), NodeFeat::kDenseW);
    dense << raw.middleCols(0, NodeFeat::kComp), raw.middleCols(NodeFeat::kSeg, NodeFeat::kSegW);
    Mat sparse = raw.middleCols(NodeFeat::kComp, NodeFeat::kCompW);

    Var d = apply_mlp2(tb, p.fuse_dense, t.leaf(dense), true);
    Var sp = apply_mlp2(tb, p.fuse_sparse, t.leaf(sparse), true);
    Var fused = apply_linear(tb, p.fuse_proj, ad::concat_cols(t, {d, sp}));

    Mat epi_col = Mat::Zero(g.n_res, 1);
    for (int e : g.epitope_nodes) epi_col(e, 0) = 1.0;
    Var epi = ad::mul_colvec(t, ad::tile_rows(t, tb.use(p.epi_embed), g.n_res), t.leaf(epi_col));
    fused = ad::add(t, fused, epi);

    Var h0 = ad::concat_rows(t, {fused, tb.use(p.global_tokens), tb.use(p.virtual_tokens)});
    check(int(keep_mask.size()) == g.n_nodes, "fuse_inputs: keep mask size mismatch");
    h0 = ad::mul_colvec(t, h0, t.leaf(keep_mask));

    EncoderState st;
    st.h = h0;
    st.coords = t.leaf(g.node_coords);
    return st;
}

// Full encoder: fusion followed by the layer stack. The coordinate stream is
// centered on the residue-CA centroid internally and restored on output, so
// message magnitudes depend only on the complex's own extent.
inline EncoderState encode(TapeBinding& tb, const HeteroGraph& g, const EncoderParams& p,
                           const Vec& keep_mask) {
    Tape& t = *tb.tape;
    EncoderState st = fuse_inputs(tb, g, p, keep_mask);

    Eigen::RowVector3d centroid = Eigen::RowVector3d::Zero();
    for (int i = 0; i < g.n_res; ++i) centroid += g.node_coords.row(i).segment<3>(3 * kCA);
    if (g.n_res > 0) centroid /= double(g.n_res);
    Mat shift(g.n_nodes, 12);
    for (int a = 0; a < 4; ++a) shift.middleCols(3 * a, 3) = centroid.replicate(g.n_nodes, 1);
    st.coords = ad::add_const(t, st.coords, -shift);

    Var e8 = tb.use(p.vn_edge_feat8), e9 = tb.use(p.vn_edge_feat9);
    for (const EgnnLayerParams& lp : p.layers) st = layer_forward(tb, g, lp, st, e8, e9);

    st.coords = ad::add_const(t, st.coords, shift);
    return st;
}

}  // namespace abloop
