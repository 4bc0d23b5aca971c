#pragma once
// CDR-to-epitope cross-attention on the Lorentz hyperboloid with a gated
// antigen bottleneck. Queries/keys are lifted onto the hyperboloid; scores
// are negative geodesic distances; values stay Euclidean.

#include <string>
#include <vector>

#include "abloop/nn.hpp"
#include "abloop/tape.hpp"

namespace abloop {

struct HypAttnParams {
    int n_heads = 4;
    double curvature = 1.0;
    double alpha0 = 0.5;
    int wq = -1, wk = -1, wv = -1;  // D x D, sliced per head
    LinearP gate;                   // W_g, b_g
    int alpha_logit = -1;           // 1 x 1
    int d_model = 0;
};

inline HypAttnParams make_hyp_attn(ParamStore& s, const std::string& name, int d_model,
                                   int n_heads, Rng& rng, double curvature = 1.0) {
    check(d_model % n_heads == 0, "attention heads must divide the model width");
    HypAttnParams p;
    p.n_heads = n_heads;
    p.curvature = curvature;
    p.d_model = d_model;
    p.wq = s.create(name + ".wq", d_model, d_model);
    p.wk = s.create(name + ".wk", d_model, d_model);
    p.wv = s.create(name + ".wv", d_model, d_model);
    init_xavier(s.at(p.wq).value, rng);
    init_xavier(s.at(p.wk).value, rng);
    init_xavier(s.at(p.wv).value, rng);
    p.gate = make_linear(s, name + ".gate", d_model, d_model, rng);
    p.alpha_logit = s.create(name + ".alpha_logit", 1, 1);  // sigmoid(0) * 2*alpha0 = alpha0
    return p;
}

// (x0, v) with x0 = sqrt(1/c + |v|^2); satisfies <x,x>_L = -1/c.
inline Var lift_to_hyperboloid(Tape& t, Var v, double c) {
    check(c > 0, "curvature must be positive");
    Var sq = ad::row_sum(t, ad::square(t, v));
    Var x0 = ad::sqrt_(t, ad::add_const(t, sq, Mat::Constant(v.rows, 1, 1.0 / c)));
    return ad::concat_cols(t, {x0, v});
}

// Pairwise geodesic distances between two stacks of hyperboloid points:
// d(q, k) = arccosh(-c <q,k>_L) / sqrt(c), argument clamped before arccosh.
inline Var lorentz_distance(Tape& t, Var q, Var k, double c) {
    check(q.cols == k.cols && q.cols >= 2, "lorentz_distance: dimension mismatch");
    int d = q.cols - 1;
    Var spatial = ad::matmul_nt(t, ad::slice_cols(t, q, 1, d), ad::slice_cols(t, k, 1, d));
    Var s0 = ad::matmul_nt(t, ad::slice_cols(t, q, 0, 1), ad::slice_cols(t, k, 0, 1));
    Var mink = ad::sub(t, spatial, s0);             // <q,k>_L
    Var arg = ad::scale(t, mink, -c);               // -c<q,k>_L >= 1 on the manifold
    return ad::scale(t, ad::arccosh_clamped(t, arg), 1.0 / std::sqrt(c));
}

struct AttnOut {
    Var out;                 // L x D
    std::vector<Var> alpha;  // per head, L x E attention rows
};

// Multi-head cross-attention; hyperbolic scores by default, plain scaled
// dot products when `hyperbolic` is false (the ablation configuration).
inline AttnOut cross_attend(TapeBinding& tb, const HypAttnParams& p, Var h_cdr, Var h_epi,
                            bool hyperbolic = true) {
    Tape& t = *tb.tape;
    check(h_cdr.rows >= 1, "cross_attend: no CDR positions");
    check(h_epi.rows >= 1, "cross_attend: empty epitope");
    check(h_cdr.cols == p.d_model && h_epi.cols == p.d_model, "cross_attend: width mismatch");
    const int dh = p.d_model / p.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));

    Var q_all = ad::matmul(t, h_cdr, tb.use(p.wq));
    Var k_all = ad::matmul(t, h_epi, tb.use(p.wk));
    Var v_all = ad::matmul(t, h_epi, tb.use(p.wv));

    AttnOut res;
    std::vector<Var> heads;
    for (int h = 0; h < p.n_heads; ++h) {
        Var q = ad::slice_cols(t, q_all, h * dh, dh);
        Var k = ad::slice_cols(t, k_all, h * dh, dh);
        Var v = ad::slice_cols(t, v_all, h * dh, dh);
        Var scores;
        if (hyperbolic) {
            Var ql = lift_to_hyperboloid(t, q, p.curvature);
            Var kl = lift_to_hyperboloid(t, k, p.curvature);
            scores = ad::scale(t, lorentz_distance(t, ql, kl, p.curvature), -inv_sqrt);
        } else {
            scores = ad::scale(t, ad::matmul_nt(t, q, k), inv_sqrt);
        }
        Var alpha = ad::softmax_rows(t, scores);
        res.alpha.push_back(alpha);
        heads.push_back(ad::matmul(t, alpha, v));
    }
    res.out = ad::concat_cols(t, heads);
    return res;
}

struct BottleneckOut {
    Var fused;  // L x 2D, [h_tilde | o]
    Var gate;   // L x D
    Var alpha;  // 1 x 1
};

// h~ = alpha*(h .* g) + (1-alpha)*h with g = sigmoid(W_g o + b_g) and
// alpha = sigmoid(alpha_logit) * 2*alpha0.
inline BottleneckOut gated_bottleneck(TapeBinding& tb, const HypAttnParams& p, Var h_cdr, Var o) {
    Tape& t = *tb.tape;
    BottleneckOut res;
    res.gate = ad::sigmoid(t, apply_linear(tb, p.gate, o));
    res.alpha = ad::scale(t, ad::sigmoid(t, tb.use(p.alpha_logit)), 2.0 * p.alpha0);
    Var mixed = ad::mul_scalar_var(t, ad::mul(t, h_cdr, res.gate), res.alpha);
    Var one_minus = ad::sub(t, t.scalar(1.0), res.alpha);
    Var passthrough = ad::mul_scalar_var(t, h_cdr, one_minus);
    res.fused = ad::concat_cols(t, {ad::add(t, mixed, passthrough), o});
    return res;
}

}  // namespace abloop
