#pragma once
// Mixture density sequence head: K component heads over a shared trunk,
// symmetric Potts couplings refined by two rounds of gated belief
// propagation along the chain, a mixing head, and greedy decoding.

#include <string>
#include <vector>

#include "abloop/amino.hpp"
#include "abloop/nn.hpp"
#include "abloop/tape.hpp"

namespace abloop {

struct MdnParams {
    int n_components = 4;
    int bp_rounds = 2;
    double dropout = 0.1;
    int ln_gamma = -1, ln_beta = -1;   // layer norm affine, 1 x d_in
    LinearP trunk;                      // d_in -> d_hidden
    std::vector<LinearP> comp_heads;    // K x (d_hidden -> 20)
    LinearP mixing;                     // d_hidden -> K
    std::vector<int> couplings;         // K raw 20x20 matrices
    Mlp2 bp_gate;                       // d_hidden -> 1 (sigmoid applied)
    int d_in = 0, d_hidden = 0;
};

inline MdnParams make_mdn(ParamStore& s, const std::string& name, int d_in, int d_hidden,
                          int n_components, int bp_rounds, Rng& rng) {
    check(n_components >= 1, "mdn: need at least one component");
    MdnParams p;
    p.n_components = n_components;
    p.bp_rounds = bp_rounds;
    p.d_in = d_in;
    p.d_hidden = d_hidden;
    p.ln_gamma = s.create(name + ".ln_g", 1, d_in);
    p.ln_beta = s.create(name + ".ln_b", 1, d_in);
    s.at(p.ln_gamma).value.setOnes();
    p.trunk = make_linear(s, name + ".trunk", d_in, d_hidden, rng);
    for (int k = 0; k < n_components; ++k) {
        p.comp_heads.push_back(make_linear(s, name + ".head" + std::to_string(k), d_hidden, kNumAA, rng));
        int j = s.create(name + ".coupling" + std::to_string(k), kNumAA, kNumAA);
        init_normal(s.at(j).value, 0.01, rng);
        p.couplings.push_back(j);
    }
    p.mixing = make_linear(s, name + ".mixing", d_hidden, n_components, rng);
    p.bp_gate = make_mlp2(s, name + ".gate", d_hidden, std::max(4, d_hidden / 4), 1, rng);
    return p;
}

// Two-round (by default) gated belief propagation along the position chain.
// Each round takes one belief snapshot b = softmax(logits), computes
// m = b * J_sym, and adds g_i * (m[i-1] + m[i+1]) to the logits, with zero
// messages past the chain ends.
inline Var bp_refine(Tape& t, Var logits, Var coupling_sym, Var gates, int rounds) {
    check(gates.rows == logits.rows && gates.cols == 1, "bp_refine: gate shape mismatch");
    const int L = logits.rows;
    if (L < 2 || rounds <= 0) return logits;
    Var zero_row = t.leaf(Mat::Zero(1, logits.cols));
    for (int r = 0; r < rounds; ++r) {
        Var beliefs = ad::softmax_rows(t, logits);
        Var msgs = ad::matmul(t, beliefs, coupling_sym);  // row i: message b_i J
        Var from_left = ad::concat_rows(t, {zero_row, ad::slice_rows(t, msgs, 0, L - 1)});
        Var from_right = ad::concat_rows(t, {ad::slice_rows(t, msgs, 1, L - 1), zero_row});
        Var incoming = ad::add(t, from_left, from_right);
        logits = ad::add(t, logits, ad::mul_colvec(t, incoming, gates));
    }
    return logits;
}

// Mean adjacent-pair bilinear energy (1/(L-1)) sum_i b_i^T J b_{i+1};
// defined as 0 for L < 2.
inline Var pairwise_energy(Tape& t, Var beliefs, Var coupling_sym) {
    const int L = beliefs.rows;
    if (L < 2) return t.scalar(0.0);
    Var head = ad::slice_rows(t, beliefs, 0, L - 1);
    Var tail = ad::slice_rows(t, beliefs, 1, L - 1);
    Var coupled = ad::matmul(t, head, coupling_sym);
    return ad::scale(t, ad::sum_all(t, ad::mul(t, coupled, tail)), 1.0 / double(L - 1));
}

struct MixturePrediction {
    std::vector<Var> component_logits;  // K x (L x 20), post-BP
    std::vector<Var> beliefs;           // K x (L x 20)
    std::vector<Var> couplings_sym;     // K x (20 x 20)
    Var mixing;                          // L x K, simplex rows
    Var mixture_dist;                    // L x 20, pi-weighted mixture
    Var gates;                           // L x 1
    Var trunk_features;                  // L x d_hidden
};

// Full head. `dropout_keep` is the per-position keep mask column (ones at
// inference); inverted-dropout scaling keeps activations calibrated.
inline MixturePrediction mdn_forward(TapeBinding& tb, const MdnParams& p, Var features,
                                     const Vec& dropout_keep) {
    Tape& t = *tb.tape;
    check(features.cols == p.d_in, "mdn_forward: feature width mismatch");
    Var x = ad::layer_norm_rows(t, features);
    x = ad::row_bcast_add(t, ad::mul_rowvec(t, x, tb.use(p.ln_gamma)), tb.use(p.ln_beta));
    Var h = ad::silu(t, apply_linear(tb, p.trunk, x));
    check(int(dropout_keep.size()) == features.rows, "mdn_forward: dropout mask size mismatch");
    h = ad::mul_colvec(t, h, t.leaf(dropout_keep));

    MixturePrediction out;
    out.trunk_features = h;
    out.gates = ad::sigmoid(t, apply_mlp2(tb, p.bp_gate, h));
    out.mixing = ad::softmax_rows(t, apply_linear(tb, p.mixing, h));
    for (int k = 0; k < p.n_components; ++k) {
        Var raw = tb.use(p.couplings[size_t(k)]);
        Var sym = ad::scale(t, ad::add(t, raw, ad::transpose(t, raw)), 0.5);
        out.couplings_sym.push_back(sym);
        Var logits = apply_linear(tb, p.comp_heads[size_t(k)], h);
        logits = bp_refine(t, logits, sym, out.gates, p.bp_rounds);
        out.component_logits.push_back(logits);
        out.beliefs.push_back(ad::softmax_rows(t, logits));
    }
    for (int k = 0; k < p.n_components; ++k) {
        Var weighted = ad::mul_colvec(t, out.beliefs[size_t(k)],
                                      ad::slice_cols(t, out.mixing, k, 1));
        out.mixture_dist = out.mixture_dist.valid() ? ad::add(t, out.mixture_dist, weighted)
                                                    : weighted;
    }
    return out;
}

// Greedy decoding: per position pick the highest-weight component, then its
// argmax amino acid; exact ties go to the lowest index.
inline std::vector<int> greedy_decode(const Mat& mixing, const std::vector<Mat>& component_logits) {
    const int L = int(mixing.rows());
    std::vector<int> seq(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) {
        int kstar = 0;
        for (int k = 1; k < mixing.cols(); ++k)
            if (mixing(i, k) > mixing(i, kstar)) kstar = k;
        const Mat& logits = component_logits[size_t(kstar)];
        int best = 0;
        for (int a = 1; a < kNumAA; ++a)
            if (logits(i, a) > logits(i, best)) best = a;
        seq[size_t(i)] = best;
    }
    return seq;
}

}  // namespace abloop
