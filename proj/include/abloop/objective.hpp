#pragma once
// Loss terms: aMCL-weighted sequence loss with pairwise Potts energy,
// GDPP spectral diversity, batch InfoNCE antigen classification, Huber
// coordinate loss, shadow paratope loss, and the assembled objective.

#include <string>
#include <vector>

#include "abloop/amino.hpp"
#include "abloop/complex.hpp"
#include "abloop/mdn.hpp"
#include "abloop/nn.hpp"
#include "abloop/tape.hpp"

namespace abloop {

struct LossWeights {
    double alpha = 1.301;       // coordinate loss
    double delta = 0.664;       // shadow paratope loss
    double epsilon = 0.05;      // GDPP loss
    double lambda_cls = 0.2;    // antigen classification loss
    double lambda_pair = 0.3;   // pairwise energy inside component losses
    double fw_dropout_p = 0.3;  // heavy-chain framework dropout

    void validate() const {
        check(alpha >= 0 && delta >= 0 && epsilon >= 0 && lambda_cls >= 0 && lambda_pair >= 0,
              "loss weights must be nonnegative");
        check(fw_dropout_p >= 0 && fw_dropout_p < 1, "fw_dropout_p must be in [0, 1)");
    }
};

struct AnnealSchedule {
    double tau_start = 2.0;
    double tau_end = 0.1;
    int anneal_epochs = 20;

    void validate() const {
        check(tau_start > tau_end && tau_end > 0, "anneal: need tau_start > tau_end > 0");
        check(anneal_epochs >= 1, "anneal: anneal_epochs must be >= 1");
    }
};

// Exponential interpolation tau_start * (tau_end/tau_start)^(t/T), clamped
// at tau_end once t reaches the anneal horizon.
inline double tau_at(int epoch, const AnnealSchedule& s) {
    check(epoch >= 0, "tau_at: epoch must be >= 0");
    if (epoch >= s.anneal_epochs) return s.tau_end;
    return s.tau_start * std::pow(s.tau_end / s.tau_start, double(epoch) / double(s.anneal_epochs));
}

// Boltzmann weights over component losses, max-shift stabilized. Treated as
// constants in the backward pass.
inline Vec amcl_weights(const Vec& losses, double tau) {
    check(tau > 0, "amcl_weights: tau must be positive");
    check(losses.allFinite(), "amcl_weights: non-finite component loss");
    Vec z = -losses / tau;
    double m = z.maxCoeff();
    Vec w = (z.array() - m).exp();
    return w / w.sum();
}

struct SequenceLoss {
    Var total;                         // scalar
    std::vector<Var> component_losses; // K scalars (CE + lambda_pair * E_pair)
    Vec weights;                       // detached aMCL weights
    int winner = 0;                    // argmax weight, lowest index on ties
};

// Per-component cross-entropy (mean over positions) plus pairwise energy,
// combined with detached aMCL weights.
inline SequenceLoss sequence_loss(Tape& t, const MixturePrediction& pred,
                                  const std::vector<int>& target, double tau,
                                  double lambda_pair) {
    const int K = int(pred.component_logits.size());
    check(!target.empty(), "sequence_loss: empty target");
    SequenceLoss out;
    Vec values(K);
    for (int k = 0; k < K; ++k) {
        Var logp = ad::log_softmax_rows(t, pred.component_logits[size_t(k)]);
        Var ce = ad::neg(t, ad::mean_all(t, ad::pick_per_row(t, logp, target)));
        Var ep = pairwise_energy(t, pred.beliefs[size_t(k)], pred.couplings_sym[size_t(k)]);
        Var lk = ad::add(t, ce, ad::scale(t, ep, lambda_pair));
        out.component_losses.push_back(lk);
        values[k] = t.scalar_val(lk);
    }
    out.weights = amcl_weights(values, tau);
    out.winner = 0;
    for (int k = 1; k < K; ++k)
        if (out.weights[k] > out.weights[out.winner]) out.winner = k;
    for (int k = 0; k < K; ++k) {
        Var term = ad::scale(t, out.component_losses[size_t(k)], out.weights[k]);
        out.total = out.total.valid() ? ad::add(t, out.total, term) : term;
    }
    return out;
}

// || eigenvalues(P P^T + eps I) - eigenvalues(T T^T + eps I) ||_2^2, with
// spectra paired in sorted order.
inline Var gdpp_loss(Tape& t, Var p_active, const Mat& target_onehot, double eps_jitter = 1e-4) {
    check(p_active.rows == int(target_onehot.rows()) && p_active.cols == int(target_onehot.cols()),
          "gdpp_loss: shape mismatch");
    const int L = p_active.rows;
    Mat eye = eps_jitter * Mat::Identity(L, L);
    Var k_pred = ad::add_const(t, ad::matmul_nt(t, p_active, p_active), eye);
    Var ev_pred = ad::sym_eigvals(t, k_pred);  // ascending
    Eigen::SelfAdjointEigenSolver<Mat> es(target_onehot * target_onehot.transpose() + eye);
    check(es.info() == Eigen::Success, "gdpp_loss: target eigendecomposition failed");
    Var ev_true = t.leaf(es.eigenvalues());
    return ad::sum_all(t, ad::square(t, ad::sub(t, ev_pred, ev_true)));
}

struct ClsHead {
    int aa_embed = -1;  // 20 x D
    Mlp2 mlp;           // D -> D
    int d_model = 0;
};

inline ClsHead make_cls_head(ParamStore& s, const std::string& name, int d_model, Rng& rng) {
    ClsHead h;
    h.d_model = d_model;
    h.aa_embed = s.create(name + ".aa_embed", kNumAA, d_model);
    init_normal(s.at(h.aa_embed).value, 0.1, rng);
    h.mlp = make_mlp2(s, name + ".mlp", d_model, d_model, d_model, rng);
    return h;
}

// Soft-sequence embedding c_i = MLP(mean_j p_i[j] E_AA) for one complex.
inline Var soft_sequence_embed(TapeBinding& tb, const ClsHead& h, Var pred_dist) {
    Tape& t = *tb.tape;
    Var pooled = ad::col_mean(t, ad::matmul(t, pred_dist, tb.use(h.aa_embed)));
    return apply_mlp2(tb, h.mlp, pooled);
}

// Batch InfoNCE: -1/B sum_i log softmax_k(c_i . a_k)[i]. Zero for B < 2.
inline Var antigen_cls_loss(TapeBinding& tb, const ClsHead& h,
                            const std::vector<Var>& pred_dists,
                            const std::vector<Var>& antigen_embeds) {
    Tape& t = *tb.tape;
    const int B = int(pred_dists.size());
    check(antigen_embeds.size() == pred_dists.size(), "antigen_cls_loss: batch size mismatch");
    if (B < 2) return t.scalar(0.0);
    std::vector<Var> cs;
    cs.reserve(size_t(B));
    for (int i = 0; i < B; ++i) cs.push_back(soft_sequence_embed(tb, h, pred_dists[size_t(i)]));
    Var c = ad::concat_rows(t, cs);
    Var a = ad::concat_rows(t, antigen_embeds);
    Var scores = ad::matmul_nt(t, c, a);
    Var logp = ad::log_softmax_rows(t, scores);
    std::vector<int> diag(static_cast<size_t>(B));
    std::iota(diag.begin(), diag.end(), 0);
    return ad::scale(t, ad::sum_all(t, ad::pick_per_row(t, logp, diag)), -1.0 / double(B));
}

// Smooth-l1 with transition beta, mean over all coordinate entries.
inline Var coord_loss(Tape& t, Var pred, const Mat& target, double beta = 1.0) {
    check(pred.rows == int(target.rows()) && pred.cols == int(target.cols()),
          "coord_loss: shape mismatch");
    return ad::mean_all(t, ad::huber(t, ad::add_const(t, pred, -target), beta));
}

// Epitope CA coordinates within `cutoff` of any true CDR CA.
inline Mat shadow_epitope_set(const Mat& true_cdr_ca, const Mat& epitope_ca,
                              double cutoff = kContactCutoff) {
    std::vector<int> keep;
    for (Eigen::Index j = 0; j < epitope_ca.rows(); ++j)
        for (Eigen::Index k = 0; k < true_cdr_ca.rows(); ++k)
            if ((epitope_ca.row(j) - true_cdr_ca.row(k)).norm() < cutoff) {
                keep.push_back(int(j));
                break;
            }
    Mat out(Eigen::Index(keep.size()), 3);
    for (size_t i = 0; i < keep.size(); ++i) out.row(Eigen::Index(i)) = epitope_ca.row(keep[i]);
    return out;
}

// (1/(|E| L)) sum_j sum_k | ||x^_k - x_j|| - ||x_k - x_j|| |; zero when the
// epitope set is empty.
inline Var shadow_loss(Tape& t, Var pred_cdr_ca, const Mat& true_cdr_ca, const Mat& epi_ca) {
    const int L = pred_cdr_ca.rows, M = int(epi_ca.rows());
    check(int(true_cdr_ca.rows()) == L, "shadow_loss: CDR length mismatch");
    if (M == 0 || L == 0) return t.scalar(0.0);
    std::vector<int> kidx;
    kidx.reserve(size_t(L * M));
    Mat epi_rep(L * M, 3), true_d(L * M, 1);
    int r = 0;
    for (int k = 0; k < L; ++k)
        for (int j = 0; j < M; ++j, ++r) {
            kidx.push_back(k);
            epi_rep.row(r) = epi_ca.row(j);
            true_d(r, 0) = (true_cdr_ca.row(k) - epi_ca.row(j)).norm();
        }
    Var pred_pairs = ad::gather_rows(t, pred_cdr_ca, kidx);
    Var dist = ad::row_norms(t, ad::add_const(t, pred_pairs, -epi_rep));
    return ad::mean_all(t, ad::abs_(t, ad::add_const(t, dist, -true_d)));
}

struct LossBreakdown {
    double seq = 0, coord = 0, shadow = 0, gdpp = 0, cls = 0;
    double total = 0;
};

inline double total_loss_value(const LossBreakdown& b, const LossWeights& w) {
    return b.seq + w.alpha * b.coord + w.delta * b.shadow + w.epsilon * b.gdpp +
           w.lambda_cls * b.cls;
}

// Weighted sum on the tape; the per-term scalars should already be batch
// aggregates. Non-finite terms are rejected by name.
inline Var total_loss(Tape& t, Var seq, Var coord, Var shadow, Var gdpp, Var cls,
                      const LossWeights& w) {
    auto ensure_finite = [&](Var v, const char* name) {
        check(std::isfinite(t.scalar_val(v)), std::string("non-finite loss term: ") + name);
    };
    ensure_finite(seq, "seq");
    ensure_finite(coord, "coord");
    ensure_finite(shadow, "shadow");
    ensure_finite(gdpp, "gdpp");
    ensure_finite(cls, "cls");
    Var out = seq;
    out = ad::add(t, out, ad::scale(t, coord, w.alpha));
    out = ad::add(t, out, ad::scale(t, shadow, w.delta));
    out = ad::add(t, out, ad::scale(t, gdpp, w.epsilon));
    out = ad::add(t, out, ad::scale(t, cls, w.lambda_cls));
    return out;
}

}  // namespace abloop
