// Loss terms: frozen closed-form values, limits, invariances and
// finite-difference gradients.

#include <catch2/catch_amalgamated.hpp>

#include "abloop/geometry.hpp"
#include "abloop/objective.hpp"
#include "helpers.hpp"

using namespace abloop;
using abloop::testing::random_mat;

TEST_CASE("amcl_weights values and invariances") {
    REQUIRE((amcl_weights(Vec::Constant(4, 2.5), 0.7) - Vec::Constant(4, 0.25)).cwiseAbs().maxCoeff() < 1e-14);

    Vec two(2);
    two << 1.0, 2.0;
    Vec w = amcl_weights(two, 1.0);
    REQUIRE(w[0] == Catch::Approx(0.7310585786300049).epsilon(1e-12));
    REQUIRE(w[1] == Catch::Approx(0.2689414213699951).epsilon(1e-12));
    REQUIRE(w.sum() == Catch::Approx(1.0).epsilon(1e-14));

    // winner-take-all limit
    Vec cold = amcl_weights(two, 1e-4);
    REQUIRE(cold[0] > 1.0 - 1e-12);

    // invariant to adding a constant to all losses
    Vec shifted = amcl_weights(Vec(two.array() + 17.0), 1.0);
    REQUIRE((shifted - w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tau schedule endpoints, midpoint and clamp") {
    AnnealSchedule s;
    REQUIRE(tau_at(0, s) == Catch::Approx(2.0).epsilon(1e-12));
    REQUIRE(tau_at(20, s) == Catch::Approx(0.1).epsilon(1e-12));
    REQUIRE(tau_at(10, s) == Catch::Approx(0.4472135954999579).epsilon(1e-9));
    REQUIRE(tau_at(35, s) == Catch::Approx(0.1).epsilon(1e-12));
}

namespace {

// Hand-made single-component prediction around given logits.
MixturePrediction manual_prediction(Tape& t, const std::vector<Mat>& logits, const Mat& coupling) {
    MixturePrediction pred;
    int L = int(logits[0].rows());
    int K = int(logits.size());
    Mat mix = Mat::Constant(L, K, 1.0 / K);
    pred.mixing = t.leaf(mix);
    for (const Mat& l : logits) {
        Var lv = t.leaf(l);
        pred.component_logits.push_back(lv);
        pred.beliefs.push_back(ad::softmax_rows(t, lv));
        pred.couplings_sym.push_back(t.leaf(Mat(0.5 * (coupling + coupling.transpose()))));
    }
    for (int k = 0; k < K; ++k) {
        Var w = ad::mul_colvec(t, pred.beliefs[size_t(k)], ad::slice_cols(t, pred.mixing, k, 1));
        pred.mixture_dist = pred.mixture_dist.valid() ? ad::add(t, pred.mixture_dist, w) : w;
    }
    return pred;
}

}  // namespace

TEST_CASE("sequence_loss composition") {
    Rng rng(3);
    std::vector<int> target = {2, 5, 5};

    SECTION("K = 1 equals CE plus weighted pairwise energy") {
        Mat logits = random_mat(3, kNumAA, rng);
        Mat j = random_mat(kNumAA, kNumAA, rng);
        Tape t;
        auto pred = manual_prediction(t, {logits}, j);
        auto sl = sequence_loss(t, pred, target, 1.0, 0.3);

        double ce = 0;
        for (int i = 0; i < 3; ++i) {
            Eigen::ArrayXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
            ce -= std::log(e[target[size_t(i)]] / e.sum());
        }
        ce /= 3.0;
        double ep = t.scalar_val(pairwise_energy(t, pred.beliefs[0], pred.couplings_sym[0]));
        REQUIRE(t.scalar_val(sl.total) == Catch::Approx(ce + 0.3 * ep).epsilon(1e-10));
        REQUIRE(sl.weights[0] == 1.0);
    }
    SECTION("perfect prediction with zero coupling has ~zero loss") {
        Mat logits = Mat::Zero(3, kNumAA);
        for (int i = 0; i < 3; ++i) logits(i, target[size_t(i)]) = 60.0;
        Tape t;
        auto pred = manual_prediction(t, {logits}, Mat::Zero(kNumAA, kNumAA));
        auto sl = sequence_loss(t, pred, target, 1.0, 0.3);
        REQUIRE(t.scalar_val(sl.total) < 1e-12);
    }
    SECTION("two components combine through the Boltzmann weights") {
        // engineer two components with controlled CE values
        Mat good = Mat::Zero(3, kNumAA), bad = Mat::Zero(3, kNumAA);
        for (int i = 0; i < 3; ++i) {
            good(i, target[size_t(i)]) = 3.0;
            bad(i, (target[size_t(i)] + 7) % kNumAA) = 3.0;
        }
        Tape t;
        auto pred = manual_prediction(t, {good, bad}, Mat::Zero(kNumAA, kNumAA));
        auto sl = sequence_loss(t, pred, target, 0.1, 0.0);
        double l0 = t.scalar_val(sl.component_losses[0]);
        double l1 = t.scalar_val(sl.component_losses[1]);
        Vec w = amcl_weights((Vec(2) << l0, l1).finished(), 0.1);
        REQUIRE(t.scalar_val(sl.total) == Catch::Approx(w[0] * l0 + w[1] * l1).margin(1e-6));
        REQUIRE(sl.winner == 0);
    }
}

TEST_CASE("gdpp loss closed forms") {
    SECTION("identical spectra give zero") {
        Rng rng(5);
        Mat p = random_mat(4, kNumAA, rng);
        Tape t;
        REQUIRE(t.scalar_val(gdpp_loss(t, t.leaf(p), p)) < 1e-18);
    }
    SECTION("uniform rows vs distinct one-hots, L = 2") {
        // K_pred = 0.05 * ones(2,2) + eps I -> eigenvalues {eps, 0.1 + eps}
        // K_true = I + eps I -> {1 + eps, 1 + eps}; loss = 1 + 0.81
        Mat p = Mat::Constant(2, kNumAA, 1.0 / kNumAA);
        Mat tgt = Mat::Zero(2, kNumAA);
        tgt(0, 0) = 1.0;
        tgt(1, 5) = 1.0;
        Tape t;
        REQUIRE(t.scalar_val(gdpp_loss(t, t.leaf(p), tgt)) == Catch::Approx(1.81).epsilon(1e-9));
    }
    SECTION("joint row permutation leaves the loss unchanged") {
        Rng rng(7);
        Mat p = random_mat(5, kNumAA, rng).array().abs();
        Mat tgt = Mat::Zero(5, kNumAA);
        for (int i = 0; i < 5; ++i) tgt(i, 3 * i) = 1.0;
        Tape t;
        double base = t.scalar_val(gdpp_loss(t, t.leaf(p), tgt));
        std::vector<int> perm = {4, 2, 0, 1, 3};
        Mat pp(5, kNumAA), tp(5, kNumAA);
        for (int i = 0; i < 5; ++i) {
            pp.row(i) = p.row(perm[size_t(i)]);
            tp.row(i) = tgt.row(perm[size_t(i)]);
        }
        REQUIRE(t.scalar_val(gdpp_loss(t, t.leaf(pp), tp)) == Catch::Approx(base).epsilon(1e-9));
    }
    SECTION("gradient through the eigenvalues matches finite differences") {
        Rng rng(9);
        Mat p = random_mat(3, kNumAA, rng);
        Mat tgt = Mat::Zero(3, kNumAA);
        for (int i = 0; i < 3; ++i) tgt(i, i + 2) = 1.0;
        REQUIRE(testing::gradcheck_max_rel_err(
                    {p},
                    [&](Tape& t, const std::vector<Var>& v) {
                        return gdpp_loss(t, v[0], tgt);
                    }) < 1e-5);
    }
}

TEST_CASE("antigen classification loss") {
    Rng rng(11);
    ParamStore s;
    auto head = make_cls_head(s, "cls", 6, rng);

    auto dist_leafs = [&](Tape& t, int b, int l) {
        std::vector<Var> ds;
        for (int i = 0; i < b; ++i) {
            Mat d = random_mat(l, kNumAA, rng).array().abs();
            for (int r = 0; r < l; ++r) d.row(r) /= d.row(r).sum();
            ds.push_back(t.leaf(d));
        }
        return ds;
    };

    SECTION("zero embeddings give log B") {
        s.at(head.mlp.l2.w).value.setZero();
        s.at(head.mlp.l2.b).value.setZero();  // c_i = 0
        Tape t;
        TapeBinding tb(t, s, false);
        auto ds = dist_leafs(t, 5, 4);
        std::vector<Var> as;
        for (int i = 0; i < 5; ++i) as.push_back(t.leaf(random_mat(1, 6, rng)));
        REQUIRE(t.scalar_val(antigen_cls_loss(tb, head, ds, as)) ==
                Catch::Approx(std::log(5.0)).epsilon(1e-12));
    }
    SECTION("B = 1 is defined as zero") {
        Tape t;
        TapeBinding tb(t, s, false);
        auto ds = dist_leafs(t, 1, 4);
        REQUIRE(t.scalar_val(antigen_cls_loss(tb, head, ds, {t.leaf(random_mat(1, 6, rng))})) == 0.0);
    }
    SECTION("perfect retrieval drives the loss to zero") {
        Tape t;
        TapeBinding tb(t, s, false);
        auto ds = dist_leafs(t, 2, 4);
        // solve for antigen embeddings with strongly diagonal score matrix
        Mat c(2, 6);
        c.row(0) = t.val(soft_sequence_embed(tb, head, ds[0]));
        c.row(1) = t.val(soft_sequence_embed(tb, head, ds[1]));
        Mat gram = c * c.transpose();
        Mat targets(2, 2);
        targets << 100, -100, -100, 100;  // desired scores c_i . a_k
        Mat a = c.transpose() * gram.inverse() * targets;  // 6 x 2, column k = a_k
        std::vector<Var> as = {t.leaf(Mat(a.col(0).transpose())), t.leaf(Mat(a.col(1).transpose()))};
        REQUIRE(t.scalar_val(antigen_cls_loss(tb, head, ds, as)) < 1e-6);
    }
    SECTION("identical predictions collapse retrieval to 1/B") {
        Tape t;
        TapeBinding tb(t, s, false);
        Mat d = random_mat(4, kNumAA, rng).array().abs();
        for (int r = 0; r < 4; ++r) d.row(r) /= d.row(r).sum();
        int correct = 0, total = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const int B = 5;
            std::vector<Var> ds, as;
            for (int i = 0; i < B; ++i) {
                ds.push_back(t.leaf(d));
                as.push_back(t.leaf(random_mat(1, 6, rng)));
            }
            std::vector<Var> cs;
            for (int i = 0; i < B; ++i) cs.push_back(soft_sequence_embed(tb, head, ds[size_t(i)]));
            Var scores = ad::matmul_nt(t, ad::concat_rows(t, cs), ad::concat_rows(t, as));
            for (int i = 0; i < B; ++i) {
                Eigen::Index best = 0;
                t.val(scores).row(i).maxCoeff(&best);
                correct += int(best) == i;
                ++total;
            }
        }
        double acc = double(correct) / total;
        REQUIRE(acc == Catch::Approx(1.0 / 5.0).margin(0.05));
    }
    SECTION("gradients flow through predictions, embeddings and the head") {
        Mat d0 = random_mat(3, kNumAA, rng), d1 = random_mat(4, kNumAA, rng);
        Mat a0 = random_mat(1, 6, rng), a1 = random_mat(1, 6, rng);
        auto run = [&](bool train) {
            Tape t;
            TapeBinding tb(t, s, train);
            Var sd0 = ad::softmax_rows(t, t.leaf(d0, train));
            Var sd1 = ad::softmax_rows(t, t.leaf(d1, train));
            Var loss = antigen_cls_loss(tb, head, {sd0, sd1},
                                        {t.leaf(a0, train), t.leaf(a1, train)});
            if (train) {
                t.backward(loss);
                tb.accumulate_grads();
            }
            return t.scalar_val(loss);
        };
        double err = testing::store_gradcheck_max_rel_err(
            s, [&] { return run(false); }, [&] { run(true); }, 1e-5);
        REQUIRE(err < 1e-4);
    }
}

TEST_CASE("coordinate loss branches") {
    Tape t;
    Mat target = Mat::Zero(1, 1);
    REQUIRE(t.scalar_val(coord_loss(t, t.leaf(Mat::Zero(1, 1)), target)) == 0.0);
    REQUIRE(t.scalar_val(coord_loss(t, t.leaf(Mat::Constant(1, 1, 0.5)), target)) ==
            Catch::Approx(0.125).epsilon(1e-14));
    REQUIRE(t.scalar_val(coord_loss(t, t.leaf(Mat::Constant(1, 1, 2.0)), target)) ==
            Catch::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("shadow loss geometry") {
    Rng rng(13);
    SECTION("perfect prediction gives zero; empty epitope gives zero") {
        Mat cdr = random_mat(4, 3, rng);
        Mat epi = random_mat(2, 3, rng);
        Tape t;
        REQUIRE(t.scalar_val(shadow_loss(t, t.leaf(cdr), cdr, epi)) < 1e-14);
        REQUIRE(t.scalar_val(shadow_loss(t, t.leaf(cdr), cdr, Mat(0, 3))) == 0.0);
    }
    SECTION("single collinear pair measures the translation") {
        Mat true_ca(1, 3), epi(1, 3);
        true_ca << 0, 0, 0;
        epi << 10, 0, 0;
        Mat pred(1, 3);
        pred << 2.5, 0, 0;  // moved 2.5 toward the epitope
        Tape t;
        REQUIRE(t.scalar_val(shadow_loss(t, t.leaf(pred), true_ca, epi)) ==
                Catch::Approx(2.5).epsilon(1e-12));
    }
    SECTION("jointly applied rigid motions leave the loss unchanged") {
        Mat pred = random_mat(3, 3, rng), truth = random_mat(3, 3, rng), epi = random_mat(2, 3, rng);
        Tape t;
        double base = t.scalar_val(shadow_loss(t, t.leaf(pred), truth, epi));
        for (int trial = 0; trial < 5; ++trial) {
            RigidMotion m = random_rigid_motion(rng);
            REQUIRE(t.scalar_val(shadow_loss(t, t.leaf(m.apply_packed(pred)),
                                             m.apply_packed(truth), m.apply_packed(epi))) ==
                    Catch::Approx(base).margin(1e-9));
        }
    }
    SECTION("gradient w.r.t. predicted coordinates matches finite differences") {
        Mat pred = 3.0 * random_mat(3, 3, rng), truth = 3.0 * random_mat(3, 3, rng);
        Mat epi = 3.0 * random_mat(2, 3, rng);
        REQUIRE(testing::gradcheck_max_rel_err(
                    {pred},
                    [&](Tape& t, const std::vector<Var>& v) {
                        return shadow_loss(t, v[0], truth, epi);
                    }) < 1e-5);
    }
    SECTION("shadow_epitope_set filters by the 8 A rule") {
        Mat cdr(1, 3);
        cdr << 0, 0, 0;
        Mat epi(3, 3);
        epi << 5, 0, 0, 9, 0, 0, 0, 7.9, 0;
        Mat kept = shadow_epitope_set(cdr, epi);
        REQUIRE(kept.rows() == 2);
    }
}

TEST_CASE("total loss assembly") {
    LossWeights w;
    Tape t;
    auto z = t.scalar(0.0);
    REQUIRE(t.scalar_val(total_loss(t, z, z, z, z, z, w)) == 0.0);

    auto one = t.scalar(1.0);
    REQUIRE(t.scalar_val(total_loss(t, one, one, one, one, one, w)) ==
            Catch::Approx(3.215).margin(1e-12));

    auto nan = t.scalar(std::numeric_limits<double>::quiet_NaN());
    REQUIRE_THROWS_WITH(total_loss(t, one, one, nan, one, one, w),
                        Catch::Matchers::ContainsSubstring("shadow"));

    // zeroing lambda_cls reproduces the no-classification ablation
    LossWeights ablated = w;
    ablated.lambda_cls = 0.0;
    REQUIRE(t.scalar_val(total_loss(t, one, one, one, one, t.scalar(123.0), ablated)) ==
            Catch::Approx(3.015).margin(1e-12));
}
