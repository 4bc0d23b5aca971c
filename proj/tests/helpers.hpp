#pragma once
// Shared test utilities: finite-difference gradient checking and small
// random-input builders. The FD oracle here is the independent reference
// for every analytic gradient in the library.

#include <functional>
#include <vector>

#include "abloop/common.hpp"
#include "abloop/tape.hpp"

namespace abloop::testing {

// Builds a scalar loss from leaf vars wrapping `params`; returns the largest
// relative error between analytic and central finite-difference gradients
// over every entry of every parameter.
inline double gradcheck_max_rel_err(
    std::vector<Mat> params,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    double h = 1e-5) {
    auto eval = [&](const std::vector<Mat>& ps) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(ps.size());
        for (const Mat& p : ps) vars.push_back(t.leaf(p, false));
        return t.scalar_val(build(t, vars));
    };

    // analytic
    Tape t;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Mat& p : params) vars.push_back(t.leaf(p, true));
    Var loss = build(t, vars);
    t.backward(loss);
    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (Var v : vars) analytic.push_back(t.adj(v));

    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        for (Eigen::Index i = 0; i < params[p].rows(); ++i) {
            for (Eigen::Index j = 0; j < params[p].cols(); ++j) {
                std::vector<Mat> ps = params;
                ps[p](i, j) += h;
                double up = eval(ps);
                ps[p](i, j) -= 2 * h;
                double dn = eval(ps);
                double numeric = (up - dn) / (2 * h);
                double a = analytic[p](i, j);
                double err = std::abs(a - numeric) /
                             std::max({1.0, std::abs(a), std::abs(numeric)});
                worst = std::max(worst, err);
            }
        }
    }
    return worst;
}

inline Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
}

}  // namespace abloop::testing

#include "abloop/nn.hpp"

namespace abloop::testing {

// FD check against gradients accumulated into a ParamStore. `forward` must
// be a pure function of the store values; `backward` fills store gradients.
inline double store_gradcheck_max_rel_err(ParamStore& s,
                                          const std::function<double()>& forward,
                                          const std::function<void()>& backward,
                                          double h = 1e-4) {
    s.zero_grad();
    backward();
    std::vector<Mat> analytic;
    analytic.reserve(s.entries.size());
    for (auto& e : s.entries) analytic.push_back(e.grad);

    double worst = 0.0;
    for (size_t p = 0; p < s.entries.size(); ++p) {
        Mat& val = s.entries[p].value;
        for (Eigen::Index i = 0; i < val.rows(); ++i)
            for (Eigen::Index j = 0; j < val.cols(); ++j) {
                double orig = val(i, j);
                val(i, j) = orig + h;
                double up = forward();
                val(i, j) = orig - h;
                double dn = forward();
                val(i, j) = orig;
                double numeric = (up - dn) / (2 * h);
                double a = analytic[p](i, j);
                double err = std::abs(a - numeric) /
                             std::max({1.0, std::abs(a), std::abs(numeric)});
                worst = std::max(worst, err);
            }
    }
    return worst;
}

}  // namespace abloop::testing
