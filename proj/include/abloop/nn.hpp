#pragma once
// Parameter store, tape bindings, layer helpers and the AdamW optimizer.

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "abloop/common.hpp"
#include "abloop/tape.hpp"

namespace abloop {

struct ParamStore {
    struct Entry {
        std::string name;
        Mat value, grad;
        Mat m, v;  // AdamW moments
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;

    int create(const std::string& name, int rows, int cols) {
        check(index.find(name) == index.end(), "duplicate parameter " + name);
        Entry e;
        e.name = name;
        e.value = Mat::Zero(rows, cols);
        e.grad = Mat::Zero(rows, cols);
        e.m = Mat::Zero(rows, cols);
        e.v = Mat::Zero(rows, cols);
        entries.push_back(std::move(e));
        index[name] = int(entries.size()) - 1;
        return int(entries.size()) - 1;
    }

    Entry& at(int h) { return entries[size_t(h)]; }
    const Entry& at(int h) const { return entries[size_t(h)]; }

    int handle(const std::string& name) const {
        auto it = index.find(name);
        check(it != index.end(), "unknown parameter " + name);
        return it->second;
    }

    void zero_grad() {
        for (Entry& e : entries) e.grad.setZero();
    }

    size_t scalar_count() const {
        size_t n = 0;
        for (const Entry& e : entries) n += size_t(e.value.size());
        return n;
    }

    double grad_norm() const {
        double s = 0;
        for (const Entry& e : entries) s += e.grad.squaredNorm();
        return std::sqrt(s);
    }
};

// Registers parameters as tape leaves on first use and, after backward,
// flushes tape adjoints back into ParamStore gradients.
struct TapeBinding {
    Tape* tape = nullptr;
    ParamStore* store = nullptr;
    bool train = true;  // leaves require grad only in training
    std::unordered_map<int, Var> bound;

    TapeBinding(Tape& t, ParamStore& s, bool train_mode = true)
        : tape(&t), store(&s), train(train_mode) {}

    Var use(int h) {
        auto it = bound.find(h);
        if (it != bound.end()) return it->second;
        Var v = tape->leaf(store->at(h).value, train);
        bound.emplace(h, v);
        return v;
    }

    void accumulate_grads() {
        for (auto& [h, v] : bound) {
            Mat& a = tape->adj(v);
            if (a.size() != 0) store->at(h).grad += a;
        }
    }
};

// ---- initializers -----------------------------------------------------------

inline void init_xavier(Mat& w, Rng& rng) {
    double bound = std::sqrt(6.0 / double(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
}

inline void init_normal(Mat& w, double sigma, Rng& rng) {
    std::normal_distribution<double> g(0.0, sigma);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = g(rng);
}

// ---- layers -----------------------------------------------------------------

struct LinearP {
    int w = -1, b = -1;
};

inline LinearP make_linear(ParamStore& s, const std::string& name, int in, int out, Rng& rng) {
    LinearP l;
    l.w = s.create(name + ".w", in, out);
    l.b = s.create(name + ".b", 1, out);
    init_xavier(s.at(l.w).value, rng);
    return l;
}

inline Var apply_linear(TapeBinding& tb, const LinearP& l, Var x) {
    return ad::linear(*tb.tape, x, tb.use(l.w), tb.use(l.b));
}

// Two-layer MLP with SiLU after the first layer (and optionally the second).
struct Mlp2 {
    LinearP l1, l2;
};

inline Mlp2 make_mlp2(ParamStore& s, const std::string& name, int in, int hidden, int out, Rng& rng) {
    return {make_linear(s, name + ".l1", in, hidden, rng), make_linear(s, name + ".l2", hidden, out, rng)};
}

inline Var apply_mlp2(TapeBinding& tb, const Mlp2& m, Var x, bool act_out = false) {
    Var h = ad::silu(*tb.tape, apply_linear(tb, m.l1, x));
    Var y = apply_linear(tb, m.l2, h);
    return act_out ? ad::silu(*tb.tape, y) : y;
}

// ---- optimizer ----------------------------------------------------------------

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_global_norm(ParamStore& s, double max_norm) {
    double norm = s.grad_norm();
    if (norm > max_norm && norm > 0) {
        double f = max_norm / norm;
        for (auto& e : s.entries) e.grad *= f;
    }
    return norm;
}

struct AdamW {
    double lr = 2.2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    long step_count = 0;

    void step(ParamStore& s) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (auto& e : s.entries) {
            e.m = beta1 * e.m + (1.0 - beta1) * e.grad;
            e.v = beta2 * e.v + (1.0 - beta2) * e.grad.cwiseProduct(e.grad);
            Mat mhat = e.m / bc1;
            Mat vhat = e.v / bc2;
            e.value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
            e.value -= lr * weight_decay * e.value;
        }
    }
};

}  // namespace abloop
