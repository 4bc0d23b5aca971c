#pragma once
// Reverse-mode autodiff over dense double matrices.
//
// A Tape records one forward pass as a flat list of nodes; backward walks
// the list in reverse. Every value is a 2-D Eigen matrix (scalars are 1x1).
// The op set is exactly what the model needs; each op registers a closure
// that pushes adjoints to its inputs. Nodes built only from constants carry
// no closure and are skipped on the way back.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "abloop/common.hpp"

namespace abloop {

struct Var {
    int id = -1;
    int rows = 0;
    int cols = 0;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    struct Node {
        Mat value;
        Mat adjoint;  // empty until touched
        bool needs_grad = false;
        std::function<void()> backward;
    };

    Var leaf(Mat value, bool needs_grad = false) {
        return emit(std::move(value), needs_grad, nullptr);
    }

    Var scalar(double v, bool needs_grad = false) {
        Mat m(1, 1);
        m(0, 0) = v;
        return leaf(std::move(m), needs_grad);
    }

    const Mat& val(Var v) const { return nodes_[size_t(v.id)].value; }
    double scalar_val(Var v) const { return val(v)(0, 0); }

    Mat& adj(Var v) {
        Node& n = nodes_[size_t(v.id)];
        if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
        return n.adjoint;
    }

    bool needs_grad(Var v) const { return nodes_[size_t(v.id)].needs_grad; }

    // Accumulates an extra adjoint seed; used to inject batch-level loss
    // gradients into per-item sub-graphs before run_backward().
    void seed(Var v, const Mat& g) {
        check(g.rows() == v.rows && g.cols() == v.cols, "seed shape mismatch");
        adj(v) += g;
    }

    void backward(Var root) {
        check(root.rows == 1 && root.cols == 1, "backward root must be scalar");
        adj(root)(0, 0) += 1.0;
        run_backward();
    }

    // Runs backward from whatever seeds were injected via seed()/backward().
    void run_backward() {
        for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.needs_grad && n.backward && n.adjoint.size() != 0) n.backward();
        }
    }

    size_t size() const { return nodes_.size(); }

    Var emit(Mat value, bool needs_grad, std::function<void()> backward) {
        Var v;
        v.rows = int(value.rows());
        v.cols = int(value.cols());
        v.id = int(nodes_.size());
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return v;
    }

private:
    std::vector<Node> nodes_;
};

namespace ad {

inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (t.needs_grad(v)) return true;
    return false;
}

// ---- arithmetic -----------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
    check(a.rows == b.rows && a.cols == b.cols, "add: shape mismatch");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a) + t.val(b);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += g;
        if (tp->needs_grad(b)) tp->adj(b) += g;
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    check(a.rows == b.rows && a.cols == b.cols, "sub: shape mismatch");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a) - t.val(b);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += g;
        if (tp->needs_grad(b)) tp->adj(b) -= g;
    });
}

inline Var scale(Tape& t, Var a, double c) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a) * c;
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, c, out] { tp->adj(a) += c * tp->adj(out); });
}

inline Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

inline Var add_const(Tape& t, Var a, const Mat& c) {
    check(c.rows() == a.rows && c.cols() == a.cols, "add_const: shape mismatch");
    bool ng = t.needs_grad(a);
    Mat y = t.val(a) + c;
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] { tp->adj(a) += tp->adj(out); });
}

inline Var mul(Tape& t, Var a, Var b) {
    check(a.rows == b.rows && a.cols == b.cols, "mul: shape mismatch");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a).cwiseProduct(t.val(b));
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += g.cwiseProduct(tp->val(b));
        if (tp->needs_grad(b)) tp->adj(b) += g.cwiseProduct(tp->val(a));
    });
}

// a (m x n) scaled per row by column vector c (m x 1).
inline Var mul_colvec(Tape& t, Var a, Var c) {
    check(c.cols == 1 && c.rows == a.rows, "mul_colvec: shape mismatch");
    bool ng = any_grad(t, {a, c});
    Mat y = t.val(a).array().colwise() * t.val(c).col(0).array();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, c, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += (g.array().colwise() * tp->val(c).col(0).array()).matrix();
        if (tp->needs_grad(c)) tp->adj(c) += g.cwiseProduct(tp->val(a)).rowwise().sum();
    });
}

// a (m x n) scaled per column by row vector r (1 x n).
inline Var mul_rowvec(Tape& t, Var a, Var r) {
    check(r.rows == 1 && r.cols == a.cols, "mul_rowvec: shape mismatch");
    bool ng = any_grad(t, {a, r});
    Mat y = t.val(a).array().rowwise() * t.val(r).row(0).array();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, r, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += (g.array().rowwise() * tp->val(r).row(0).array()).matrix();
        if (tp->needs_grad(r)) tp->adj(r) += g.cwiseProduct(tp->val(a)).colwise().sum();
    });
}

// a scaled by a 1x1 tape scalar.
inline Var mul_scalar_var(Tape& t, Var a, Var s) {
    check(s.rows == 1 && s.cols == 1, "mul_scalar_var: s must be 1x1");
    bool ng = any_grad(t, {a, s});
    Mat y = t.val(a) * t.scalar_val(s);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, s, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += g * tp->scalar_val(s);
        if (tp->needs_grad(s)) tp->adj(s)(0, 0) += g.cwiseProduct(tp->val(a)).sum();
    });
}

// ---- matrix products ------------------------------------------------------

inline Var matmul(Tape& t, Var a, Var b) {
    check(a.cols == b.rows, "matmul: inner dims differ");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a) * t.val(b);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, b.cols};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a).noalias() += g * tp->val(b).transpose();
        if (tp->needs_grad(b)) tp->adj(b).noalias() += tp->val(a).transpose() * g;
    });
}

// y = a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
    check(a.cols == b.cols, "matmul_nt: inner dims differ");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a) * t.val(b).transpose();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, b.rows};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a).noalias() += g * tp->val(b);
        if (tp->needs_grad(b)) tp->adj(b).noalias() += g.transpose() * tp->val(a);
    });
}

inline Var transpose(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).transpose();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.cols, a.rows};
    return t.emit(std::move(y), true, [tp, a, out] { tp->adj(a) += tp->adj(out).transpose(); });
}

// y = a + b broadcast over rows (b is 1 x n).
inline Var row_bcast_add(Tape& t, Var a, Var b) {
    check(b.rows == 1 && b.cols == a.cols, "row_bcast_add: shape mismatch");
    bool ng = any_grad(t, {a, b});
    Mat y = t.val(a).rowwise() + t.val(b).row(0);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, b, out] {
        const Mat& g = tp->adj(out);
        if (tp->needs_grad(a)) tp->adj(a) += g;
        if (tp->needs_grad(b)) tp->adj(b) += g.colwise().sum();
    });
}

inline Var linear(Tape& t, Var x, Var w, Var b) { return row_bcast_add(t, matmul(t, x, w), b); }

// ---- shape ops ------------------------------------------------------------

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    int rows = parts[0].rows, cols = 0;
    bool ng = false;
    for (Var p : parts) {
        check(p.rows == rows, "concat_cols: row mismatch");
        cols += p.cols;
        ng = ng || t.needs_grad(p);
    }
    Mat y(rows, cols);
    int c0 = 0;
    for (Var p : parts) {
        y.middleCols(c0, p.cols) = t.val(p);
        c0 += p.cols;
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), rows, cols};
    std::vector<Var> ps = parts;
    return t.emit(std::move(y), true, [tp, ps, out] {
        const Mat& g = tp->adj(out);
        int c = 0;
        for (Var p : ps) {
            if (tp->needs_grad(p)) tp->adj(p) += g.middleCols(c, p.cols);
            c += p.cols;
        }
    });
}

inline Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    int cols = parts[0].cols, rows = 0;
    bool ng = false;
    for (Var p : parts) {
        check(p.cols == cols, "concat_rows: col mismatch");
        rows += p.rows;
        ng = ng || t.needs_grad(p);
    }
    Mat y(rows, cols);
    int r0 = 0;
    for (Var p : parts) {
        y.middleRows(r0, p.rows) = t.val(p);
        r0 += p.rows;
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), rows, cols};
    std::vector<Var> ps = parts;
    return t.emit(std::move(y), true, [tp, ps, out] {
        const Mat& g = tp->adj(out);
        int r = 0;
        for (Var p : ps) {
            if (tp->needs_grad(p)) tp->adj(p) += g.middleRows(r, p.rows);
            r += p.rows;
        }
    });
}

inline Var slice_cols(Tape& t, Var a, int c0, int n) {
    check(c0 >= 0 && c0 + n <= a.cols, "slice_cols: out of range");
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).middleCols(c0, n);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, n};
    return t.emit(std::move(y), true, [tp, a, c0, n, out] {
        tp->adj(a).middleCols(c0, n) += tp->adj(out);
    });
}

inline Var slice_rows(Tape& t, Var a, int r0, int n) {
    check(r0 >= 0 && r0 + n <= a.rows, "slice_rows: out of range");
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).middleRows(r0, n);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), n, a.cols};
    return t.emit(std::move(y), true, [tp, a, r0, n, out] {
        tp->adj(a).middleRows(r0, n) += tp->adj(out);
    });
}

inline Var gather_rows(Tape& t, Var a, std::vector<int> idx) {
    bool ng = t.needs_grad(a);
    Mat y(Eigen::Index(idx.size()), a.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < a.rows, "gather_rows: index out of range");
        y.row(Eigen::Index(i)) = t.val(a).row(idx[i]);
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), int(idx.size()), a.cols};
    return t.emit(std::move(y), true, [tp, a, idx = std::move(idx), out] {
        const Mat& g = tp->adj(out);
        Mat& da = tp->adj(a);
        for (size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(Eigen::Index(i));
    });
}

inline Var scatter_add_rows(Tape& t, Var a, std::vector<int> idx, int n_out) {
    check(int(idx.size()) == a.rows, "scatter_add_rows: index count mismatch");
    bool ng = t.needs_grad(a);
    Mat y = Mat::Zero(n_out, a.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < n_out, "scatter_add_rows: index out of range");
        y.row(idx[i]) += t.val(a).row(Eigen::Index(i));
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), n_out, a.cols};
    return t.emit(std::move(y), true, [tp, a, idx = std::move(idx), out] {
        const Mat& g = tp->adj(out);
        Mat& da = tp->adj(a);
        for (size_t i = 0; i < idx.size(); ++i) da.row(Eigen::Index(i)) += g.row(idx[i]);
    });
}

inline Var tile_rows(Tape& t, Var a, int m) {
    check(a.rows == 1, "tile_rows: input must be 1 x n");
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).replicate(m, 1);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), m, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] { tp->adj(a) += tp->adj(out).colwise().sum(); });
}

// Repeats the column block k times: (m x n) -> (m x n*k).
inline Var tile_cols_blocks(Tape& t, Var a, int k) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).replicate(1, k);
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols * k};
    return t.emit(std::move(y), true, [tp, a, k, out] {
        const Mat& g = tp->adj(out);
        Mat& da = tp->adj(a);
        for (int b = 0; b < k; ++b) da += g.middleCols(b * a.cols, a.cols);
    });
}

// ---- reductions -----------------------------------------------------------

inline Var sum_all(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y(1, 1);
    y(0, 0) = t.val(a).sum();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), 1, 1};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out)(0, 0);
    });
}

inline Var mean_all(Tape& t, Var a) { return scale(t, sum_all(t, a), 1.0 / (double(a.rows) * a.cols)); }

inline Var col_mean(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).colwise().mean();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), 1, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a) += tp->adj(out).replicate(a.rows, 1) / double(a.rows);
    });
}

inline Var row_sum(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).rowwise().sum();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, 1};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a) += tp->adj(out).replicate(1, a.cols);
    });
}

// ---- elementwise nonlinearities -------------------------------------------

inline Var sigmoid(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = (1.0 / (1.0 + (-t.val(a).array()).exp())).matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        const Mat& y_ = tp->val(out);
        tp->adj(a).array() += tp->adj(out).array() * y_.array() * (1.0 - y_.array());
    });
}

inline Var silu(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-t.val(a).array()).exp());
    Mat y = (t.val(a).array() * s).matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        Eigen::ArrayXXd s_ = 1.0 / (1.0 + (-tp->val(a).array()).exp());
        tp->adj(a).array() += tp->adj(out).array() * (s_ * (1.0 + tp->val(a).array() * (1.0 - s_)));
    });
}

inline Var exp_(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).array().exp().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out).array() * tp->val(out).array();
    });
}

inline Var log_(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).array().log().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out).array() / tp->val(a).array();
    });
}

inline Var sqrt_(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).array().sqrt().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out).array() / (2.0 * tp->val(out).array());
    });
}

inline Var square(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).array().square().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out).array() * 2.0 * tp->val(a).array();
    });
}

inline Var abs_(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).array().abs().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        tp->adj(a).array() += tp->adj(out).array() * tp->val(a).array().sign();
    });
}

// Elementwise smooth-l1 with transition beta.
inline Var huber(Tape& t, Var a, double beta) {
    bool ng = t.needs_grad(a);
    Eigen::ArrayXXd x = t.val(a).array();
    Mat y = ((x.abs() < beta).select(0.5 * x.square() / beta, x.abs() - 0.5 * beta)).matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, beta, out] {
        Eigen::ArrayXXd x_ = tp->val(a).array();
        Eigen::ArrayXXd d = (x_.abs() < beta).select(x_ / beta, x_.sign());
        tp->adj(a).array() += tp->adj(out).array() * d;
    });
}

// ---- row-wise softmax family ----------------------------------------------

inline Var softmax_rows(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        Eigen::ArrayXd r = y.row(i).array() - y.row(i).maxCoeff();
        Eigen::ArrayXd e = r.exp();
        y.row(i) = (e / e.sum()).matrix().transpose();
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        const Mat& y_ = tp->val(out);
        const Mat& g = tp->adj(out);
        Vec dot = g.cwiseProduct(y_).rowwise().sum();
        tp->adj(a) += y_.cwiseProduct(g.colwise() - dot);
    });
}

inline Var log_softmax_rows(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        double m = y.row(i).maxCoeff();
        double lse = m + std::log((y.row(i).array() - m).exp().sum());
        y.row(i).array() -= lse;
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, out] {
        const Mat& g = tp->adj(out);
        Mat p = tp->val(out).array().exp().matrix();
        Vec gs = g.rowwise().sum();
        tp->adj(a) += g - p.cwiseProduct(Mat(gs.replicate(1, p.cols())));
    });
}

// Row-wise standardization (x - mean) / sqrt(var + eps); affine scale/shift
// are composed on top by the caller.
inline Var layer_norm_rows(Tape& t, Var a, double eps = 1e-5) {
    bool ng = t.needs_grad(a);
    const Mat& x = t.val(a);
    int n = a.cols;
    Mat y(a.rows, n);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().mean();
        y.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + eps)).matrix();
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, n};
    return t.emit(std::move(y), true, [tp, a, eps, out] {
        const Mat& x_ = tp->val(a);
        const Mat& xhat = tp->val(out);
        const Mat& g = tp->adj(out);
        Mat& da = tp->adj(a);
        int n_ = a.cols;
        for (Eigen::Index i = 0; i < x_.rows(); ++i) {
            double mu = x_.row(i).mean();
            double var = (x_.row(i).array() - mu).square().mean();
            double s = std::sqrt(var + eps);
            double gm = g.row(i).mean();
            double gx = (g.row(i).cwiseProduct(xhat.row(i))).mean();
            da.row(i).array() +=
                (g.row(i).array() - gm - xhat.row(i).array() * gx) / s;
            (void)n_;
        }
    });
}

// y(i) = a(i, idx[i]); used for picking target-class log-probabilities.
inline Var pick_per_row(Tape& t, Var a, std::vector<int> idx) {
    check(int(idx.size()) == a.rows, "pick_per_row: index count mismatch");
    bool ng = t.needs_grad(a);
    Mat y(a.rows, 1);
    for (int i = 0; i < a.rows; ++i) {
        check(idx[size_t(i)] >= 0 && idx[size_t(i)] < a.cols, "pick_per_row: index out of range");
        y(i, 0) = t.val(a)(i, idx[size_t(i)]);
    }
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, 1};
    return t.emit(std::move(y), true, [tp, a, idx = std::move(idx), out] {
        const Mat& g = tp->adj(out);
        Mat& da = tp->adj(a);
        for (int i = 0; i < a.rows; ++i) da(i, idx[size_t(i)]) += g(i, 0);
    });
}

// ---- specialty ops --------------------------------------------------------

// arccosh with the argument clamped to [lo, hi]; the derivative of the
// clamped composite is zero outside the window.
inline Var arccosh_clamped(Tape& t, Var a, double lo = 1.0 + 1e-7, double hi = 1e7) {
    bool ng = t.needs_grad(a);
    Eigen::ArrayXXd xc = t.val(a).array().max(lo).min(hi);
    Mat y = (xc + (xc.square() - 1.0).sqrt()).log().matrix();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, a.cols};
    return t.emit(std::move(y), true, [tp, a, lo, hi, out] {
        Eigen::ArrayXXd x_ = tp->val(a).array();
        Eigen::ArrayXXd inside = ((x_ >= lo) && (x_ <= hi)).cast<double>();
        Eigen::ArrayXXd xc_ = x_.max(lo).min(hi);
        tp->adj(a).array() += tp->adj(out).array() * inside / (xc_.square() - 1.0).sqrt();
    });
}

// Eigenvalues (ascending) of a symmetric matrix; d(lambda_i) = v_i v_i^T.
inline Var sym_eigvals(Tape& t, Var a) {
    check(a.rows == a.cols, "sym_eigvals: matrix must be square");
    Eigen::SelfAdjointEigenSolver<Mat> es(t.val(a));
    check(es.info() == Eigen::Success, "sym_eigvals: eigendecomposition failed");
    bool ng = t.needs_grad(a);
    Mat y = es.eigenvalues();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, 1};
    Mat v = es.eigenvectors();
    return t.emit(std::move(y), true, [tp, a, v = std::move(v), out] {
        const Mat& g = tp->adj(out);
        tp->adj(a).noalias() += v * g.col(0).asDiagonal() * v.transpose();
    });
}

// Per-row Gram matrix of `atoms` 3-vectors packed in each row:
// input (m x 3*atoms) -> output (m x atoms^2), out(r, a*atoms+b) = <r_a, r_b>.
inline Var rowwise_gram(Tape& t, Var a, int atoms) {
    check(a.cols == 3 * atoms, "rowwise_gram: expected 3*atoms columns");
    bool ng = t.needs_grad(a);
    Mat y(a.rows, atoms * atoms);
    const Mat& x = t.val(a);
    for (int r = 0; r < a.rows; ++r)
        for (int i = 0; i < atoms; ++i)
            for (int j = 0; j < atoms; ++j)
                y(r, i * atoms + j) = x.row(r).segment(3 * i, 3).dot(x.row(r).segment(3 * j, 3));
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, atoms * atoms};
    return t.emit(std::move(y), true, [tp, a, atoms, out] {
        const Mat& g = tp->adj(out);
        const Mat& x_ = tp->val(a);
        Mat& da = tp->adj(a);
        for (int r = 0; r < a.rows; ++r)
            for (int i = 0; i < atoms; ++i)
                for (int j = 0; j < atoms; ++j) {
                    double gij = g(r, i * atoms + j);
                    if (gij == 0.0) continue;
                    da.row(r).segment(3 * i, 3) += gij * x_.row(r).segment(3 * j, 3);
                    da.row(r).segment(3 * j, 3) += gij * x_.row(r).segment(3 * i, 3);
                }
    });
}

// Euclidean norm of each row; rows must be nonzero for a defined gradient.
inline Var row_norms(Tape& t, Var a) {
    bool ng = t.needs_grad(a);
    Mat y = t.val(a).rowwise().norm();
    if (!ng) return t.emit(std::move(y), false, nullptr);
    Tape* tp = &t;
    Var out{int(t.size()), a.rows, 1};
    return t.emit(std::move(y), true, [tp, a, out] {
        const Mat& g = tp->adj(out);
        const Mat& x_ = tp->val(a);
        const Mat& n_ = tp->val(out);
        Mat& da = tp->adj(a);
        for (int i = 0; i < a.rows; ++i) {
            double nv = n_(i, 0);
            if (nv > 0) da.row(i) += (g(i, 0) / nv) * x_.row(i);
        }
    });
}

}  // namespace ad

}  // namespace abloop
