#pragma once

// Dense 64-bit tensors and a reverse-mode automatic differentiation graph.
//
// The Graph is a tape of eagerly evaluated op nodes. backward() emits the
// vector-Jacobian products as new graph nodes instead of raw buffers, so a
// gradient is itself a differentiable quantity. input_gradient_node() exposes
// that directly: it returns d(root)/d(wrt) as a live node, which is what the
// WGAN gradient penalty differentiates a second time with respect to the
// critic parameters. Second-order support is restricted to an allowlisted op
// subset (affine/structural ops, leaky_relu, square, sqrt, sum, mean);
// requesting an input gradient through e.g. softmax throws.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcgan {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense tensor of doubles. Practically rank-2 (rows x cols); reductions
/// produce scalars with shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;

    static Tensor scalar(double v) {
        Tensor t;
        t.shape = {1};
        t.values = {v};
        return t;
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) {
        Tensor t;
        t.shape = {rows, cols};
        t.values.assign(rows * cols, 0.0);
        return t;
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> vals) {
        if (vals.size() != rows * cols)
            throw std::invalid_argument("Tensor::matrix: value count does not match shape");
        Tensor t;
        t.shape = {rows, cols};
        t.values = std::move(vals);
        return t;
    }

    /// 1 x n row matrix.
    static Tensor row(std::vector<double> vals) {
        const std::size_t n = vals.size();
        return matrix(1, n, std::move(vals));
    }

    /// n x 1 column matrix.
    static Tensor column(std::vector<double> vals) {
        const std::size_t n = vals.size();
        return matrix(n, 1, std::move(vals));
    }

    std::size_t numel() const { return values.size(); }
    bool is_scalar() const { return numel() == 1; }

    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : numel(); }

    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    double scalar_value() const {
        if (!is_scalar()) throw std::logic_error("Tensor::scalar_value: tensor is not scalar");
        return values[0];
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

    Eigen::Map<const EMatrix> map() const {
        return Eigen::Map<const EMatrix>(values.data(), static_cast<Eigen::Index>(rows()),
                                         static_cast<Eigen::Index>(cols()));
    }
    Eigen::Map<EMatrix> map() {
        return Eigen::Map<EMatrix>(values.data(), static_cast<Eigen::Index>(rows()),
                                   static_cast<Eigen::Index>(cols()));
    }
};

enum class Op {
    input,
    constant,
    matmul,
    add,
    add_rowvec, // n x d  +  1 x d broadcast over rows
    sub,
    mul, // elementwise
    scale, // x * c
    add_const, // x + c
    leaky_relu,
    sigmoid,
    softplus,
    softmax_rows,
    exp_op,
    log_op,
    square,
    sqrt_op,
    reciprocal,
    sum, // all entries -> scalar
    mean, // all entries -> scalar
    concat_cols,
    slice_cols,
    pad_cols,
    transpose,
    reduce_sum_rows, // n x d -> 1 x d
    reduce_sum_cols, // n x d -> n x 1
    broadcast_rows, // 1 x d -> n x d
    broadcast_cols, // n x 1 -> n x d
    broadcast_scalar, // scalar -> n x d
    pairwise_sq_dists,
    embed_rows, // table lookup by label
    scatter_rows, // adjoint of embed_rows
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::constant: return "constant";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::add_rowvec: return "add_rowvec";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::add_const: return "add_const";
        case Op::leaky_relu: return "leaky_relu";
        case Op::sigmoid: return "sigmoid";
        case Op::softplus: return "softplus";
        case Op::softmax_rows: return "softmax_rows";
        case Op::exp_op: return "exp";
        case Op::log_op: return "log";
        case Op::square: return "square";
        case Op::sqrt_op: return "sqrt";
        case Op::reciprocal: return "reciprocal";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_cols: return "slice_cols";
        case Op::pad_cols: return "pad_cols";
        case Op::transpose: return "transpose";
        case Op::reduce_sum_rows: return "reduce_sum_rows";
        case Op::reduce_sum_cols: return "reduce_sum_cols";
        case Op::broadcast_rows: return "broadcast_rows";
        case Op::broadcast_cols: return "broadcast_cols";
        case Op::broadcast_scalar: return "broadcast_scalar";
        case Op::pairwise_sq_dists: return "pairwise_sq_dists";
        case Op::embed_rows: return "embed_rows";
        case Op::scatter_rows: return "scatter_rows";
    }
    return "?";
}

class Graph;

/// Handle to a node in a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
};

class Gradients; // forward

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    std::size_t size() const { return nodes_.size(); }

    const Tensor& value(Var v) const { return node(v).value; }

    // ---- leaves ------------------------------------------------------------

    /// Differentiable leaf.
    Var input(Tensor t) { return emit(Op::input, -1, -1, std::move(t)); }

    /// Non-differentiable leaf.
    Var constant(Tensor t) { return emit(Op::constant, -1, -1, std::move(t)); }

    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    // ---- ops ---------------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (A.cols() != B.rows())
            throw std::invalid_argument("matmul: inner dimensions differ (" +
                                        std::to_string(A.cols()) + " vs " + std::to_string(B.rows()) + ")");
        Tensor out = Tensor::zeros(A.rows(), B.cols());
        out.map().noalias() = A.map() * B.map();
        return emit(Op::matmul, a.id, b.id, std::move(out));
    }

    Var add(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += B.values[i];
        out.shape = A.shape;
        return emit(Op::add, a.id, b.id, std::move(out));
    }

    Var add_rowvec(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (B.rows() != 1 || B.cols() != A.cols())
            throw std::invalid_argument("add_rowvec: expected 1 x cols(a) row vector");
        Tensor out = A;
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) += B.values[c];
        return emit(Op::add_rowvec, a.id, b.id, std::move(out));
    }

    Var sub(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (!A.same_shape(B)) throw std::invalid_argument("sub: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= B.values[i];
        return emit(Op::sub, a.id, b.id, std::move(out));
    }

    Var mul(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (!A.same_shape(B)) throw std::invalid_argument("mul: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= B.values[i];
        return emit(Op::mul, a.id, b.id, std::move(out));
    }

    Var scale(Var a, double c) {
        Tensor out = node(a).value;
        for (double& v : out.values) v *= c;
        return emit(Op::scale, a.id, -1, std::move(out), c);
    }

    Var add_const(Var a, double c) {
        Tensor out = node(a).value;
        for (double& v : out.values) v += c;
        return emit(Op::add_const, a.id, -1, std::move(out), c);
    }

    Var leaky_relu(Var a, double slope) {
        if (!(slope > 0.0 && slope < 1.0))
            throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
        Tensor out = node(a).value;
        for (double& v : out.values) v = v > 0.0 ? v : slope * v;
        return emit(Op::leaky_relu, a.id, -1, std::move(out), slope);
    }

    Var sigmoid(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values)
            v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return emit(Op::sigmoid, a.id, -1, std::move(out));
    }

    Var softplus(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values)
            v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        return emit(Op::softplus, a.id, -1, std::move(out));
    }

    /// Row-wise softmax with max subtraction.
    Var softmax_rows(Var a) {
        Tensor out = node(a).value;
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t r = 0; r < n; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < d; ++c) mx = std::max(mx, out.at(r, c));
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                out.at(r, c) = std::exp(out.at(r, c) - mx);
                s += out.at(r, c);
            }
            for (std::size_t c = 0; c < d; ++c) out.at(r, c) /= s;
        }
        return emit(Op::softmax_rows, a.id, -1, std::move(out));
    }

    Var exp(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values) v = std::exp(v);
        return emit(Op::exp_op, a.id, -1, std::move(out));
    }

    Var log(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values) v = std::log(v);
        return emit(Op::log_op, a.id, -1, std::move(out));
    }

    Var square(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values) v *= v;
        return emit(Op::square, a.id, -1, std::move(out));
    }

    Var sqrt(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values) v = std::sqrt(v);
        return emit(Op::sqrt_op, a.id, -1, std::move(out));
    }

    Var reciprocal(Var a) {
        Tensor out = node(a).value;
        for (double& v : out.values) v = 1.0 / v;
        return emit(Op::reciprocal, a.id, -1, std::move(out));
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double v : node(a).value.values) s += v;
        return emit(Op::sum, a.id, -1, Tensor::scalar(s));
    }

    Var mean(Var a) {
        const Tensor& A = node(a).value;
        if (A.numel() == 0) throw std::invalid_argument("mean: empty tensor");
        double s = 0.0;
        for (double v : A.values) s += v;
        return emit(Op::mean, a.id, -1, Tensor::scalar(s / static_cast<double>(A.numel())));
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& A = node(a).value;
        const Tensor& B = node(b).value;
        if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row counts differ");
        Tensor out = Tensor::zeros(A.rows(), A.cols() + B.cols());
        for (std::size_t r = 0; r < A.rows(); ++r) {
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c);
            for (std::size_t c = 0; c < B.cols(); ++c) out.at(r, A.cols() + c) = B.at(r, c);
        }
        return emit(Op::concat_cols, a.id, b.id, std::move(out));
    }

    /// Columns [c0, c1).
    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Tensor& A = node(a).value;
        if (c0 >= c1 || c1 > A.cols()) throw std::invalid_argument("slice_cols: bad range");
        Tensor out = Tensor::zeros(A.rows(), c1 - c0);
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = A.at(r, c);
        Var v = emit(Op::slice_cols, a.id, -1, std::move(out));
        node(v).i0 = c0;
        node(v).i1 = c1;
        return v;
    }

    /// Place a into a zero matrix of `total` columns starting at column c0.
    Var pad_cols(Var a, std::size_t c0, std::size_t total) {
        const Tensor& A = node(a).value;
        if (c0 + A.cols() > total) throw std::invalid_argument("pad_cols: block does not fit");
        Tensor out = Tensor::zeros(A.rows(), total);
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c0 + c) = A.at(r, c);
        Var v = emit(Op::pad_cols, a.id, -1, std::move(out));
        node(v).i0 = c0;
        node(v).i1 = total;
        return v;
    }

    Var transpose(Var a) {
        const Tensor& A = node(a).value;
        Tensor out = Tensor::zeros(A.cols(), A.rows());
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
        return emit(Op::transpose, a.id, -1, std::move(out));
    }

    Var reduce_sum_rows(Var a) {
        const Tensor& A = node(a).value;
        Tensor out = Tensor::zeros(1, A.cols());
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.values[c] += A.at(r, c);
        return emit(Op::reduce_sum_rows, a.id, -1, std::move(out));
    }

    Var reduce_sum_cols(Var a) {
        const Tensor& A = node(a).value;
        Tensor out = Tensor::zeros(A.rows(), 1);
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.values[r] += A.at(r, c);
        return emit(Op::reduce_sum_cols, a.id, -1, std::move(out));
    }

    Var broadcast_rows(Var a, std::size_t n) {
        const Tensor& A = node(a).value;
        if (A.rows() != 1) throw std::invalid_argument("broadcast_rows: expected row vector");
        Tensor out = Tensor::zeros(n, A.cols());
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.values[c];
        return emit(Op::broadcast_rows, a.id, -1, std::move(out));
    }

    Var broadcast_cols(Var a, std::size_t d) {
        const Tensor& A = node(a).value;
        if (A.cols() != 1) throw std::invalid_argument("broadcast_cols: expected column vector");
        Tensor out = Tensor::zeros(A.rows(), d);
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < d; ++c) out.at(r, c) = A.values[r];
        return emit(Op::broadcast_cols, a.id, -1, std::move(out));
    }

    Var broadcast_scalar(Var a, std::size_t rows, std::size_t cols) {
        const Tensor& A = node(a).value;
        if (!A.is_scalar()) throw std::invalid_argument("broadcast_scalar: expected scalar");
        Tensor out = Tensor::zeros(rows, cols);
        for (double& v : out.values) v = A.values[0];
        return emit(Op::broadcast_scalar, a.id, -1, std::move(out));
    }

    /// D[i][j] = ||x_i - y_j||^2 for row sets X (n x d), Y (m x d).
    Var pairwise_sq_dists(Var x, Var y) {
        const Tensor& X = node(x).value;
        const Tensor& Y = node(y).value;
        if (X.cols() != Y.cols())
            throw std::invalid_argument("pairwise_sq_dists: feature dimensions differ");
        const std::size_t n = X.rows(), m = Y.rows(), d = X.cols();
        Tensor out = Tensor::zeros(n, m);
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = X.values.data() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double* yj = Y.values.data() + j * d;
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = xi[k] - yj[k];
                    s += diff * diff;
                }
                out.at(i, j) = s;
            }
        }
        return emit(Op::pairwise_sq_dists, x.id, y.id, std::move(out));
    }

    /// Row lookup: out[i] = table[labels[i]].
    Var embed_rows(Var table, const std::vector<int>& labels) {
        const Tensor& T = node(table).value;
        Tensor out = Tensor::zeros(labels.size(), T.cols());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int l = labels[i];
            if (l < 0 || static_cast<std::size_t>(l) >= T.rows())
                throw std::out_of_range("embed_rows: label " + std::to_string(l) + " out of range");
            for (std::size_t c = 0; c < T.cols(); ++c) out.at(i, c) = T.at(static_cast<std::size_t>(l), c);
        }
        Var v = emit(Op::embed_rows, table.id, -1, std::move(out));
        node(v).labels = labels;
        return v;
    }

    /// Adjoint of embed_rows: out has n_rows rows, out[labels[i]] += a[i].
    Var scatter_rows(Var a, const std::vector<int>& labels, std::size_t n_rows) {
        const Tensor& A = node(a).value;
        if (labels.size() != A.rows()) throw std::invalid_argument("scatter_rows: label count mismatch");
        Tensor out = Tensor::zeros(n_rows, A.cols());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int l = labels[i];
            if (l < 0 || static_cast<std::size_t>(l) >= n_rows)
                throw std::out_of_range("scatter_rows: label out of range");
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(static_cast<std::size_t>(l), c) += A.at(i, c);
        }
        Var v = emit(Op::scatter_rows, a.id, -1, std::move(out));
        node(v).labels = labels;
        node(v).i0 = n_rows;
        return v;
    }

    // ---- differentiation ---------------------------------------------------

    /// Reverse-mode sweep from a scalar root. Gradient nodes are appended to
    /// this graph, so results remain differentiable.
    Gradients backward(Var root);

    /// d(root)/d(wrt) as a live node. Every op on a root-to-wrt path must be
    /// in the second-order subset.
    Var input_gradient_node(Var root, Var wrt);

private:
    friend class Gradients;

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double param = 0.0; // scale factor, added constant, leaky slope
        std::size_t i0 = 0, i1 = 0; // slice/pad bounds, scatter row count
        std::vector<int> labels;
        Tensor value;
    };

    Node& node(Var v) {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const {
        check(v);
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    void check(Var v) const {
        if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw std::logic_error("Var does not belong to this graph");
    }

    Var emit(Op op, int a, int b, Tensor value, double param = 0.0) {
        if (!value.all_finite())
            throw std::runtime_error(std::string("non-finite value produced by op '") + op_name(op) + "'");
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.param = param;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    /// Marks ancestors of root (inclusive) among ids <= root.
    std::vector<char> reachable_from(int root) const {
        std::vector<char> reach(static_cast<std::size_t>(root) + 1, 0);
        std::vector<int> stack{root};
        reach[static_cast<std::size_t>(root)] = 1;
        while (!stack.empty()) {
            const int id = stack.back();
            stack.pop_back();
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            for (int p : {n.a, n.b}) {
                if (p >= 0 && !reach[static_cast<std::size_t>(p)]) {
                    reach[static_cast<std::size_t>(p)] = 1;
                    stack.push_back(p);
                }
            }
        }
        return reach;
    }

    // Emits VJP nodes for `id` given its output gradient node gy, accumulating
    // into grad[]. Only called for reachable nodes with a gradient.
    void emit_vjps(int id, std::vector<int>& grad);

    void accumulate(std::vector<int>& grad, int target, Var contrib) {
        if (target < 0) return;
        if (grad[static_cast<std::size_t>(target)] < 0) {
            grad[static_cast<std::size_t>(target)] = contrib.id;
        } else {
            Var prev{this, grad[static_cast<std::size_t>(target)]};
            grad[static_cast<std::size_t>(target)] = add(prev, contrib).id;
        }
    }

    std::vector<Node> nodes_;
};

/// Result of a backward sweep: node id -> gradient node id.
class Gradients {
public:
    Gradients(Graph* g, std::vector<int> grad) : graph_(g), grad_(std::move(grad)) {}

    bool touched(Var x) const {
        return x.id >= 0 && static_cast<std::size_t>(x.id) < grad_.size() &&
               grad_[static_cast<std::size_t>(x.id)] >= 0;
    }

    /// Gradient as a live node; throws if untouched.
    Var var(Var x) const {
        if (!touched(x)) throw std::logic_error("Gradients::var: node has no gradient");
        return Var{graph_, grad_[static_cast<std::size_t>(x.id)]};
    }

    /// Gradient values; zeros for untouched nodes.
    Tensor tensor(Var x) const {
        if (!touched(x)) {
            const Tensor& v = graph_->node(x).value;
            Tensor z = v;
            std::fill(z.values.begin(), z.values.end(), 0.0);
            return z;
        }
        return graph_->value(var(x));
    }

private:
    Graph* graph_;
    std::vector<int> grad_;
};

inline void Graph::emit_vjps(int id, std::vector<int>& grad) {
    // Emitting VJP nodes may reallocate nodes_, so copy every attribute of
    // the node up front and re-fetch parents through Var handles.
    const Op op = nodes_[static_cast<std::size_t>(id)].op;
    const int a = nodes_[static_cast<std::size_t>(id)].a;
    const int b = nodes_[static_cast<std::size_t>(id)].b;
    const double param = nodes_[static_cast<std::size_t>(id)].param;
    const std::size_t i0 = nodes_[static_cast<std::size_t>(id)].i0;
    const std::vector<int> labels = nodes_[static_cast<std::size_t>(id)].labels;
    Var gy{this, grad[static_cast<std::size_t>(id)]};
    Var self{this, id};

    switch (op) {
        case Op::input:
        case Op::constant:
            break;
        case Op::matmul: {
            Var A{this, a}, B{this, b};
            accumulate(grad, a, matmul(gy, transpose(B)));
            accumulate(grad, b, matmul(transpose(A), gy));
            break;
        }
        case Op::add:
            accumulate(grad, a, gy);
            accumulate(grad, b, gy);
            break;
        case Op::add_rowvec:
            accumulate(grad, a, gy);
            accumulate(grad, b, reduce_sum_rows(gy));
            break;
        case Op::sub:
            accumulate(grad, a, gy);
            accumulate(grad, b, scale(gy, -1.0));
            break;
        case Op::mul: {
            Var A{this, a}, B{this, b};
            accumulate(grad, a, mul(gy, B));
            accumulate(grad, b, mul(gy, A));
            break;
        }
        case Op::scale:
            accumulate(grad, a, scale(gy, param));
            break;
        case Op::add_const:
            accumulate(grad, a, gy);
            break;
        case Op::leaky_relu: {
            // d/dx is piecewise constant; the mask enters as a constant so the
            // second-order term is zero almost everywhere, as it should be.
            const Tensor& x = nodes_[static_cast<std::size_t>(a)].value;
            Tensor mask = x;
            for (double& v : mask.values) v = v > 0.0 ? 1.0 : param;
            accumulate(grad, a, mul(gy, constant(std::move(mask))));
            break;
        }
        case Op::sigmoid: {
            Var one_minus = add_const(scale(self, -1.0), 1.0);
            accumulate(grad, a, mul(gy, mul(self, one_minus)));
            break;
        }
        case Op::softplus: {
            Var A{this, a};
            accumulate(grad, a, mul(gy, sigmoid(A)));
            break;
        }
        case Op::softmax_rows: {
            Var prod = mul(gy, self);
            Var rowdot = reduce_sum_cols(prod);
            Var centered = sub(gy, broadcast_cols(rowdot, value(self).cols()));
            accumulate(grad, a, mul(self, centered));
            break;
        }
        case Op::exp_op:
            accumulate(grad, a, mul(gy, self));
            break;
        case Op::log_op: {
            Var A{this, a};
            accumulate(grad, a, mul(gy, reciprocal(A)));
            break;
        }
        case Op::square: {
            Var A{this, a};
            accumulate(grad, a, mul(gy, scale(A, 2.0)));
            break;
        }
        case Op::sqrt_op:
            accumulate(grad, a, scale(mul(gy, reciprocal(self)), 0.5));
            break;
        case Op::reciprocal:
            accumulate(grad, a, scale(mul(gy, square(self)), -1.0));
            break;
        case Op::sum: {
            const Tensor& x = nodes_[static_cast<std::size_t>(a)].value;
            accumulate(grad, a, broadcast_scalar(gy, x.rows(), x.cols()));
            break;
        }
        case Op::mean: {
            const Tensor& x = nodes_[static_cast<std::size_t>(a)].value;
            const double inv_n = 1.0 / static_cast<double>(x.numel());
            accumulate(grad, a, scale(broadcast_scalar(gy, x.rows(), x.cols()), inv_n));
            break;
        }
        case Op::concat_cols: {
            const std::size_t ca = nodes_[static_cast<std::size_t>(a)].value.cols();
            const std::size_t cb = nodes_[static_cast<std::size_t>(b)].value.cols();
            accumulate(grad, a, slice_cols(gy, 0, ca));
            accumulate(grad, b, slice_cols(gy, ca, ca + cb));
            break;
        }
        case Op::slice_cols: {
            const std::size_t total = nodes_[static_cast<std::size_t>(a)].value.cols();
            accumulate(grad, a, pad_cols(gy, i0, total));
            break;
        }
        case Op::pad_cols: {
            const std::size_t ca = nodes_[static_cast<std::size_t>(a)].value.cols();
            accumulate(grad, a, slice_cols(gy, i0, i0 + ca));
            break;
        }
        case Op::transpose:
            accumulate(grad, a, transpose(gy));
            break;
        case Op::reduce_sum_rows: {
            const std::size_t rows = nodes_[static_cast<std::size_t>(a)].value.rows();
            accumulate(grad, a, broadcast_rows(gy, rows));
            break;
        }
        case Op::reduce_sum_cols: {
            const std::size_t cols = nodes_[static_cast<std::size_t>(a)].value.cols();
            accumulate(grad, a, broadcast_cols(gy, cols));
            break;
        }
        case Op::broadcast_rows:
            accumulate(grad, a, reduce_sum_rows(gy));
            break;
        case Op::broadcast_cols:
            accumulate(grad, a, reduce_sum_cols(gy));
            break;
        case Op::broadcast_scalar:
            accumulate(grad, a, sum(gy));
            break;
        case Op::pairwise_sq_dists: {
            Var X{this, a}, Y{this, b};
            const std::size_t d = value(X).cols();
            Var gx = scale(sub(mul(broadcast_cols(reduce_sum_cols(gy), d), X), matmul(gy, Y)), 2.0);
            accumulate(grad, a, gx);
            Var gyt = transpose(gy);
            Var gyv = scale(sub(mul(broadcast_cols(reduce_sum_cols(gyt), d), Y), matmul(gyt, X)), 2.0);
            accumulate(grad, b, gyv);
            break;
        }
        case Op::embed_rows: {
            const std::size_t n_rows = nodes_[static_cast<std::size_t>(a)].value.rows();
            accumulate(grad, a, scatter_rows(gy, labels, n_rows));
            break;
        }
        case Op::scatter_rows:
            accumulate(grad, a, embed_rows(gy, labels));
            break;
    }
}

inline Gradients Graph::backward(Var root) {
    check(root);
    if (!value(root).is_scalar())
        throw std::invalid_argument("backward: root must be scalar");

    const int root_id = root.id;
    const std::vector<char> reach = reachable_from(root_id);
    std::vector<int> grad(static_cast<std::size_t>(root_id) + 1, -1);
    grad[static_cast<std::size_t>(root_id)] = constant_scalar(1.0).id;

    for (int id = root_id; id >= 0; --id) {
        if (!reach[static_cast<std::size_t>(id)] || grad[static_cast<std::size_t>(id)] < 0) continue;
        emit_vjps(id, grad);
    }
    return Gradients(this, std::move(grad));
}

inline bool second_order_supported(Op op) {
    switch (op) {
        case Op::input:
        case Op::constant:
        case Op::matmul:
        case Op::add:
        case Op::add_rowvec:
        case Op::sub:
        case Op::mul:
        case Op::scale:
        case Op::add_const:
        case Op::leaky_relu:
        case Op::square:
        case Op::sqrt_op:
        case Op::reciprocal:
        case Op::sum:
        case Op::mean:
        case Op::concat_cols:
        case Op::slice_cols:
        case Op::pad_cols:
        case Op::transpose:
        case Op::reduce_sum_rows:
        case Op::reduce_sum_cols:
        case Op::broadcast_rows:
        case Op::broadcast_cols:
        case Op::broadcast_scalar:
            return true;
        default:
            return false;
    }
}

inline Var Graph::input_gradient_node(Var root, Var wrt) {
    check(root);
    check(wrt);
    if (!value(root).is_scalar())
        throw std::invalid_argument("input_gradient_node: root must be scalar");

    // Nodes lying on a root -> wrt path: ancestors of root that have wrt as
    // an ancestor. Everything on such a path must permit double backprop.
    const std::vector<char> above = reachable_from(root.id);
    std::vector<char> below(static_cast<std::size_t>(root.id) + 1, 0);
    if (wrt.id <= root.id) below[static_cast<std::size_t>(wrt.id)] = 1;
    for (int id = wrt.id + 1; id <= root.id; ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const bool from_wrt = (n.a >= 0 && below[static_cast<std::size_t>(n.a)]) ||
                              (n.b >= 0 && below[static_cast<std::size_t>(n.b)]);
        if (from_wrt) below[static_cast<std::size_t>(id)] = 1;
    }
    bool connected = false;
    for (int id = 0; id <= root.id; ++id) {
        if (!above[static_cast<std::size_t>(id)] || !below[static_cast<std::size_t>(id)]) continue;
        connected = true;
        const Op op = nodes_[static_cast<std::size_t>(id)].op;
        if (!second_order_supported(op))
            throw std::invalid_argument(std::string("input_gradient_node: op '") + op_name(op) +
                                        "' on the root-to-input path has no second-order support");
    }

    Gradients grads = backward(root);
    if (!connected || !grads.touched(wrt)) {
        // Gradient is identically zero; return a constant so downstream math works.
        Tensor z = value(wrt);
        std::fill(z.values.begin(), z.values.end(), 0.0);
        return constant(std::move(z));
    }
    return grads.var(wrt);
}

// Convenience operators for graph expressions.
inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }

} // namespace bcgan
