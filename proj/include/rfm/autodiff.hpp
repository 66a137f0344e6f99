#pragma once

// Tape-based reverse-mode automatic differentiation over dense real tensors.
//
// A Tape records primitive operations in creation order, so parents always
// precede children and a single reverse sweep visits every node once. Tensors
// are cheap handles (tape pointer + node index); the tape owns all storage.
// Tensors of rank 0, 1 and 2 are supported, stored as row-major matrices of
// shape 1x1, 1xn and rxc respectively.
//
// A tape and its tensors belong to one thread. Independent tapes can run
// concurrently; there is no global state.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rfm::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

enum class Op {
    leaf,
    add,
    sub,
    mul,
    matmul,
    scale,
    sum,
    mean,
    tanh,
    square_norm_rows,
    exp,
    log,
    logsumexp_mean,
};

constexpr std::string_view op_name(Op op) {
    switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::scale: return "scale";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::tanh: return "tanh";
    case Op::square_norm_rows: return "square_norm_rows";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::logsumexp_mean: return "logsumexp_mean";
    }
    return "unknown";
}

class ShapeError : public std::invalid_argument {
public:
    ShapeError(Op op, Shape lhs, Shape rhs)
        : std::invalid_argument(std::string(op_name(op)) + ": incompatible shapes " +
                                to_string(lhs) + " and " + to_string(rhs)),
          op_(op), lhs_(std::move(lhs)), rhs_(std::move(rhs)) {}

    Op op() const { return op_; }
    const Shape& lhs() const { return lhs_; }
    const Shape& rhs() const { return rhs_; }

private:
    Op op_;
    Shape lhs_;
    Shape rhs_;
};

class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(Op op)
        : std::runtime_error(std::string(op_name(op)) + ": produced a non-finite value"), op_(op) {}

    Op op() const { return op_; }

private:
    Op op_;
};

namespace kernels {

namespace detail {

using Packet = Eigen::internal::packet_traits<double>::type;
inline constexpr long kPacket = Eigen::internal::packet_traits<double>::size;
inline constexpr long kColBlock = 4 * kPacket;

template <int Rows>
inline void gemm_block(const double* a, long k, const double* w, long c, double* out, long j0) {
    using namespace Eigen::internal;
    Packet acc[Rows][4];
    for (int r = 0; r < Rows; ++r)
        for (int j = 0; j < 4; ++j) acc[r][j] = pset1<Packet>(0.0);
    for (long p = 0; p < k; ++p) {
        const double* wr = w + p * c + j0;
        const Packet w0 = ploadu<Packet>(wr);
        const Packet w1 = ploadu<Packet>(wr + kPacket);
        const Packet w2 = ploadu<Packet>(wr + 2 * kPacket);
        const Packet w3 = ploadu<Packet>(wr + 3 * kPacket);
        for (int r = 0; r < Rows; ++r) {
            const Packet s = pset1<Packet>(a[r * k + p]);
            acc[r][0] = pmadd(s, w0, acc[r][0]);
            acc[r][1] = pmadd(s, w1, acc[r][1]);
            acc[r][2] = pmadd(s, w2, acc[r][2]);
            acc[r][3] = pmadd(s, w3, acc[r][3]);
        }
    }
    for (int r = 0; r < Rows; ++r)
        for (int j = 0; j < 4; ++j) pstoreu(out + r * c + j0 + j * kPacket, acc[r][j]);
}

inline void gemm_tail(const double* a, long k, const double* w, long c, double* out, long j0) {
    for (long j = j0; j < c; ++j) {
        double s = 0.0;
        for (long p = 0; p < k; ++p) s = std::fma(a[p], w[p * c + j], s);
        out[j] = s;
    }
}

} // namespace detail

// a * w where every output row is computed by the same instruction sequence
// regardless of how many rows are in the batch, so results are bitwise
// independent of batch composition.
inline Matrix matmul_rows(const Matrix& a, const Matrix& w) {
    using namespace detail;
    const long rows = a.rows();
    const long k = a.cols();
    const long c = w.cols();
    Matrix out(rows, c);
    const double* pa = a.data();
    const double* pw = w.data();
    double* po = out.data();
    long i = 0;
    for (; i + 4 <= rows; i += 4) {
        long j = 0;
        for (; j + kColBlock <= c; j += kColBlock) gemm_block<4>(pa + i * k, k, pw, c, po + i * c, j);
        for (long r = 0; r < 4; ++r) gemm_tail(pa + (i + r) * k, k, pw, c, po + (i + r) * c, j);
    }
    for (; i < rows; ++i) {
        long j = 0;
        for (; j + kColBlock <= c; j += kColBlock) gemm_block<1>(pa + i * k, k, pw, c, po + i * c, j);
        gemm_tail(pa + i * k, k, pw, c, po + i * c, j);
    }
    return out;
}

// tanh(x) = 1 - 2 / (exp(2x) + 1). Eigen vectorizes exp for doubles but not
// tanh; the clamp keeps exp finite and tanh(20) already rounds to 1.
inline Matrix tanh(const Matrix& x) {
    Matrix y = 1.0 - 2.0 / ((2.0 * x.array().min(20.0).max(-20.0)).exp() + 1.0);
    return y;
}

} // namespace kernels

class Tape;

class Tensor {
public:
    Tensor() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

    const Shape& shape() const;
    const Matrix& value() const;
    std::size_t numel() const { return static_cast<std::size_t>(value().size()); }
    std::span<const double> data() const { return {value().data(), numel()}; }
    double item() const;

private:
    friend class Tape;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct TapeOptions {
    // Throw NonFiniteError as soon as any primitive produces NaN or Inf.
    bool check_finite = false;
};

class Tape {
public:
    explicit Tape(TapeOptions options = {}) : options_(options) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. `storage` must already have the row-major layout for `shape`.
    Tensor leaf(Matrix storage, Shape shape, bool requires_grad) {
        check_storage(storage, shape);
        return push(Op::leaf, std::move(storage), std::move(shape), {}, 0, 0.0, requires_grad, true);
    }
    Tensor variable(Matrix m) { return matrix_leaf(std::move(m), true); }
    Tensor constant(Matrix m) { return matrix_leaf(std::move(m), false); }
    Tensor vector(std::span<const double> v, bool requires_grad = false) {
        Matrix m(1, static_cast<Eigen::Index>(v.size()));
        std::copy(v.begin(), v.end(), m.data());
        return leaf(std::move(m), {v.size()}, requires_grad);
    }
    Tensor scalar(double v, bool requires_grad = false) {
        Matrix m(1, 1);
        m(0, 0) = v;
        return leaf(std::move(m), {}, requires_grad);
    }

    const Matrix& value(const Tensor& t) const { return node(t).value; }
    const Shape& shape(const Tensor& t) const { return node(t).shape; }
    bool requires_grad(const Tensor& t) const { return node(t).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Accumulated gradient of a leaf; zeros when nothing reached it.
    Matrix grad(const Tensor& t) const {
        const Node& n = node(t);
        if (n.has_grad) return n.grad;
        return Matrix::Zero(n.value.rows(), n.value.cols());
    }
    bool has_grad(const Tensor& t) const { return node(t).has_grad; }

    void zero_grad() {
        for (Node& n : nodes_) {
            n.grad.resize(0, 0);
            n.has_grad = false;
        }
    }

    // Reverse sweep from a rank-0 loss. Leaf gradients accumulate across calls
    // until zero_grad().
    void backward(const Tensor& loss);

    // Records a new node. Used by the primitive functions below.
    Tensor record(Op op, Matrix value, Shape shape, std::initializer_list<Tensor> parents,
                  double param = 0.0) {
        std::array<std::size_t, 2> ids{};
        std::size_t arity = 0;
        bool rg = false;
        for (const Tensor& p : parents) {
            if (p.tape_ != this) throw std::invalid_argument(std::string(op_name(op)) + ": tensor from another tape");
            ids[arity++] = p.id_;
            rg = rg || nodes_[p.id_].requires_grad;
        }
        if (options_.check_finite && !value.allFinite()) throw NonFiniteError(op);
        return push(op, std::move(value), std::move(shape), ids, arity, param, rg, false);
    }

private:
    struct Node {
        Op op;
        Shape shape;
        Matrix value;
        std::array<std::size_t, 2> parents;
        std::size_t arity;
        double param;
        bool requires_grad;
        bool is_leaf;
        Matrix grad;
        bool has_grad = false;
    };

    static void check_storage(const Matrix& m, const Shape& shape) {
        const bool ok = (shape.empty() && m.rows() == 1 && m.cols() == 1) ||
                        (shape.size() == 1 && m.rows() == 1 && static_cast<std::size_t>(m.cols()) == shape[0]) ||
                        (shape.size() == 2 && static_cast<std::size_t>(m.rows()) == shape[0] &&
                         static_cast<std::size_t>(m.cols()) == shape[1]);
        if (!ok)
            throw ShapeError(Op::leaf, shape,
                             {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    }

    Tensor matrix_leaf(Matrix m, bool requires_grad) {
        Shape s{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
        return leaf(std::move(m), std::move(s), requires_grad);
    }

    Tensor push(Op op, Matrix value, Shape shape, std::array<std::size_t, 2> parents, std::size_t arity,
                double param, bool requires_grad, bool is_leaf) {
        nodes_.push_back(Node{op, std::move(shape), std::move(value), parents, arity, param, requires_grad, is_leaf, {}});
        return Tensor(this, nodes_.size() - 1);
    }

    const Node& node(const Tensor& t) const {
        if (t.tape_ != this || t.id_ >= nodes_.size()) throw std::invalid_argument("tensor does not belong to this tape");
        return nodes_[t.id_];
    }

    friend class Tensor;

    TapeOptions options_;
    std::deque<Node> nodes_; // deque keeps value references stable while recording
};

inline const Shape& Tensor::shape() const {
    if (!tape_) throw std::logic_error("invalid tensor");
    return tape_->shape(*this);
}

inline const Matrix& Tensor::value() const {
    if (!tape_) throw std::logic_error("invalid tensor");
    return tape_->value(*this);
}

inline double Tensor::item() const {
    const Matrix& v = value();
    if (v.size() != 1) throw std::invalid_argument("item() on a tensor with " + std::to_string(v.size()) + " elements");
    return v(0, 0);
}

inline void Tape::backward(const Tensor& loss) {
    const Node& root = node(loss);
    if (!root.shape.empty()) throw std::invalid_argument("backward: loss must be a scalar, got shape " + to_string(root.shape));
    if (!root.requires_grad) return;

    const std::size_t n = loss.id_ + 1;
    std::vector<Matrix> adj(n);
    std::vector<char> live(n, 0);
    adj[loss.id_] = Matrix::Ones(1, 1);
    live[loss.id_] = 1;

    auto accumulate = [&](std::size_t p, const auto& expr) {
        if (!nodes_[p].requires_grad) return;
        if (live[p]) {
            adj[p] += expr;
        } else {
            adj[p] = expr;
            live[p] = 1;
        }
    };

    for (std::size_t i = n; i-- > 0;) {
        if (!live[i]) continue;
        Node& nd = nodes_[i];
        const Matrix& g = adj[i];
        if (nd.is_leaf) {
            if (nd.has_grad) {
                nd.grad += g;
            } else {
                nd.grad = g;
                nd.has_grad = true;
            }
            adj[i].resize(0, 0);
            continue;
        }
        const std::size_t a = nd.parents[0];
        const std::size_t b = nd.parents[1];
        switch (nd.op) {
        case Op::leaf: break;
        case Op::add:
        case Op::sub: {
            const double sign = nd.op == Op::add ? 1.0 : -1.0;
            accumulate(a, g);
            if (nodes_[b].requires_grad) {
                if (nodes_[b].shape.size() == 1 && nd.shape.size() == 2) {
                    Matrix gb = sign * g.colwise().sum();
                    accumulate(b, gb);
                } else {
                    accumulate(b, sign * g);
                }
            }
            break;
        }
        case Op::mul:
            accumulate(a, g.cwiseProduct(nodes_[b].value));
            accumulate(b, g.cwiseProduct(nodes_[a].value));
            break;
        case Op::matmul:
            if (nodes_[a].requires_grad) {
                Matrix ga = g * nodes_[b].value.transpose();
                accumulate(a, ga);
            }
            if (nodes_[b].requires_grad) {
                Matrix gb = nodes_[a].value.transpose() * g;
                accumulate(b, gb);
            }
            break;
        case Op::scale: accumulate(a, nd.param * g); break;
        case Op::sum: {
            const Matrix& v = nodes_[a].value;
            accumulate(a, Matrix::Constant(v.rows(), v.cols(), g(0, 0)));
            break;
        }
        case Op::mean: {
            const Matrix& v = nodes_[a].value;
            accumulate(a, Matrix::Constant(v.rows(), v.cols(), g(0, 0) / static_cast<double>(v.size())));
            break;
        }
        case Op::tanh: {
            Matrix ga = g.array() * (1.0 - nd.value.array().square());
            accumulate(a, ga);
            break;
        }
        case Op::square_norm_rows: {
            // g is 1 x rows
            Matrix ga = 2.0 * nodes_[a].value;
            ga.array().colwise() *= g.transpose().array().col(0);
            accumulate(a, ga);
            break;
        }
        case Op::exp: accumulate(a, g.cwiseProduct(nd.value)); break;
        case Op::log: accumulate(a, g.cwiseQuotient(nodes_[a].value)); break;
        case Op::logsumexp_mean: {
            // d/dv_i log(mean exp v) = exp(v_i - y) / B, the normalized Gibbs weights
            const Matrix& v = nodes_[a].value;
            const double y = nd.value(0, 0);
            const double inv_b = 1.0 / static_cast<double>(v.size());
            Matrix ga = (g(0, 0) * inv_b) * (v.array() - y).exp();
            accumulate(a, ga);
            break;
        }
        }
        adj[i].resize(0, 0);
    }
}

namespace detail {

inline Tape& tape_of(Op op, const Tensor& a) {
    if (!a.valid()) throw std::invalid_argument(std::string(op_name(op)) + ": invalid tensor");
    return *a.tape();
}

inline Tensor binary_elementwise(Op op, const Tensor& a, const Tensor& b) {
    Tape& tape = tape_of(op, a);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const Matrix& va = a.value();
    const Matrix& vb = b.value();
    if (sa == sb) {
        Matrix out;
        switch (op) {
        case Op::add: out = va + vb; break;
        case Op::sub: out = va - vb; break;
        default: out = va.cwiseProduct(vb); break;
        }
        return tape.record(op, std::move(out), sa, {a, b});
    }
    // Row-broadcast of a rank-1 bias over a rank-2 batch.
    if (op != Op::mul && sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0]) {
        Matrix out = va;
        if (op == Op::add)
            out.rowwise() += vb.row(0);
        else
            out.rowwise() -= vb.row(0);
        return tape.record(op, std::move(out), sa, {a, b});
    }
    throw ShapeError(op, sa, sb);
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_elementwise(Op::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_elementwise(Op::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_elementwise(Op::mul, a, b); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::tape_of(Op::matmul, a);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw ShapeError(Op::matmul, sa, sb);
    Matrix out = kernels::matmul_rows(a.value(), b.value());
    return tape.record(Op::matmul, std::move(out), {sa[0], sb[1]}, {a, b});
}

inline Tensor scale(const Tensor& a, double s) {
    Tape& tape = detail::tape_of(Op::scale, a);
    return tape.record(Op::scale, s * a.value(), a.shape(), {a}, s);
}

inline Tensor sum(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::sum, a);
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return tape.record(Op::sum, std::move(out), {}, {a});
}

inline Tensor mean(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::mean, a);
    if (a.numel() == 0) throw ShapeError(Op::mean, a.shape(), {});
    Matrix out(1, 1);
    out(0, 0) = a.value().mean();
    return tape.record(Op::mean, std::move(out), {}, {a});
}

inline Tensor tanh(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::tanh, a);
    return tape.record(Op::tanh, kernels::tanh(a.value()), a.shape(), {a});
}

inline Tensor exp(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::exp, a);
    Matrix out = a.value().array().exp();
    return tape.record(Op::exp, std::move(out), a.shape(), {a});
}

inline Tensor log(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::log, a);
    Matrix out = a.value().array().log();
    return tape.record(Op::log, std::move(out), a.shape(), {a});
}

inline Tensor square_norm_rows(const Tensor& a) {
    Tape& tape = detail::tape_of(Op::square_norm_rows, a);
    const Shape& sa = a.shape();
    if (sa.size() != 2) throw ShapeError(Op::square_norm_rows, sa, {});
    Matrix out = a.value().rowwise().squaredNorm().transpose();
    return tape.record(Op::square_norm_rows, std::move(out), {sa[0]}, {a});
}

// Stable log of the batch mean of exponentials: m + log1p(mean(expm1(v - m)))
// with m = max(v). The log1p/expm1 pair keeps full relative precision when
// the entries are nearly equal, which is the small-tilt regime.
inline double logsumexp_mean(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("logsumexp_mean: empty batch");
    const double m = *std::max_element(v.begin(), v.end());
    double acc = 0.0;
    for (double x : v) acc += std::expm1(x - m);
    return m + std::log1p(acc / static_cast<double>(v.size()));
}

inline Tensor logsumexp_mean(const Tensor& v) {
    Tape& tape = detail::tape_of(Op::logsumexp_mean, v);
    if (v.shape().size() != 1) throw ShapeError(Op::logsumexp_mean, v.shape(), {});
    Matrix out(1, 1);
    out(0, 0) = logsumexp_mean(v.data());
    return tape.record(Op::logsumexp_mean, std::move(out), {}, {v});
}

} // namespace rfm::ad
