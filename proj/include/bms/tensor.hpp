#pragma once

// Reverse-mode autodiff on a single-use tape. Tensors are row-major dense
// arrays; a Tensor either lives on a tape (node >= 0) or is a constant.
// Node ids are topologically ordered by construction and the backward pass
// walks them in exact reverse insertion order, so gradient accumulation
// order is fixed and results are reproducible run to run. Backward closures
// receive their own node id from the tape and must not rely on the node
// field of captured output tensors.
//
// Finiteness: ops whose result can leave the finite range on finite inputs
// (div, exp, log) check and throw DomainError; the training loop
// additionally rejects non-finite losses.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "bms/errors.hpp"
#include "bms/kernels.hpp"

namespace bms {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

template <typename Real>
class Tape;

template <typename Real>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<Real>> data;
    int node = -1;
    Tape<Real>* tape = nullptr;

    Tensor() = default;
    Tensor(Shape s, std::shared_ptr<std::vector<Real>> d) : shape(std::move(s)), data(std::move(d)) {}

    std::size_t size() const { return data ? data->size() : 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return size() == 1; }
    bool on_tape() const { return node >= 0 && tape != nullptr; }

    const Real* ptr() const { return data->data(); }
    Real* ptr() { return data->data(); }
    Real operator[](std::size_t i) const { return (*data)[i]; }

    Real item() const {
        if (!is_scalar()) throw NotScalar("item() on tensor of shape " + shape_str(shape));
        return (*data)[0];
    }

    static Tensor constant(Shape s, std::vector<Real> values) {
        if (numel(s) != values.size())
            throw ShapeMismatch("constant: shape " + shape_str(s) + " does not match " +
                                std::to_string(values.size()) + " values");
        return Tensor(std::move(s), std::make_shared<std::vector<Real>>(std::move(values)));
    }

    static Tensor zeros(Shape s) {
        auto d = std::make_shared<std::vector<Real>>(numel(s), Real(0));
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor full(Shape s, Real v) {
        auto d = std::make_shared<std::vector<Real>>(numel(s), v);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor scalar(Real v) { return full(Shape{}, v); }
};

template <typename Real>
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf sharing the given storage; gradients accumulate at it.
    Tensor<Real> watch(const Shape& shape, std::shared_ptr<std::vector<Real>> storage) {
        if (numel(shape) != storage->size()) throw ShapeMismatch("watch: shape/storage mismatch");
        Tensor<Real> t(shape, std::move(storage));
        t.tape = this;
        t.node = add_node(t.size(), nullptr);
        return t;
    }

    int add_node(std::size_t out_numel, BackwardFn backward_fn) {
        nodes_.push_back(NodeRec{std::move(backward_fn), out_numel});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Gradient accumulator for a node, zero-initialized on first touch.
    std::vector<Real>& grad(int node) {
        auto& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].out_numel, Real(0));
        return g;
    }

    bool grad_present(int node) const { return !grads_[static_cast<std::size_t>(node)].empty(); }

    void backward(const Tensor<Real>& loss) {
        if (used_) throw Error("tape is single-use: backward already ran");
        if (!loss.on_tape() || loss.tape != this) throw NotScalar("loss is not on this tape");
        if (!loss.is_scalar()) throw NotScalar("backward requires a scalar loss");
        used_ = true;
        grads_.assign(nodes_.size(), {});
        grad(loss.node)[0] = Real(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            const auto& nd = nodes_[static_cast<std::size_t>(i)];
            if (nd.backward && grad_present(i)) nd.backward(*this, i);
        }
    }

    // Read after backward. Unreached leaves report zeros.
    const std::vector<Real>& grad_of(const Tensor<Real>& t) {
        if (!t.on_tape() || t.tape != this) throw Error("grad_of: tensor is not on this tape");
        return grad(t.node);
    }

    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return used_; }

  private:
    struct NodeRec {
        BackwardFn backward;
        std::size_t out_numel;
    };
    std::vector<NodeRec> nodes_;
    std::vector<std::vector<Real>> grads_;
    bool used_ = false;
};

namespace ops {

namespace detail {

template <typename Real>
Tape<Real>* joint_tape(const Tensor<Real>& a) {
    return a.on_tape() ? a.tape : nullptr;
}

template <typename Real, typename... Ts>
Tape<Real>* joint_tape(const Tensor<Real>& a, const Ts&... rest) {
    Tape<Real>* t = joint_tape(rest...);
    if (a.on_tape()) {
        if (t && t != a.tape) throw Error("operands live on different tapes");
        return a.tape;
    }
    return t;
}

template <typename Real>
Tensor<Real> make_out(Shape shape) {
    return Tensor<Real>::zeros(std::move(shape));
}

template <typename Real, typename Fn>
void attach(Tensor<Real>& out, Tape<Real>* tape, Fn&& fn) {
    if (!tape) return;
    out.tape = tape;
    out.node = tape->add_node(out.size(), std::forward<Fn>(fn));
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* what) {
    for (Real v : *t.data)
        if (!std::isfinite(v)) throw DomainError(std::string(what) + " produced a non-finite value");
}

}  // namespace detail

enum class Act { none, relu, tanh };

// ---------- elementwise binary ----------

template <typename Real, typename FwdK, typename Bwd>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b, const char* name, FwdK fwd,
                       Bwd bwd) {
    require(a.shape == b.shape, std::string(name) + ": shapes " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tape<Real>* tape = detail::joint_tape(a, b);
    auto out = detail::make_out<Real>(a.shape);
    fwd(a.ptr(), b.ptr(), out.ptr(), a.size());
    detail::attach(out, tape,
                   [a, b, od = out.data, bwd](Tape<Real>& tp, int self) { bwd(tp, self, a, b, od); });
    return out;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    const auto& K = kern::kernels<Real>();
    return binary_op(a, b, "add", K.add,
                     [](Tape<Real>& tp, int self, const Tensor<Real>& a_, const Tensor<Real>& b_,
                        const std::shared_ptr<std::vector<Real>>&) {
                         const auto& g = tp.grad(self);
                         const auto& Kb = kern::kernels<Real>();
                         if (a_.on_tape()) Kb.axpy(Real(1), g.data(), tp.grad(a_.node).data(), g.size());
                         if (b_.on_tape()) Kb.axpy(Real(1), g.data(), tp.grad(b_.node).data(), g.size());
                     });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    const auto& K = kern::kernels<Real>();
    return binary_op(a, b, "sub", K.sub,
                     [](Tape<Real>& tp, int self, const Tensor<Real>& a_, const Tensor<Real>& b_,
                        const std::shared_ptr<std::vector<Real>>&) {
                         const auto& g = tp.grad(self);
                         const auto& Kb = kern::kernels<Real>();
                         if (a_.on_tape()) Kb.axpy(Real(1), g.data(), tp.grad(a_.node).data(), g.size());
                         if (b_.on_tape()) Kb.axpy(Real(-1), g.data(), tp.grad(b_.node).data(), g.size());
                     });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    const auto& K = kern::kernels<Real>();
    return binary_op(a, b, "mul", K.mul,
                     [](Tape<Real>& tp, int self, const Tensor<Real>& a_, const Tensor<Real>& b_,
                        const std::shared_ptr<std::vector<Real>>&) {
                         const auto& g = tp.grad(self);
                         if (a_.on_tape()) {
                             auto& ga = tp.grad(a_.node);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*b_.data)[i];
                         }
                         if (b_.on_tape()) {
                             auto& gb = tp.grad(b_.node);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*a_.data)[i];
                         }
                     });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    const auto& K = kern::kernels<Real>();
    auto out = binary_op(a, b, "div", K.div,
                         [](Tape<Real>& tp, int self, const Tensor<Real>& a_, const Tensor<Real>& b_,
                            const std::shared_ptr<std::vector<Real>>& od) {
                             const auto& g = tp.grad(self);
                             if (a_.on_tape()) {
                                 auto& ga = tp.grad(a_.node);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*b_.data)[i];
                             }
                             if (b_.on_tape()) {
                                 auto& gb = tp.grad(b_.node);
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                     gb[i] -= g[i] * (*od)[i] / (*b_.data)[i];
                             }
                         });
    detail::check_finite(out, "div");
    return out;
}

// ---------- scalar-argument elementwise ----------

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = (*a.data)[i] * c;
    detail::attach(out, tape, [a, c](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        kern::kernels<Real>().axpy(c, g.data(), tp.grad(a.node).data(), g.size());
    });
    return out;
}

template <typename Real>
Tensor<Real> add_const(const Tensor<Real>& a, Real c) {
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = (*a.data)[i] + c;
    detail::attach(out, tape, [a](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        kern::kernels<Real>().axpy(Real(1), g.data(), tp.grad(a.node).data(), g.size());
    });
    return out;
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
    return scale(a, Real(-1));
}

// ---------- unary ----------

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> unary_op(const Tensor<Real>& a, Fwd f, Bwd bwd) {
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = f((*a.data)[i]);
    detail::attach(out, tape, [a, od = out.data, bwd](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd((*a.data)[i], (*od)[i]);
    });
    return out;
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
    return unary_op(
        a, [](Real x) { return std::tanh(x); },
        [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    return unary_op(
        a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    return unary_op(
        a, [](Real x) { return x > Real(0) ? x : Real(0); },
        [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
    auto out = unary_op(
        a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
    detail::check_finite(out, "exp");
    return out;
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
    for (Real v : *a.data)
        if (!(v > Real(0))) throw DomainError("log of non-positive value");
    return unary_op(
        a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& a) {
    return unary_op(
        a, [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

// ---------- reductions ----------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = Tensor<Real>::scalar(kern::kernels<Real>().sum(a.ptr(), a.size()));
    detail::attach(out, tape, [a](Tape<Real>& tp, int self) {
        Real g = tp.grad(self)[0];
        auto& ga = tp.grad(a.node);
        for (auto& v : ga) v += g;
    });
    return out;
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    if (a.size() == 0) throw EmptyInput("mean of empty tensor");
    return scale(sum(a), Real(1) / Real(a.size()));
}

namespace detail {
template <typename Real>
std::pair<std::size_t, std::size_t> rows_cols(const Tensor<Real>& a, const char* name) {
    require(a.rank() >= 1 && a.size() > 0, std::string(name) + ": empty input");
    std::size_t rows = static_cast<std::size_t>(a.shape[0]);
    return {rows, a.size() / rows};
}
}  // namespace detail

// Per-row sum over all trailing dimensions: [R, ...] -> [R].
template <typename Real>
Tensor<Real> row_sum(const Tensor<Real>& a) {
    auto [rows, cols] = detail::rows_cols(a, "row_sum");
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>({static_cast<int>(rows)});
    const auto& K = kern::kernels<Real>();
    for (std::size_t r = 0; r < rows; ++r) (*out.data)[r] = K.sum(a.ptr() + r * cols, cols);
    detail::attach(out, tape, [a, rows = rows, cols = cols](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
    });
    return out;
}

template <typename Real>
Tensor<Real> row_mean(const Tensor<Real>& a) {
    auto [rows, cols] = detail::rows_cols(a, "row_mean");
    (void)rows;
    return scale(row_sum(a), Real(1) / Real(cols));
}

// Max over a vector; the full gradient routes to the first maximal index.
template <typename Real>
Tensor<Real> vmax(const Tensor<Real>& a, int* arg_out = nullptr) {
    if (a.size() == 0) throw EmptyInput("max of empty tensor");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < a.size(); ++i)
        if ((*a.data)[i] > (*a.data)[arg]) arg = i;
    if (arg_out) *arg_out = static_cast<int>(arg);
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = Tensor<Real>::scalar((*a.data)[arg]);
    detail::attach(out, tape, [a, arg](Tape<Real>& tp, int self) {
        tp.grad(a.node)[arg] += tp.grad(self)[0];
    });
    return out;
}

// Per-row max with first-index tie break; optionally reports argmax per row.
template <typename Real>
Tensor<Real> row_max(const Tensor<Real>& a, std::vector<int>* args_out = nullptr) {
    auto [rows, cols] = detail::rows_cols(a, "row_max");
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>({static_cast<int>(rows)});
    auto args = std::make_shared<std::vector<std::size_t>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = a.ptr() + r * cols;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (row[c] > row[arg]) arg = c;
        (*args)[r] = arg;
        (*out.data)[r] = row[arg];
    }
    if (args_out) {
        args_out->resize(rows);
        for (std::size_t r = 0; r < rows; ++r) (*args_out)[r] = static_cast<int>((*args)[r]);
    }
    detail::attach(out, tape, [a, args, cols = cols](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        for (std::size_t r = 0; r < g.size(); ++r) ga[r * cols + (*args)[r]] += g[r];
    });
    return out;
}

// max(v) + log(sum(exp(v - max))); overflow-free for any finite input.
template <typename Real>
Tensor<Real> logsumexp(const Tensor<Real>& v) {
    if (v.size() == 0) throw EmptyInput("logsumexp of empty tensor");
    Tape<Real>* tape = detail::joint_tape(v);
    const Real m = kern::kernels<Real>().max(v.ptr(), v.size());
    Real s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += std::exp((*v.data)[i] - m);
    auto out = Tensor<Real>::scalar(m + std::log(s));
    detail::attach(out, tape, [v, od = out.data](Tape<Real>& tp, int self) {
        Real g = tp.grad(self)[0];
        auto& gv = tp.grad(v.node);
        const Real lse = (*od)[0];
        for (std::size_t i = 0; i < v.size(); ++i) gv[i] += g * std::exp((*v.data)[i] - lse);
    });
    return out;
}

template <typename Real>
Tensor<Real> row_logsumexp(const Tensor<Real>& a) {
    auto [rows, cols] = detail::rows_cols(a, "row_logsumexp");
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>({static_cast<int>(rows)});
    const auto& K = kern::kernels<Real>();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = a.ptr() + r * cols;
        const Real m = K.max(row, cols);
        Real s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
        (*out.data)[r] = m + std::log(s);
    }
    detail::attach(out, tape, [a, od = out.data, rows = rows, cols = cols](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        for (std::size_t r = 0; r < rows; ++r) {
            const Real lse = (*od)[r];
            const Real* row = a.ptr() + r * cols;
            for (std::size_t c = 0; c < cols; ++c)
                ga[r * cols + c] += g[r] * std::exp(row[c] - lse);
        }
    });
    return out;
}

// ---------- linear algebra ----------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    require(a.shape[1] == b.shape[0], "matmul: inner extents " + std::to_string(a.shape[1]) +
                                          " vs " + std::to_string(b.shape[0]));
    const std::size_t M = static_cast<std::size_t>(a.shape[0]);
    const std::size_t Kd = static_cast<std::size_t>(a.shape[1]);
    const std::size_t N = static_cast<std::size_t>(b.shape[1]);
    Tape<Real>* tape = detail::joint_tape(a, b);
    auto out = detail::make_out<Real>({a.shape[0], b.shape[1]});
    const auto& K = kern::kernels<Real>();
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < Kd; ++k)
            K.axpy((*a.data)[i * Kd + k], b.ptr() + k * N, out.ptr() + i * N, N);
    detail::attach(out, tape, [a, b, M, Kd, N](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K2 = kern::kernels<Real>();
        if (a.on_tape()) {
            auto& ga = tp.grad(a.node);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < Kd; ++k)
                    ga[i * Kd + k] += K2.dot(g.data() + i * N, b.ptr() + k * N, N);
        }
        if (b.on_tape()) {
            auto& gb = tp.grad(b.node);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < Kd; ++k)
                    K2.axpy((*a.data)[i * Kd + k], g.data() + i * N, gb.data() + k * N, N);
        }
    });
    return out;
}

namespace detail {
template <typename Real>
inline Real apply_act(Real x, Act act) {
    switch (act) {
        case Act::relu: return x > Real(0) ? x : Real(0);
        case Act::tanh: return std::tanh(x);
        default: return x;
    }
}
template <typename Real>
inline Real act_grad(Real pre, Real post, Act act) {
    switch (act) {
        case Act::relu: return pre > Real(0) ? Real(1) : Real(0);
        case Act::tanh: return Real(1) - post * post;
        default: return Real(1);
    }
}
}  // namespace detail

// activation(x . W^T + b) for row-batched x: x [R,I], W [O,I], b [O] -> [R,O].
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    Act act = Act::none) {
    require(x.rank() >= 1 && w.rank() == 2, "linear: x rank>=1, w rank 2");
    const bool vec_in = x.rank() == 1;
    const std::size_t R = vec_in ? 1 : static_cast<std::size_t>(x.shape[0]);
    const std::size_t I = static_cast<std::size_t>(vec_in ? x.shape[0] : x.shape[1]);
    const std::size_t O = static_cast<std::size_t>(w.shape[0]);
    require(static_cast<std::size_t>(w.shape[1]) == I,
            "linear: w expects input " + std::to_string(w.shape[1]) + ", got " + std::to_string(I));
    require(b.size() == O, "linear: bias length");
    Tape<Real>* tape = detail::joint_tape(x, w, b);
    Shape out_shape = vec_in ? Shape{static_cast<int>(O)} : Shape{static_cast<int>(R), static_cast<int>(O)};
    auto pre = std::make_shared<std::vector<Real>>(R * O);
    const auto& K = kern::kernels<Real>();
    for (std::size_t r = 0; r < R; ++r) {
        Real* prow = pre->data() + r * O;
        const Real* xrow = x.ptr() + r * I;
        for (std::size_t o = 0; o < O; ++o) prow[o] = K.dot(xrow, w.ptr() + o * I, I) + (*b.data)[o];
    }
    auto out = detail::make_out<Real>(out_shape);
    for (std::size_t i = 0; i < R * O; ++i) (*out.data)[i] = detail::apply_act((*pre)[i], act);
    detail::attach(out, tape, [x, w, b, od = out.data, pre, act, R, I, O](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K2 = kern::kernels<Real>();
        std::vector<Real> gp(R * O);
        for (std::size_t i = 0; i < R * O; ++i)
            gp[i] = g[i] * detail::act_grad((*pre)[i], (*od)[i], act);
        if (x.on_tape()) {
            auto& gx = tp.grad(x.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(gp[r * O + o], w.ptr() + o * I, gx.data() + r * I, I);
        }
        if (w.on_tape()) {
            auto& gw = tp.grad(w.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(gp[r * O + o], x.ptr() + r * I, gw.data() + o * I, I);
        }
        if (b.on_tape()) {
            auto& gb = tp.grad(b.node);
            for (std::size_t r = 0; r < R; ++r)
                K2.axpy(Real(1), gp.data() + r * O, gb.data(), O);
        }
    });
    return out;
}

// x . Wx^T + h . Wh^T + b, the recurrent-cell preactivation. x [R,Dx], h [R,Dh].
template <typename Real>
Tensor<Real> linear2(const Tensor<Real>& x, const Tensor<Real>& wx, const Tensor<Real>& h,
                     const Tensor<Real>& wh, const Tensor<Real>& b) {
    require(x.rank() == 2 && h.rank() == 2, "linear2: inputs rank 2");
    require(x.shape[0] == h.shape[0], "linear2: row counts differ");
    const std::size_t R = static_cast<std::size_t>(x.shape[0]);
    const std::size_t Dx = static_cast<std::size_t>(x.shape[1]);
    const std::size_t Dh = static_cast<std::size_t>(h.shape[1]);
    const std::size_t O = static_cast<std::size_t>(wx.shape[0]);
    require(wx.rank() == 2 && static_cast<std::size_t>(wx.shape[1]) == Dx, "linear2: wx shape");
    require(wh.rank() == 2 && static_cast<std::size_t>(wh.shape[0]) == O &&
                static_cast<std::size_t>(wh.shape[1]) == Dh,
            "linear2: wh shape");
    require(b.size() == O, "linear2: bias length");
    Tape<Real>* tape = detail::joint_tape(x, wx, h, wh, b);
    auto out = detail::make_out<Real>({static_cast<int>(R), static_cast<int>(O)});
    const auto& K = kern::kernels<Real>();
    for (std::size_t r = 0; r < R; ++r) {
        Real* orow = out.ptr() + r * O;
        const Real* xrow = x.ptr() + r * Dx;
        const Real* hrow = h.ptr() + r * Dh;
        for (std::size_t o = 0; o < O; ++o)
            orow[o] = K.dot(xrow, wx.ptr() + o * Dx, Dx) + K.dot(hrow, wh.ptr() + o * Dh, Dh) +
                      (*b.data)[o];
    }
    detail::attach(out, tape, [x, wx, h, wh, b, R, Dx, Dh, O](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K2 = kern::kernels<Real>();
        if (x.on_tape()) {
            auto& gx = tp.grad(x.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(g[r * O + o], wx.ptr() + o * Dx, gx.data() + r * Dx, Dx);
        }
        if (wx.on_tape()) {
            auto& gw = tp.grad(wx.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(g[r * O + o], x.ptr() + r * Dx, gw.data() + o * Dx, Dx);
        }
        if (h.on_tape()) {
            auto& gh = tp.grad(h.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(g[r * O + o], wh.ptr() + o * Dh, gh.data() + r * Dh, Dh);
        }
        if (wh.on_tape()) {
            auto& gw = tp.grad(wh.node);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o)
                    K2.axpy(g[r * O + o], h.ptr() + r * Dh, gw.data() + o * Dh, Dh);
        }
        if (b.on_tape()) {
            auto& gb = tp.grad(b.node);
            for (std::size_t r = 0; r < R; ++r) K2.axpy(Real(1), g.data() + r * O, gb.data(), O);
        }
    });
    return out;
}

// Broadcast bias add over the last axis: t [R,C] (or [C]) + b [C].
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& t, const Tensor<Real>& b) {
    require(b.rank() == 1, "add_bias: bias must be rank-1");
    const std::size_t C = b.size();
    require(t.size() % C == 0 && static_cast<std::size_t>(t.shape.back()) == C,
            "add_bias: trailing extent mismatch");
    const std::size_t R = t.size() / C;
    Tape<Real>* tape = detail::joint_tape(t, b);
    auto out = detail::make_out<Real>(t.shape);
    const auto& K = kern::kernels<Real>();
    for (std::size_t r = 0; r < R; ++r) {
        K.add(t.ptr() + r * C, b.ptr(), out.ptr() + r * C, C);
    }
    detail::attach(out, tape, [t, b, R, C](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K2 = kern::kernels<Real>();
        if (t.on_tape()) K2.axpy(Real(1), g.data(), tp.grad(t.node).data(), g.size());
        if (b.on_tape()) {
            auto& gb = tp.grad(b.node);
            for (std::size_t r = 0; r < R; ++r) K2.axpy(Real(1), g.data() + r * C, gb.data(), C);
        }
    });
    return out;
}

// ---------- layout ----------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape s) {
    require(numel(s) == a.size(), "reshape: element count");
    Tape<Real>* tape = detail::joint_tape(a);
    Tensor<Real> out(std::move(s), std::make_shared<std::vector<Real>>(*a.data));
    detail::attach(out, tape, [a](Tape<Real>& tp, int self) {
        kern::kernels<Real>().axpy(Real(1), tp.grad(self).data(), tp.grad(a.node).data(), a.size());
    });
    return out;
}

// Concatenate along the last axis; all inputs share leading extents.
template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw EmptyInput("concat of nothing");
    const int rank = parts[0].rank();
    std::size_t rows = rank <= 1 ? 1 : numel(parts[0].shape) / static_cast<std::size_t>(parts[0].shape.back());
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        require(p.rank() == rank, "concat: rank mismatch");
        std::size_t pr = rank <= 1 ? 1 : numel(p.shape) / static_cast<std::size_t>(p.shape.back());
        require(pr == rows, "concat: leading extents differ");
        total_c += static_cast<std::size_t>(p.shape.back());
    }
    Shape out_shape = parts[0].shape;
    out_shape.back() = static_cast<int>(total_c);
    Tape<Real>* tape = nullptr;
    for (const auto& p : parts)
        if (p.on_tape()) tape = p.tape;
    auto out = detail::make_out<Real>(out_shape);
    std::size_t col0 = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        const std::size_t pc = static_cast<std::size_t>(p.shape.back());
        offsets.push_back(col0);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.ptr() + r * pc, pc, out.ptr() + r * total_c + col0);
        col0 += pc;
    }
    detail::attach(out, tape, [parts, offsets, rows, total_c](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (!parts[k].on_tape()) continue;
            auto& gp = tp.grad(parts[k].node);
            const std::size_t pc = static_cast<std::size_t>(parts[k].shape.back());
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < pc; ++c)
                    gp[r * pc + c] += g[r * total_c + offsets[k] + c];
        }
    });
    return out;
}

// Columns [c0, c1) of the last axis.
template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int c0, int c1) {
    const int C = a.shape.back();
    require(0 <= c0 && c0 < c1 && c1 <= C, "slice: bad column range");
    const std::size_t rows = a.size() / static_cast<std::size_t>(C);
    const std::size_t w = static_cast<std::size_t>(c1 - c0);
    Shape out_shape = a.shape;
    out_shape.back() = static_cast<int>(w);
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(a.ptr() + r * static_cast<std::size_t>(C) + static_cast<std::size_t>(c0), w,
                    out.ptr() + r * w);
    detail::attach(out, tape, [a, rows, w, C, c0](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c)
                ga[r * static_cast<std::size_t>(C) + static_cast<std::size_t>(c0) + c] += g[r * w + c];
    });
    return out;
}

// Repeats each leading-axis slice `times` consecutively: [B, ...] -> [B*times, ...].
template <typename Real>
Tensor<Real> repeat_rows(const Tensor<Real>& a, int times) {
    require(a.rank() >= 1 && times >= 1, "repeat_rows: need rank>=1 and times>=1");
    const std::size_t B = static_cast<std::size_t>(a.shape[0]);
    const std::size_t rowlen = a.size() / B;
    Shape out_shape = a.shape;
    out_shape[0] = static_cast<int>(B) * times;
    Tape<Real>* tape = detail::joint_tape(a);
    auto out = detail::make_out<Real>(out_shape);
    for (std::size_t b = 0; b < B; ++b)
        for (int j = 0; j < times; ++j)
            std::copy_n(a.ptr() + b * rowlen, rowlen,
                        out.ptr() + (b * static_cast<std::size_t>(times) + static_cast<std::size_t>(j)) * rowlen);
    detail::attach(out, tape, [a, B, rowlen, times](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a.node);
        const auto& K = kern::kernels<Real>();
        for (std::size_t b = 0; b < B; ++b)
            for (int j = 0; j < times; ++j)
                K.axpy(Real(1),
                       g.data() + (b * static_cast<std::size_t>(times) + static_cast<std::size_t>(j)) * rowlen,
                       ga.data() + b * rowlen, rowlen);
    });
    return out;
}

// ---------- convolution / pooling ----------

enum class Padding { same, valid };

// Cross-correlation. x: [C,H,W] or [R,C,H,W]; k: [Co,C,kh,kw].
// same mode zero-pads and requires odd kernel extents; valid shrinks.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& k, Padding pad) {
    require(k.rank() == 4, "conv2d: kernel must be [Co,C,kh,kw]");
    require(x.rank() == 3 || x.rank() == 4, "conv2d: input must be [C,H,W] or [R,C,H,W]");
    const bool batched = x.rank() == 4;
    const std::size_t R = batched ? static_cast<std::size_t>(x.shape[0]) : 1;
    const int C = x.shape[batched ? 1 : 0];
    const int H = x.shape[batched ? 2 : 1];
    const int W = x.shape[batched ? 3 : 2];
    const int Co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    require(k.shape[1] == C, "conv2d: channel mismatch (" + std::to_string(k.shape[1]) + " vs " +
                                 std::to_string(C) + ")");
    if (pad == Padding::same) require(kh % 2 == 1 && kw % 2 == 1, "conv2d: same padding needs odd kernel");
    const int ph = pad == Padding::same ? (kh - 1) / 2 : 0;
    const int pw = pad == Padding::same ? (kw - 1) / 2 : 0;
    const int Ho = pad == Padding::same ? H : H - kh + 1;
    const int Wo = pad == Padding::same ? W : W - kw + 1;
    require(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than input in valid mode");
    Shape out_shape = batched ? Shape{static_cast<int>(R), Co, Ho, Wo} : Shape{Co, Ho, Wo};
    Tape<Real>* tape = detail::joint_tape(x, k);
    auto out = detail::make_out<Real>(out_shape);
    const auto& K = kern::kernels<Real>();
    const std::size_t in_plane = static_cast<std::size_t>(H) * W;
    const std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
    const std::size_t in_inst = static_cast<std::size_t>(C) * in_plane;
    const std::size_t out_inst = static_cast<std::size_t>(Co) * out_plane;
    for (std::size_t r = 0; r < R; ++r) {
        const Real* xin = x.ptr() + r * in_inst;
        Real* xout = out.ptr() + r * out_inst;
        for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < C; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const Real w = (*k.data)[((static_cast<std::size_t>(co) * C + ci) * kh + ky) * kw + kx];
                        if (w == Real(0)) continue;
                        const int dy = ky - ph, dx = kx - pw;
                        const int y0 = std::max(0, -dy), y1 = std::min(Ho, H - dy);
                        const int x0 = std::max(0, -dx), x1 = std::min(Wo, W - dx);
                        if (y0 >= y1 || x0 >= x1) continue;
                        for (int y = y0; y < y1; ++y)
                            K.axpy(w, xin + ci * in_plane + (y + dy) * W + (x0 + dx),
                                   xout + co * out_plane + y * Wo + x0,
                                   static_cast<std::size_t>(x1 - x0));
                    }
    }
    detail::attach(out, tape, [x, k, R, C, H, W, Co, kh, kw, ph, pw, Ho, Wo, in_plane, out_plane,
                               in_inst, out_inst](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K2 = kern::kernels<Real>();
        auto* gx = x.on_tape() ? &tp.grad(x.node) : nullptr;
        auto* gk = k.on_tape() ? &tp.grad(k.node) : nullptr;
        for (std::size_t r = 0; r < R; ++r) {
            const Real* xin = x.ptr() + r * in_inst;
            const Real* gout = g.data() + r * out_inst;
            for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < C; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::size_t widx =
                                ((static_cast<std::size_t>(co) * C + ci) * kh + ky) * kw + kx;
                            const Real w = (*k.data)[widx];
                            const int dy = ky - ph, dx = kx - pw;
                            const int y0 = std::max(0, -dy), y1 = std::min(Ho, H - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(Wo, W - dx);
                            if (y0 >= y1 || x0 >= x1) continue;
                            for (int y = y0; y < y1; ++y) {
                                const Real* grow = gout + co * out_plane + y * Wo + x0;
                                const std::size_t len = static_cast<std::size_t>(x1 - x0);
                                if (gx)
                                    K2.axpy(w, grow,
                                            gx->data() + r * in_inst + ci * in_plane + (y + dy) * W + (x0 + dx),
                                            len);
                                if (gk)
                                    (*gk)[widx] += K2.dot(grow, xin + ci * in_plane + (y + dy) * W + (x0 + dx), len);
                            }
                        }
        }
    });
    return out;
}

// Per-channel bias for conv outputs: t [...,C,H,W] + b [C].
template <typename Real>
Tensor<Real> add_chan_bias(const Tensor<Real>& t, const Tensor<Real>& b) {
    require(t.rank() >= 3 && b.rank() == 1, "add_chan_bias: ranks");
    const int C = t.shape[t.rank() - 3];
    require(static_cast<std::size_t>(C) == b.size(), "add_chan_bias: channel count");
    const std::size_t plane = static_cast<std::size_t>(t.shape[t.rank() - 2]) *
                              static_cast<std::size_t>(t.shape[t.rank() - 1]);
    const std::size_t groups = t.size() / (plane * static_cast<std::size_t>(C));
    Tape<Real>* tape = detail::joint_tape(t, b);
    auto out = detail::make_out<Real>(t.shape);
    for (std::size_t gidx = 0; gidx < groups; ++gidx)
        for (int c = 0; c < C; ++c) {
            const std::size_t off = (gidx * C + static_cast<std::size_t>(c)) * plane;
            for (std::size_t i = 0; i < plane; ++i) (*out.data)[off + i] = (*t.data)[off + i] + (*b.data)[c];
        }
    detail::attach(out, tape, [t, b, groups, C, plane](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K = kern::kernels<Real>();
        if (t.on_tape()) K.axpy(Real(1), g.data(), tp.grad(t.node).data(), g.size());
        if (b.on_tape()) {
            auto& gb = tp.grad(b.node);
            for (std::size_t gidx = 0; gidx < groups; ++gidx)
                for (int c = 0; c < C; ++c)
                    gb[c] += K.sum(g.data() + (gidx * C + static_cast<std::size_t>(c)) * plane, plane);
        }
    });
    return out;
}

// Channel-axis slice for conv tensors: [..., C, H, W] -> [..., c1-c0, H, W].
template <typename Real>
Tensor<Real> slice_chan(const Tensor<Real>& t, int c0, int c1) {
    require(t.rank() >= 3, "slice_chan: rank >= 3");
    const int C = t.shape[t.rank() - 3];
    require(0 <= c0 && c0 < c1 && c1 <= C, "slice_chan: bad channel range");
    const std::size_t plane = static_cast<std::size_t>(t.shape[t.rank() - 2]) *
                              static_cast<std::size_t>(t.shape[t.rank() - 1]);
    const std::size_t groups = t.size() / (plane * static_cast<std::size_t>(C));
    const std::size_t w = static_cast<std::size_t>(c1 - c0);
    Shape out_shape = t.shape;
    out_shape[t.rank() - 3] = static_cast<int>(w);
    Tape<Real>* tape = detail::joint_tape(t);
    auto out = detail::make_out<Real>(out_shape);
    for (std::size_t g = 0; g < groups; ++g)
        std::copy_n(t.ptr() + (g * static_cast<std::size_t>(C) + static_cast<std::size_t>(c0)) * plane,
                    w * plane, out.ptr() + g * w * plane);
    detail::attach(out, tape, [t, groups, C, c0, w, plane](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& gt = tp.grad(t.node);
        const auto& K = kern::kernels<Real>();
        for (std::size_t gi = 0; gi < groups; ++gi)
            K.axpy(Real(1), g.data() + gi * w * plane,
                   gt.data() + (gi * static_cast<std::size_t>(C) + static_cast<std::size_t>(c0)) * plane,
                   w * plane);
    });
    return out;
}

// Channel-axis concat for conv tensors sharing leading extents and H, W.
template <typename Real>
Tensor<Real> concat_chan(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw EmptyInput("concat_chan of nothing");
    const int rank = parts[0].rank();
    require(rank >= 3, "concat_chan: rank >= 3");
    const std::size_t plane = static_cast<std::size_t>(parts[0].shape[rank - 2]) *
                              static_cast<std::size_t>(parts[0].shape[rank - 1]);
    int total_c = 0;
    std::size_t groups = 0;
    for (const auto& p : parts) {
        require(p.rank() == rank && p.shape[rank - 2] == parts[0].shape[rank - 2] &&
                    p.shape[rank - 1] == parts[0].shape[rank - 1],
                "concat_chan: spatial extents differ");
        const std::size_t g = p.size() / (plane * static_cast<std::size_t>(p.shape[rank - 3]));
        if (groups == 0) groups = g;
        require(g == groups, "concat_chan: leading extents differ");
        total_c += p.shape[rank - 3];
    }
    Shape out_shape = parts[0].shape;
    out_shape[rank - 3] = total_c;
    Tape<Real>* tape = nullptr;
    for (const auto& p : parts)
        if (p.on_tape()) tape = p.tape;
    auto out = detail::make_out<Real>(out_shape);
    std::size_t coff = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        const std::size_t pc = static_cast<std::size_t>(p.shape[rank - 3]);
        offsets.push_back(coff);
        for (std::size_t g = 0; g < groups; ++g)
            std::copy_n(p.ptr() + g * pc * plane, pc * plane,
                        out.ptr() + (g * static_cast<std::size_t>(total_c) + coff) * plane);
        coff += pc;
    }
    detail::attach(out, tape, [parts, offsets, groups, total_c, plane](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        const auto& K = kern::kernels<Real>();
        const int rank = parts[0].rank();
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (!parts[k].on_tape()) continue;
            auto& gp = tp.grad(parts[k].node);
            const std::size_t pc = static_cast<std::size_t>(parts[k].shape[rank - 3]);
            for (std::size_t gi = 0; gi < groups; ++gi)
                K.axpy(Real(1),
                       g.data() + (gi * static_cast<std::size_t>(total_c) + offsets[k]) * plane,
                       gp.data() + gi * pc * plane, pc * plane);
        }
    });
    return out;
}

// 2x2 max pooling, stride 2, ties to the first index in scan order.
template <typename Real>
Tensor<Real> maxpool2(const Tensor<Real>& x) {
    require(x.rank() >= 2, "maxpool2: rank >= 2");
    const int H = x.shape[x.rank() - 2], W = x.shape[x.rank() - 1];
    require(H % 2 == 0 && W % 2 == 0, "maxpool2: extents must be even, got " + std::to_string(H) +
                                          "x" + std::to_string(W));
    const std::size_t planes = x.size() / (static_cast<std::size_t>(H) * W);
    const int Ho = H / 2, Wo = W / 2;
    Shape out_shape = x.shape;
    out_shape[x.rank() - 2] = Ho;
    out_shape[x.rank() - 1] = Wo;
    Tape<Real>* tape = detail::joint_tape(x);
    auto out = detail::make_out<Real>(out_shape);
    auto args = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t p = 0; p < planes; ++p) {
        const Real* xin = x.ptr() + p * static_cast<std::size_t>(H) * W;
        Real* xo = out.ptr() + p * static_cast<std::size_t>(Ho) * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xcol = 0; xcol < Wo; ++xcol) {
                const std::size_t cand[4] = {
                    static_cast<std::size_t>(2 * y) * W + 2 * xcol,
                    static_cast<std::size_t>(2 * y) * W + 2 * xcol + 1,
                    static_cast<std::size_t>(2 * y + 1) * W + 2 * xcol,
                    static_cast<std::size_t>(2 * y + 1) * W + 2 * xcol + 1};
                std::size_t best = cand[0];
                for (int j = 1; j < 4; ++j)
                    if (xin[cand[j]] > xin[best]) best = cand[j];
                xo[y * Wo + xcol] = xin[best];
                (*args)[p * static_cast<std::size_t>(Ho) * Wo + y * Wo + xcol] =
                    p * static_cast<std::size_t>(H) * W + best;
            }
    }
    detail::attach(out, tape, [x, args](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& gx = tp.grad(x.node);
        for (std::size_t i = 0; i < g.size(); ++i) gx[(*args)[i]] += g[i];
    });
    return out;
}

// Nearest-neighbour 2x upsampling.
template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x) {
    require(x.rank() >= 2, "upsample2: rank >= 2");
    const int H = x.shape[x.rank() - 2], W = x.shape[x.rank() - 1];
    const std::size_t planes = x.size() / (static_cast<std::size_t>(H) * W);
    Shape out_shape = x.shape;
    out_shape[x.rank() - 2] = 2 * H;
    out_shape[x.rank() - 1] = 2 * W;
    Tape<Real>* tape = detail::joint_tape(x);
    auto out = detail::make_out<Real>(out_shape);
    for (std::size_t p = 0; p < planes; ++p) {
        const Real* xin = x.ptr() + p * static_cast<std::size_t>(H) * W;
        Real* xo = out.ptr() + p * static_cast<std::size_t>(4 * H) * W;
        for (int y = 0; y < H; ++y)
            for (int xc = 0; xc < W; ++xc) {
                const Real v = xin[y * W + xc];
                Real* base = xo + static_cast<std::size_t>(2 * y) * (2 * W) + 2 * xc;
                base[0] = v;
                base[1] = v;
                base[2 * W] = v;
                base[2 * W + 1] = v;
            }
    }
    detail::attach(out, tape, [x, planes, H, W](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto& gx = tp.grad(x.node);
        for (std::size_t p = 0; p < planes; ++p) {
            const Real* go = g.data() + p * static_cast<std::size_t>(4 * H) * W;
            Real* gi = gx.data() + p * static_cast<std::size_t>(H) * W;
            for (int y = 0; y < H; ++y)
                for (int xc = 0; xc < W; ++xc) {
                    const Real* base = go + static_cast<std::size_t>(2 * y) * (2 * W) + 2 * xc;
                    gi[y * W + xc] += base[0] + base[1] + base[2 * W] + base[2 * W + 1];
                }
        }
    });
    return out;
}

// ---------- latent-variable primitives ----------

// z = mu + exp(log_var / 2) * eps. Gradient flows to mu and log_var only.
template <typename Real>
Tensor<Real> reparameterize(const Tensor<Real>& mu, const Tensor<Real>& log_var,
                            const Tensor<Real>& eps) {
    require(mu.shape == log_var.shape && mu.shape == eps.shape, "reparameterize: shape mismatch");
    Tape<Real>* tape = detail::joint_tape(mu, log_var);
    auto out = detail::make_out<Real>(mu.shape);
    auto sigma = std::make_shared<std::vector<Real>>(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        (*sigma)[i] = std::exp((*log_var.data)[i] / Real(2));
        (*out.data)[i] = (*mu.data)[i] + (*sigma)[i] * (*eps.data)[i];
    }
    detail::attach(out, tape, [mu, log_var, eps, sigma](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        if (mu.on_tape())
            kern::kernels<Real>().axpy(Real(1), g.data(), tp.grad(mu.node).data(), g.size());
        if (log_var.on_tape()) {
            auto& gl = tp.grad(log_var.node);
            for (std::size_t i = 0; i < g.size(); ++i)
                gl[i] += g[i] * (*eps.data)[i] * (*sigma)[i] / Real(2);
        }
    });
    return out;
}

// Per-row KL( N(mu, diag exp(log_var)) || N(0, I) ): [B, ...] -> [B].
// 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2).
template <typename Real>
Tensor<Real> kl_std_normal_rows(const Tensor<Real>& mu, const Tensor<Real>& log_var) {
    require(mu.shape == log_var.shape, "kl: mu/log_var shape mismatch");
    auto [rows, cols] = detail::rows_cols(mu, "kl");
    Tape<Real>* tape = detail::joint_tape(mu, log_var);
    auto out = detail::make_out<Real>({static_cast<int>(rows)});
    for (std::size_t r = 0; r < rows; ++r) {
        Real acc = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const Real m = (*mu.data)[r * cols + c];
            const Real lv = (*log_var.data)[r * cols + c];
            acc += m * m + std::exp(lv) - Real(1) - lv;
        }
        (*out.data)[r] = acc / Real(2);
    }
    detail::attach(out, tape, [mu, log_var, rows = rows, cols = cols](Tape<Real>& tp, int self) {
        const auto& g = tp.grad(self);
        auto* gm = mu.on_tape() ? &tp.grad(mu.node) : nullptr;
        auto* gl = log_var.on_tape() ? &tp.grad(log_var.node) : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                if (gm) (*gm)[i] += g[r] * (*mu.data)[i];
                if (gl) (*gl)[i] += g[r] * (std::exp((*log_var.data)[i]) - Real(1)) / Real(2);
            }
    });
    return out;
}

}  // namespace ops

}  // namespace bms
