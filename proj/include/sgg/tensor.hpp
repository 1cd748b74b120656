#ifndef SGG_TENSOR_HPP
#define SGG_TENSOR_HPP

#include "sgg/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

/**
 *  \file
 *  Dense 64-bit tensors with a dynamic reverse-mode tape.
 *
 *  Every operation allocates a graph node holding its values and, when any
 *  input requires a gradient, a closure that pushes the node's gradient back
 *  to its parents. The tape is rebuilt on every forward pass and released
 *  when the last tensor referring to it goes out of scope.
 */

namespace sgg
{

using shape_t = std::vector<std::size_t>;

inline std::size_t shape_size(const shape_t& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const shape_t& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail
{

struct node
{
    shape_t shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<node>> parents;
    std::function<void(node&)> backward;
    const char* op = "leaf";
    // Set on softmax outputs so cross-entropy can work from the logits.
    std::shared_ptr<node> logits;

    std::vector<double>& ensure_grad()
    {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_enabled = true;

inline void check_finite(std::span<const double> v, const char* op)
{
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numeric_error(std::string("non-finite value produced by ") + op);
        }
    }
}

} // namespace detail

/// Disables tape recording on this thread for the guard's lifetime.
class no_grad_guard
{
public:
    no_grad_guard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~no_grad_guard() { detail::grad_enabled = previous_; }
    no_grad_guard(const no_grad_guard&) = delete;
    no_grad_guard& operator=(const no_grad_guard&) = delete;

private:
    bool previous_;
};

class tensor
{
public:
    tensor() = default;

    tensor(shape_t shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::node>())
    {
        if (shape_size(shape) != values.size()) {
            throw dimension_error("tensor: shape " + shape_str(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
        }
        detail::check_finite(values, "tensor construction");
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static tensor vec(std::vector<double> v, bool requires_grad = false)
    {
        const auto n = v.size();
        return tensor({n}, std::move(v), requires_grad);
    }

    static tensor vec(std::initializer_list<double> v) { return vec(std::vector<double>(v)); }

    static tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                         bool requires_grad = false)
    {
        return tensor({rows, cols}, std::move(v), requires_grad);
    }

    static tensor scalar(double x, bool requires_grad = false)
    {
        return tensor({}, {x}, requires_grad);
    }

    static tensor zeros(shape_t shape, bool requires_grad = false)
    {
        const auto n = shape_size(shape);
        return tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const shape_t& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    std::span<const double> values() const { return node_->values; }
    double operator[](std::size_t i) const { return node_->values[i]; }
    double item() const
    {
        if (size() != 1) throw dimension_error("item: tensor " + shape_str(shape()) + " is not scalar");
        return node_->values[0];
    }

    /// Direct write access, used by optimizers and the gradient checker.
    std::span<double> mutable_values() { return node_->values; }

    /// Gradient buffer; allocated (zero) on first access.
    std::span<const double> grad() const { return node_->ensure_grad(); }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }

    void zero_grad()
    {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    /// Fresh leaf holding a copy of the values.
    tensor detach() const { return tensor(shape(), node_->values, false); }

    detail::node* impl() const noexcept { return node_.get(); }
    const std::shared_ptr<detail::node>& shared() const noexcept { return node_; }

    static tensor wrap(std::shared_ptr<detail::node> n)
    {
        tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::node> node_;
};

/// A learnable parameter: a named leaf tensor with requires_grad set.
struct param_tensor
{
    std::string name;
    tensor value;
};

namespace detail
{

/// Creates an op result. Parents and the backward closure are only kept
/// when recording is enabled and some parent needs a gradient.
template<typename Backward>
tensor make_result(shape_t shape, std::vector<double> values, std::span<const tensor> parents,
                   Backward&& backward, const char* op)
{
    check_finite(values, op);
    auto n = std::make_shared<node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = op;
    bool needs = false;
    if (grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.shared());
        n->backward = std::forward<Backward>(backward);
    }
    return tensor::wrap(std::move(n));
}

template<typename Backward>
tensor make_result(shape_t shape, std::vector<double> values, std::initializer_list<tensor> parents,
                   Backward&& backward, const char* op)
{
    return make_result(std::move(shape), std::move(values), std::span<const tensor>(parents.begin(), parents.size()),
                       std::forward<Backward>(backward), op);
}

inline bool wants_grad(const node& self, std::size_t parent)
{
    return self.parents[parent]->requires_grad;
}

inline void require_vector(const tensor& t, const char* op)
{
    if (t.rank() != 1) {
        throw dimension_error(std::string(op) + ": expected a vector, got " + shape_str(t.shape()));
    }
}

inline void require_same_shape(const tensor& a, const tensor& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw dimension_error(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()) + " differ");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Operations

namespace detail
{

/// Inner product with four fixed partial sums; the summation order depends
/// only on n, so results are reproducible.
inline double dot_kernel(const double* a, const double* b, std::size_t n)
{
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    for (; k < n; ++k) s0 += a[k] * b[k];
    return (s0 + s1) + (s2 + s3);
}

} // namespace detail

inline tensor matvec(const tensor& m, const tensor& x)
{
    if (m.rank() != 2 || x.rank() != 1 || m.shape()[1] != x.shape()[0]) {
        throw dimension_error("matvec: cannot multiply " + shape_str(m.shape()) + " by " +
                              shape_str(x.shape()));
    }
    const std::size_t rows = m.shape()[0];
    const std::size_t cols = m.shape()[1];
    std::vector<double> out(rows, 0.0);
    const double* pm = m.values().data();
    const double* px = x.values().data();
    for (std::size_t i = 0; i < rows; ++i) out[i] = detail::dot_kernel(pm + i * cols, px, cols);
    return detail::make_result({rows}, std::move(out), {m, x}, [rows, cols](detail::node& self) {
        auto& pm = *self.parents[0];
        auto& px = *self.parents[1];
        const double* g = self.grad.data();
        if (pm.requires_grad) {
            double* gm = pm.ensure_grad().data();
            const double* xv = px.values.data();
            for (std::size_t i = 0; i < rows; ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                double* grow = gm + i * cols;
                for (std::size_t k = 0; k < cols; ++k) grow[k] += gi * xv[k];
            }
        }
        if (px.requires_grad) {
            double* gx = px.ensure_grad().data();
            const double* mv = pm.values.data();
            for (std::size_t i = 0; i < rows; ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                const double* row = mv + i * cols;
                for (std::size_t k = 0; k < cols; ++k) gx[k] += gi * row[k];
            }
        }
    }, "matvec");
}

inline tensor concat(const tensor& a, const tensor& b)
{
    detail::require_vector(a, "concat");
    detail::require_vector(b, "concat");
    const std::size_t p = a.size();
    std::vector<double> out;
    out.reserve(p + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const std::size_t n = out.size();
    return detail::make_result({n}, std::move(out), {a, b}, [p](detail::node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[p + i];
        }
    }, "concat");
}

namespace detail
{

inline double stable_sigmoid(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Elementwise unary op whose derivative is a function of the output.
template<typename Fwd, typename DerivFromOutput>
tensor unary_from_output(const tensor& x, Fwd fwd, DerivFromOutput deriv, const char* op)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
    return make_result(x.shape(), std::move(out), {x}, [deriv](node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(self.values[i]);
    }, op);
}

} // namespace detail

inline tensor sigmoid(const tensor& x)
{
    return detail::unary_from_output(
        x, detail::stable_sigmoid, [](double y) { return y * (1.0 - y); }, "sigmoid");
}

inline tensor tanh(const tensor& x)
{
    return detail::unary_from_output(
        x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; }, "tanh");
}

/// 1 - x, elementwise.
inline tensor one_minus(const tensor& x)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - x[i];
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }, "one_minus");
}

inline tensor softmax(const tensor& x)
{
    detail::require_vector(x, "softmax");
    if (x.size() == 0) throw dimension_error("softmax: empty input");
    const auto v = x.values();
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
    }
    for (double& o : out) o /= z;
    auto result = detail::make_result(x.shape(), std::move(out), {x}, [](detail::node& self) {
        const auto& y = self.values;
        double dot = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += self.grad[i] * y[i];
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (self.grad[i] - dot);
    }, "softmax");
    result.impl()->logits = x.shared();
    return result;
}

inline tensor add(const tensor& a, const tensor& b)
{
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!detail::wants_grad(self, p)) continue;
            auto& g = self.parents[p]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    }, "add");
}

inline tensor sub(const tensor& a, const tensor& b)
{
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::node& self) {
        if (detail::wants_grad(self, 0)) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (detail::wants_grad(self, 1)) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    }, "sub");
}

/// Elementwise (Hadamard) product.
inline tensor mul(const tensor& a, const tensor& b)
{
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::node& self) {
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (detail::wants_grad(self, 1)) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    }, "mul");
}

/// x * c for a constant c.
inline tensor scale(const tensor& x, double c)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
    return detail::make_result(x.shape(), std::move(out), {x}, [c](detail::node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    }, "scale");
}

/// s * x where s is a one-element tensor (a learned gate).
inline tensor gate(const tensor& s, const tensor& x)
{
    if (s.size() != 1) throw dimension_error("gate: gate " + shape_str(s.shape()) + " is not scalar");
    const double c = s[0];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
    return detail::make_result(x.shape(), std::move(out), {s, x}, [](detail::node& self) {
        const double c = self.parents[0]->values[0];
        const auto& xv = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
            self.parents[0]->ensure_grad()[0] += acc;
        }
        if (detail::wants_grad(self, 1)) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
        }
    }, "gate");
}

/// Inner product of two vectors, as a scalar tensor.
inline tensor dot(const tensor& a, const tensor& b)
{
    detail::require_vector(a, "dot");
    detail::require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return detail::make_result({}, {acc}, {a, b}, [](detail::node& self) {
        const double g = self.grad[0];
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
            auto& ga = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
        }
        if (detail::wants_grad(self, 1)) {
            auto& gb = self.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
        }
    }, "dot");
}

inline tensor sum(const tensor& x)
{
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return detail::make_result({}, {acc}, {x}, [](detail::node& self) {
        const double g = self.grad[0];
        for (double& gi : self.parents[0]->ensure_grad()) gi += g;
    }, "sum");
}

/// Sum of same-shaped tensors. `parts` must be non-empty.
inline tensor add_n(const std::vector<tensor>& parts)
{
    if (parts.empty()) throw dimension_error("add_n: no inputs");
    const auto& shape = parts.front().shape();
    std::vector<double> out(parts.front().size(), 0.0);
    for (const auto& p : parts) {
        detail::require_same_shape(parts.front(), p, "add_n");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    }
    return detail::make_result(shape, std::move(out), std::span<const tensor>(parts), [](detail::node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    }, "add_n");
}

/// Elementwise maximum over same-shaped vectors. The gradient of each
/// component goes to the first input attaining the maximum.
inline tensor maximum(const std::vector<tensor>& parts)
{
    if (parts.empty()) throw dimension_error("maximum: no inputs");
    const std::size_t n = parts.front().size();
    std::vector<double> out(parts.front().values().begin(), parts.front().values().end());
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t p = 1; p < parts.size(); ++p) {
        detail::require_same_shape(parts.front(), parts[p], "maximum");
        for (std::size_t i = 0; i < n; ++i) {
            if (parts[p][i] > out[i]) {
                out[i] = parts[p][i];
                arg[i] = p;
            }
        }
    }
    return detail::make_result(parts.front().shape(), std::move(out), std::span<const tensor>(parts),
                               [arg = std::move(arg)](detail::node& self) {
        for (std::size_t i = 0; i < arg.size(); ++i) {
            auto& src = *self.parents[arg[i]];
            if (src.requires_grad) src.ensure_grad()[i] += self.grad[i];
        }
    }, "maximum");
}

/// Contiguous sub-vector [offset, offset + len).
inline tensor slice(const tensor& x, std::size_t offset, std::size_t len)
{
    detail::require_vector(x, "slice");
    if (offset + len > x.size()) {
        throw dimension_error("slice: range [" + std::to_string(offset) + ", " +
                              std::to_string(offset + len) + ") exceeds " + shape_str(x.shape()));
    }
    std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(offset),
                            x.values().begin() + static_cast<std::ptrdiff_t>(offset + len));
    return detail::make_result({len}, std::move(out), {x}, [offset](detail::node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    }, "slice");
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Accumulates dloss/dtheta into every reachable leaf that requires a gradient.
/// Gradients add onto whatever is already stored; callers zero them.
inline void backward(const tensor& loss)
{
    if (loss.size() != 1) {
        throw dimension_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::node*> order;
    std::unordered_set<detail::node*> visited;
    std::vector<std::pair<detail::node*, std::size_t>> stack;
    stack.emplace_back(loss.impl(), 0);
    visited.insert(loss.impl());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.impl()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::node* n = *it;
        if (!n->backward) continue;
        n->ensure_grad();
        detail::check_finite(n->grad, "backward");
        n->backward(*n);
    }
    for (auto* n : order) {
        if (!n->backward) detail::check_finite(n->ensure_grad(), "backward");
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

struct grad_check_result
{
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/**
 *  Compares analytic gradients of `f` against central differences.
 *
 *  For every entry of every parameter the relative error is
 *  |analytic - numeric| / max(1, |analytic|, |numeric|); the maximum and
 *  where it occurred are returned. Parameter values are restored afterwards
 *  and their gradients are left holding the analytic result.
 */
inline grad_check_result grad_check(const std::function<tensor()>& f,
                                    std::vector<param_tensor>& params, double eps)
{
    if (!(eps > 0.0)) throw numeric_error("grad_check: eps must be positive");
    for (auto& p : params) p.value.zero_grad();
    {
        const tensor loss = f();
        if (loss.size() != 1) throw dimension_error("grad_check: objective is not scalar");
        backward(loss);
    }

    auto evaluate = [&]() {
        no_grad_guard guard;
        const double v = f().item();
        if (!std::isfinite(v)) throw numeric_error("grad_check: objective is not finite");
        return v;
    };

    grad_check_result result;
    for (auto& p : params) {
        auto values = p.value.mutable_values();
        const auto grads = p.value.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = evaluate();
            values[i] = saved - eps;
            const double down = evaluate();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = grads[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            if (result.worst_param.empty() || rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p.name;
                result.worst_index = i;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace sgg
#endif // header guard
