#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gridlode/error.hpp"

namespace gridlode {

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    std::uint64_t visit_epoch = 0;  // backward-traversal mark; nodes are thread-confined
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Pulls this node's grad into its parents' grads. Empty once consumed.
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return data.size(); }

    void accumulate(std::size_t i, double g) {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        grad[i] += g;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace detail

/// Dense f64 tensor participating in reverse-mode differentiation. A Tensor
/// is a cheap handle onto a graph node; ops executed on tensors record the
/// computation so backward() can replay it in reverse. Everything is f64.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        return filled(std::move(shape), 0.0);
    }

    static Tensor filled(std::vector<std::size_t> shape, double value) {
        auto n = std::make_shared<detail::TensorNode>();
        std::size_t total = 1;
        for (auto d : shape) total *= d;
        n->shape = std::move(shape);
        n->data.assign(total, value);
        return Tensor(std::move(n));
    }

    static Tensor of(std::vector<std::size_t> shape, std::vector<double> data) {
        std::size_t total = 1;
        for (auto d : shape) total *= d;
        if (total != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(shape));
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor vector(std::vector<double> data) {
        const std::size_t n = data.size();
        return of({n}, std::move(data));
    }

    static Tensor scalar(double v) { return of({}, {v}); }

    bool defined() const { return node_ != nullptr; }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    bool is_scalar() const { return node_->shape.empty(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    double value() const {
        if (!is_scalar()) throw ContractError("value() requires a scalar tensor");
        return node_->data[0];
    }

    double operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    /// Gradient populated by backward(). Zero-sized until first accumulation.
    const std::vector<double>& grad() const { return node_->grad; }

    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    /// Leaf copy of the current values, detached from any recorded graph.
    Tensor detach(bool requires_grad = false) const {
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = node_->shape;
        n->data = node_->data;
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool all_finite() const {
        for (double v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

    friend Tensor make_op_result(std::vector<std::size_t> shape,
                                 std::vector<double> data,
                                 std::vector<Tensor> inputs,
                                 std::function<void(detail::TensorNode&)> backward_fn);

    std::shared_ptr<detail::TensorNode> node_;
};

/// Records one executed operation onto the implicit tape: the output node
/// keeps references to its inputs and the local gradient rule. When no input
/// requires a gradient the rule is dropped and the result is a plain value.
inline Tensor make_op_result(std::vector<std::size_t> shape,
                             std::vector<double> data,
                             std::vector<Tensor> inputs,
                             std::function<void(detail::TensorNode&)> backward_fn) {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        n->requires_grad = true;
        n->is_leaf = false;
        n->parents.reserve(inputs.size());
        for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
}

inline double sigmoid_val(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_val(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

/// Matrix product. Supports {m,k}x{k,n} -> {m,n} and {m,k}x{k} -> {m}.
/// Gradient rules: dA = G B^T, dB = A^T G.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const bool vec_rhs = sb.size() == 1;
    if (sa.size() != 2 || (sb.size() != 2 && sb.size() != 1) ||
        sa[1] != sb[0])
        throw ShapeError("matmul: incompatible shapes " + detail::shape_str(sa) +
                         " and " + detail::shape_str(sb));
    const std::size_t m = sa[0], k = sa[1], n = vec_rhs ? 1 : sb[1];
    std::vector<double> out(m * n, 0.0);
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = da[i * k + p];
            if (n == 1) {
                out[i] += av * db[p];
            } else {
                const double* brow = &db[p * n];
                double* orow = &out[i * n];
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    std::vector<std::size_t> oshape = vec_rhs
        ? std::vector<std::size_t>{m}
        : std::vector<std::size_t>{m, n};
    return make_op_result(
        std::move(oshape), std::move(out), {a, b},
        [an = a.node_ptr(), bn = b.node_ptr(), m, k, n](detail::TensorNode& o) {
            const auto& g = o.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g[i * n + j] * bn->data[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += an->data[i * k + p] * g[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_op_result(a.shape(), std::move(out), {a, b},
                          [an = a.node_ptr(), bn = b.node_ptr()](detail::TensorNode& o) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i) bn->grad[i] += o.grad[i];
                              }
                          });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_op_result(a.shape(), std::move(out), {a, b},
                          [an = a.node_ptr(), bn = b.node_ptr()](detail::TensorNode& o) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i) bn->grad[i] -= o.grad[i];
                              }
                          });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_op_result(a.shape(), std::move(out), {a, b},
                          [an = a.node_ptr(), bn = b.node_ptr()](detail::TensorNode& o) {
                              if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i)
                                      an->grad[i] += o.grad[i] * bn->data[i];
                              }
                              if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i)
                                      bn->grad[i] += o.grad[i] * an->data[i];
                              }
                          });
}

// Scalar-tensor broadcasting is allowed only through these explicit forms.
inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i];
                          });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr(), c](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += c * o.grad[i];
                          });
}

/// c - a, elementwise.
inline Tensor scalar_sub(double c, const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c - a[i];
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] -= o.grad[i];
                          });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i) {
                                  const double y = o.data[i];
                                  an->grad[i] += o.grad[i] * (1.0 - y * y);
                              }
                          });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_val(a[i]);
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i) {
                                  const double y = o.data[i];
                                  an->grad[i] += o.grad[i] * y * (1.0 - y);
                              }
                          });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a[i]);
        if (!std::isfinite(out[i]))
            throw DomainError("exp overflow at element " + std::to_string(i));
    }
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i)
                                  an->grad[i] += o.grad[i] * o.data[i];
                          });
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a[i] > 0.0))
            throw DomainError("log of non-positive value " + std::to_string(a[i]) +
                              " at element " + std::to_string(i));
        out[i] = std::log(a[i]);
    }
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i)
                                  an->grad[i] += o.grad[i] / an->data[i];
                          });
}

inline Tensor softplus(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::softplus_val(a[i]);
    return make_op_result(a.shape(), std::move(out), {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i)
                                  an->grad[i] += o.grad[i] * detail::sigmoid_val(an->data[i]);
                          });
}

/// Sum of all elements, as a scalar.
inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return make_op_result({}, {s}, {a},
                          [an = a.node_ptr()](detail::TensorNode& o) {
                              an->ensure_grad();
                              const double g = o.grad[0];
                              for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += g;
                          });
}

/// Contiguous 1-D slice [offset, offset+len).
inline Tensor slice(const Tensor& a, std::size_t offset, std::size_t len) {
    if (a.shape().size() != 1 || offset + len > a.size())
        throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + len) + ") invalid for shape " +
                         detail::shape_str(a.shape()));
    std::vector<double> out(a.data().begin() + offset, a.data().begin() + offset + len);
    return make_op_result({len}, std::move(out), {a},
                          [an = a.node_ptr(), offset](detail::TensorNode& o) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < o.size(); ++i)
                                  an->grad[offset + i] += o.grad[i];
                          });
}

/// base + sum_i coeff_i * term_i, fused into a single tape entry. This is the
/// workhorse of the Runge-Kutta stage combinations.
inline Tensor add_scaled(const Tensor& base,
                         std::span<const std::pair<double, Tensor>> terms) {
    std::vector<double> out = base.data();
    std::vector<Tensor> inputs{base};
    std::vector<double> coeffs;
    inputs.reserve(terms.size() + 1);
    coeffs.reserve(terms.size());
    for (const auto& [c, t] : terms) {
        detail::check_same_shape(base, t, "add_scaled");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * t[i];
        inputs.push_back(t);
        coeffs.push_back(c);
    }
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    nodes.reserve(inputs.size());
    for (const auto& t : inputs) nodes.push_back(t.node_ptr());
    return make_op_result(base.shape(), std::move(out), std::move(inputs),
                          [nodes = std::move(nodes), coeffs = std::move(coeffs)](detail::TensorNode& o) {
                              if (nodes[0]->requires_grad) {
                                  nodes[0]->ensure_grad();
                                  for (std::size_t i = 0; i < o.size(); ++i)
                                      nodes[0]->grad[i] += o.grad[i];
                              }
                              for (std::size_t j = 0; j < coeffs.size(); ++j) {
                                  auto& p = nodes[j + 1];
                                  if (!p->requires_grad) continue;
                                  p->ensure_grad();
                                  const double c = coeffs[j];
                                  for (std::size_t i = 0; i < o.size(); ++i)
                                      p->grad[i] += c * o.grad[i];
                              }
                          });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Runs one reverse sweep from `root`, seeding its gradient with `seed`
/// (same length as root). Gradients accumulate into every reachable
/// requires_grad leaf. The recorded graph behind `root` is consumed: interior
/// nodes drop their parent links and rules so memory is released and a second
/// sweep cannot double-count.
inline void backward(const Tensor& root, std::span<const double> seed) {
    auto* rn = root.node();
    if (!rn->requires_grad) return;  // nothing reachable requires a gradient
    if (!rn->is_leaf && !rn->backward_fn)
        throw ContractError("backward: tape already consumed for this result");
    if (seed.size() != rn->size())
        throw ContractError("backward: seed length does not match root size");

    // Iterative post-order DFS. Every interior node appears after all nodes
    // that consume it were pushed, so the reversed order is topological.
    // The order list holds owning pointers: firing a rule releases the fired
    // node's input references, and only this list keeps the spine alive.
    thread_local std::uint64_t epoch_counter = 0;
    const std::uint64_t epoch = ++epoch_counter;
    using NodePtr = std::shared_ptr<detail::TensorNode>;
    std::vector<NodePtr> order;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node_ptr(), 0);
    rn->visit_epoch = epoch;
    while (!stack.empty()) {
        auto& top = stack.back();
        detail::TensorNode* node = top.first.get();
        if (top.second < node->parents.size()) {
            const NodePtr& p = node->parents[top.second];
            ++top.second;
            if (p->requires_grad && p->visit_epoch != epoch) {
                p->visit_epoch = epoch;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(std::move(top.first));
            stack.pop_back();
        }
    }

    rn->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) rn->grad[i] += seed[i];

    // Reverse topological order: each node's rule fires exactly once.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* node = it->get();
        if (node->backward_fn) {
            node->backward_fn(*node);
            node->backward_fn = nullptr;
            node->parents.clear();
        } else if (!node->is_leaf) {
            throw ContractError("backward: reached a consumed tape region");
        }
        if (!node->is_leaf) node->grad = {};  // interior grads are scratch
    }
}

/// Standard entry point: backward from a scalar loss with seed 1.
inline void backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward: loss must be scalar, got shape " +
                            detail::shape_str(loss.shape()));
    const double one = 1.0;
    backward(loss, std::span<const double>(&one, 1));
}

inline void zero_grad(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace gridlode
