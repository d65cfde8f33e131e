#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridlode/rng.hpp"
#include "gridlode/tensor.hpp"

namespace gridlode {

enum class Activation { Tanh, Identity };

/// Weight matrices drawn uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases
/// zero. Keeps tanh units in their linear region at init.
inline Tensor init_weight(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::vector<double> w(out_dim * in_dim);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Tensor::of({out_dim, in_dim}, std::move(w)).set_requires_grad(true);
}

inline Tensor init_bias(std::size_t dim) {
    return Tensor::zeros({dim}).set_requires_grad(true);
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

struct MlpParams {
    struct Layer {
        Tensor weight;  // {out, in}
        Tensor bias;    // {out}
        Activation act = Activation::Identity;
    };
    std::vector<Layer> layers;

    std::size_t in_dim() const { return layers.front().weight.shape()[1]; }
    std::size_t out_dim() const { return layers.back().weight.shape()[0]; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(layers.size() * 2);
        for (const auto& l : layers) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        return out;
    }
};

/// Fully connected net: hidden layers use `hidden_act`, output is linear.
inline MlpParams make_mlp(std::size_t in_dim, std::span<const std::size_t> hidden,
                          std::size_t out_dim, Activation hidden_act, Rng& rng) {
    MlpParams p;
    std::size_t prev = in_dim;
    for (std::size_t h : hidden) {
        p.layers.push_back({init_weight(h, prev, rng), init_bias(h), hidden_act});
        prev = h;
    }
    p.layers.push_back({init_weight(out_dim, prev, rng), init_bias(out_dim),
                        Activation::Identity});
    return p;
}

inline Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
    Tensor h = x;
    for (const auto& l : p.layers) {
        h = add(matmul(l.weight, h), l.bias);
        if (l.act == Activation::Tanh) h = tanh(h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

/// Gate parameter blocks for a single GRU cell. All hidden-side blocks share
/// hidden_dim, all input-side blocks share input_dim.
struct GruParams {
    Tensor w_reset, u_reset, b_reset;
    Tensor w_update, u_update, b_update;
    Tensor w_cand, u_cand, b_cand;

    std::size_t input_dim() const { return w_reset.shape()[1]; }
    std::size_t hidden_dim() const { return w_reset.shape()[0]; }

    std::vector<Tensor> parameters() const {
        return {w_reset, u_reset, b_reset, w_update, u_update, b_update,
                w_cand, u_cand, b_cand};
    }
};

inline GruParams make_gru(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    auto w = [&] { return init_weight(hidden_dim, input_dim, rng); };
    auto u = [&] { return init_weight(hidden_dim, hidden_dim, rng); };
    auto b = [&] { return init_bias(hidden_dim); };
    return GruParams{w(), u(), b(), w(), u(), b(), w(), u(), b()};
}

/// One GRU step:
///   r = sigmoid(W_r x + U_r h + b_r)
///   u = sigmoid(W_u x + U_u h + b_u)
///   cand = tanh(W_h x + U_h (r . h) + b_h)
///   h' = (1 - u) . h + u . cand
/// Reset gate applied inside the candidate.
inline Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h_prev) {
    const Tensor r = sigmoid(add(add(matmul(p.w_reset, x), matmul(p.u_reset, h_prev)), p.b_reset));
    const Tensor u = sigmoid(add(add(matmul(p.w_update, x), matmul(p.u_update, h_prev)), p.b_update));
    const Tensor cand =
        tanh(add(add(matmul(p.w_cand, x), matmul(p.u_cand, mul(r, h_prev))), p.b_cand));
    return add(mul(scalar_sub(1.0, u), h_prev), mul(u, cand));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter moment buffers plus the shared step counter.
struct AdamState {
    AdamConfig cfg;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;

    static AdamState init(std::span<const Tensor> params, AdamConfig cfg = {}) {
        AdamState s;
        s.cfg = cfg;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p.size(), 0.0);
            s.v.emplace_back(p.size(), 0.0);
        }
        return s;
    }
};

/// Standard Adam with bias correction; updates parameter data in place from
/// the gradients populated by backward().
inline void adam_update(AdamState& state, std::span<Tensor> params, double lr) {
    if (state.m.size() != params.size())
        throw ContractError("adam_update: state holds " + std::to_string(state.m.size()) +
                            " buffers for " + std::to_string(params.size()) + " parameters");
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        auto& data = p.data();
        const auto& grad = p.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (grad.empty()) {
            // No gradient reached this parameter this step; moments still decay.
            for (std::size_t i = 0; i < data.size(); ++i) {
                m[i] *= b1;
                v[i] *= b2;
                data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.cfg.eps);
            }
            continue;
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool pass = false;
};

/// Compares backward() gradients of a deterministic scalar-valued builder
/// against central finite differences over every element of `params`.
/// `f` must rebuild its graph from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  std::span<Tensor> params, double h = 1e-5,
                                  double tol = 1e-4) {
    zero_grad(params);
    backward(f());
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        p.node()->ensure_grad();
        analytic.push_back(p.grad());
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double fp = f().value();
            data[i] = saved - h;
            const double fm = f().value();
            data[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[pi][i];
            const double abs_err = std::abs(an - fd);
            const double rel = abs_err / std::max({std::abs(an), std::abs(fd), 1e-6});
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace gridlode
