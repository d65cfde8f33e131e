#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gridlode/error.hpp"
#include "gridlode/tensor.hpp"

namespace gridlode {

/// Learned (or test) dynamics z -> dz/dt. Time-invariant: the value depends
/// only on the state and whatever parameters the closure captures.
using OdeFunc = std::function<Tensor(const Tensor&)>;

/// Adaptive stepping controls. Fields left at 0 are resolved from the
/// integration span: h_init = span/100, h_min = 1e-10*span, h_max = span.
struct SolverConfig {
    double rtol = 1e-6;
    double atol = 1e-7;
    double h_init = 0.0;
    double h_min = 0.0;
    double h_max = 0.0;
    double safety = 0.9;
    std::int64_t max_steps = 100000;

    SolverConfig resolved(double span) const {
        SolverConfig c = *this;
        if (c.h_init <= 0.0) c.h_init = span / 100.0;
        if (c.h_min <= 0.0) c.h_min = 1e-10 * span;
        if (c.h_max <= 0.0) c.h_max = span;
        c.h_init = std::clamp(c.h_init, c.h_min, c.h_max);
        return c;
    }

    void validate() const {
        if (rtol <= 0.0 || atol <= 0.0)
            throw ContractError("solver tolerances must be positive");
        if (max_steps <= 0) throw ContractError("max_steps must be positive");
        if (h_min > 0.0 && h_max > 0.0 && h_min > h_max)
            throw ContractError("h_min exceeds h_max");
    }
};

struct StepStats {
    std::int64_t accepted = 0;
    std::int64_t rejected = 0;
    // Stage evaluations, counting the FSAL-reused first stage: 7 per attempt.
    std::int64_t nfev = 0;
};

/// Latent states aligned with strictly increasing request times.
struct Trajectory {
    std::vector<double> times;
    std::vector<Tensor> states;
    StepStats stats;

    std::size_t size() const { return times.size(); }
};

namespace dopri5 {

// Dormand-Prince 5(4) tableau, FSAL form: the 7th stage of an accepted step
// is the first stage of the next.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                        a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                        a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
// 5th-order weights (also the 7th stage row).
inline constexpr std::array<double, 7> b{35.0 / 384, 0.0, 500.0 / 1113,
                                         125.0 / 192, -2187.0 / 6784,
                                         11.0 / 84, 0.0};
// b - b_hat: weights of the embedded 4th-order error estimate.
inline constexpr std::array<double, 7> e{
    71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
    -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
// Dense-output weights for the quartic interpolant.
inline constexpr double d1 = -12715105075.0 / 11282082432.0;
inline constexpr double d3 = 87487479700.0 / 32700410799.0;
inline constexpr double d4 = -10690763975.0 / 1880347072.0;
inline constexpr double d5 = 701980252875.0 / 199316789632.0;
inline constexpr double d6 = -1453857185.0 / 822651844.0;
inline constexpr double d7 = 69997945.0 / 29380423.0;

struct Attempt {
    std::array<Tensor, 7> k;
    Tensor z_next;       // 5th-order solution
    double err_norm = 0; // RMS of error / (atol + rtol*max(|z|,|z_next|))
    double h = 0;
};

inline void require_finite(const Tensor& v, double t, double h, const char* what) {
    if (!v.all_finite())
        throw IntegrationError(std::string("integration diverged: non-finite ") + what +
                                   " at t=" + std::to_string(t) +
                                   ", h=" + std::to_string(h),
                               t, h);
}

/// One stage-complete trial step from (t, z) with step h; k1 is reused when
/// the caller already has it (FSAL).
inline Attempt attempt_step(const OdeFunc& f, double t, const Tensor& z, double h,
                            const SolverConfig& cfg, const Tensor* k1_reuse) {
    using P = std::pair<double, Tensor>;
    Attempt at;
    at.h = h;
    auto eval = [&](const Tensor& state, const char* stage) {
        Tensor out = f(state);
        if (out.shape() != z.shape())
            throw ShapeError("ode dynamics changed state shape " +
                             detail::shape_str(z.shape()) + " -> " +
                             detail::shape_str(out.shape()));
        require_finite(out, t, h, stage);
        return out;
    };
    at.k[0] = k1_reuse ? *k1_reuse : eval(z, "stage 1");
    {
        const std::array<P, 1> t2{P{h * a21, at.k[0]}};
        at.k[1] = eval(add_scaled(z, t2), "stage 2");
        const std::array<P, 2> t3{P{h * a31, at.k[0]}, P{h * a32, at.k[1]}};
        at.k[2] = eval(add_scaled(z, t3), "stage 3");
        const std::array<P, 3> t4{P{h * a41, at.k[0]}, P{h * a42, at.k[1]},
                                  P{h * a43, at.k[2]}};
        at.k[3] = eval(add_scaled(z, t4), "stage 4");
        const std::array<P, 4> t5{P{h * a51, at.k[0]}, P{h * a52, at.k[1]},
                                  P{h * a53, at.k[2]}, P{h * a54, at.k[3]}};
        at.k[4] = eval(add_scaled(z, t5), "stage 5");
        const std::array<P, 5> t6{P{h * a61, at.k[0]}, P{h * a62, at.k[1]},
                                  P{h * a63, at.k[2]}, P{h * a64, at.k[3]},
                                  P{h * a65, at.k[4]}};
        at.k[5] = eval(add_scaled(z, t6), "stage 6");
        const std::array<P, 5> t7{P{h * b[0], at.k[0]}, P{h * b[2], at.k[2]},
                                  P{h * b[3], at.k[3]}, P{h * b[4], at.k[4]},
                                  P{h * b[5], at.k[5]}};
        at.z_next = add_scaled(z, t7);
        require_finite(at.z_next, t, h, "solution");
        at.k[6] = eval(at.z_next, "stage 7");
    }

    // Error norm from values only; step-size control is not differentiated.
    const auto& z0v = z.data();
    const auto& z1v = at.z_next.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < z0v.size(); ++i) {
        double err = 0.0;
        for (std::size_t s = 0; s < 7; ++s)
            if (e[s] != 0.0) err += e[s] * at.k[s][i];
        err *= h;
        const double scale =
            cfg.atol + cfg.rtol * std::max(std::abs(z0v[i]), std::abs(z1v[i]));
        const double r = err / scale;
        acc += r * r;
    }
    at.err_norm = std::sqrt(acc / static_cast<double>(z0v.size()));
    return at;
}

inline double next_step(double h, double err_norm, const SolverConfig& cfg) {
    double factor = 5.0;
    if (err_norm > 0.0)
        factor = std::clamp(cfg.safety * std::pow(err_norm, -0.2), 0.2, 5.0);
    double h_next = h * factor;
    if (cfg.h_min > 0.0) h_next = std::max(h_next, cfg.h_min);
    if (cfg.h_max > 0.0) h_next = std::min(h_next, cfg.h_max);
    return h_next;
}

/// Quartic dense-output state at fraction theta of an accepted step.
/// Hermite-consistent: value and slope match (z0, h k1) at theta=0 and
/// (z1, h k7) at theta=1.
inline Tensor interpolate(const Tensor& z0, const Tensor& z1,
                          const std::array<Tensor, 7>& k, double h, double theta) {
    const double s = theta, s1 = 1.0 - theta;
    const double cy = s * s * (1.0 + 2.0 * s1);  // weight on (z1 - z0)
    const double cq = h * s * s * s1 * s1;       // weight on the d_i stages
    using P = std::pair<double, Tensor>;
    const std::array<P, 8> terms{
        P{-cy, z0},
        P{cy, z1},
        P{h * s * s1 * s1 + cq * d1, k[0]},
        P{cq * d3, k[2]},
        P{cq * d4, k[3]},
        P{cq * d5, k[4]},
        P{cq * d6, k[5]},
        P{-h * s * s * s1 + cq * d7, k[6]},
    };
    return add_scaled(z0, terms);
}

}  // namespace dopri5

struct StepResult {
    Tensor z_next;
    double err_norm = 0.0;
    double h_next = 0.0;
    bool accepted = false;
};

/// Single trial step of the Dormand-Prince 5(4) pair. The step is accepted
/// when the scaled error RMS is at most 1; the proposed next step is
/// h * clamp(safety * err^(-1/5), 0.2, 5) within the configured bounds.
inline StepResult dopri5_step(const OdeFunc& f, double t, const Tensor& z, double h,
                              const SolverConfig& cfg) {
    cfg.validate();
    if (!(h > 0.0)) throw ContractError("dopri5_step: step must be positive");
    if (cfg.h_min > 0.0 && h < cfg.h_min)
        throw ContractError("dopri5_step: h below h_min");
    if (cfg.h_max > 0.0 && h > cfg.h_max)
        throw ContractError("dopri5_step: h above h_max");
    if (!z.all_finite()) throw ContractError("dopri5_step: non-finite state");
    auto at = dopri5::attempt_step(f, t, z, h, cfg, nullptr);
    StepResult r;
    r.z_next = at.z_next;
    r.err_norm = at.err_norm;
    r.accepted = at.err_norm <= 1.0;
    r.h_next = dopri5::next_step(h, at.err_norm, cfg);
    return r;
}

/// Integrates dz/dt = f(z) from times.front() to times.back(), emitting the
/// state at every requested time through dense output. Requested times never
/// influence the step sequence, so refining the grid leaves shared outputs
/// unchanged. The state at times.front() is z0 itself.
inline Trajectory integrate(const OdeFunc& f, const Tensor& z0,
                            std::span<const double> times, const SolverConfig& cfg_in) {
    if (times.empty()) throw ContractError("integrate: empty time list");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw ContractError("integrate: times must be strictly increasing at index " +
                                std::to_string(i));
    if (!z0.all_finite()) throw ContractError("integrate: non-finite initial state");

    Trajectory traj;
    traj.times.assign(times.begin(), times.end());
    traj.states.reserve(times.size());
    traj.states.push_back(z0);
    if (times.size() == 1) return traj;

    const double t0 = times.front(), t_end = times.back();
    cfg_in.validate();
    const SolverConfig cfg = cfg_in.resolved(t_end - t0);

    double t = t0;
    double h = cfg.h_init;
    Tensor z = z0;
    Tensor k1 = f(z);
    dopri5::require_finite(k1, t, h, "stage 1");
    std::size_t next_query = 1;

    while (t < t_end) {
        if (traj.stats.accepted + traj.stats.rejected >= cfg.max_steps)
            throw IntegrationError("integration diverged: max_steps (" +
                                       std::to_string(cfg.max_steps) +
                                       ") exhausted at t=" + std::to_string(t),
                                   t, h);
        const bool last = h >= t_end - t;
        if (last) h = t_end - t;  // land exactly on t_end
        auto at = dopri5::attempt_step(f, t, z, h, cfg, &k1);
        traj.stats.nfev += 7;
        const double h_next = dopri5::next_step(h, at.err_norm, cfg);
        if (at.err_norm <= 1.0) {
            traj.stats.accepted += 1;
            const double t_new = last ? t_end : t + h;
            while (next_query < traj.times.size() &&
                   traj.times[next_query] <= t_new) {
                const double tq = traj.times[next_query];
                if (tq == t_new) {
                    traj.states.push_back(at.z_next);
                } else {
                    traj.states.push_back(
                        dopri5::interpolate(z, at.z_next, at.k, h, (tq - t) / h));
                }
                ++next_query;
            }
            t = t_new;
            z = at.z_next;
            k1 = at.k[6];  // FSAL
        } else {
            traj.stats.rejected += 1;
        }
        h = h_next;
        if (!(h > 0.0) || t + h == t)
            throw IntegrationError("integration diverged: step underflow at t=" +
                                       std::to_string(t),
                                   t, h);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Adjoint sensitivity
// ---------------------------------------------------------------------------

/// Dynamics together with the parameter leaves it closes over, so the
/// adjoint pass can form vector-Jacobian products against them.
struct OdeSystem {
    OdeFunc f;
    std::vector<Tensor> params;
};

struct AdjointResult {
    std::vector<double> z0_grad;
    std::vector<std::vector<double>> param_grads;  // aligned with OdeSystem::params
};

/// Gradients of a loss on trajectory states via the augmented backward ODE.
/// Each backward segment restarts from the stored forward state, integrating
/// [z; a; g] in reversed time with
///   dz/ds = -f(z),  da/ds = a^T df/dz,  dg/ds = a^T df/dtheta,
/// and adds the supplied dL/dz_i at each observation time. The VJPs come from
/// one reverse sweep over a single f evaluation; no forward tape is retained
/// across steps, so memory is constant in the step count.
///
/// The param tensors' .grad buffers are used as VJP scratch: callers must not
/// hold pending gradient accumulations in them (pass detached copies when
/// they do).
inline AdjointResult adjoint_backward(const OdeSystem& sys, const Trajectory& traj,
                                      const std::vector<std::vector<double>>& dl_dz,
                                      const SolverConfig& cfg) {
    const std::size_t n_times = traj.size();
    if (dl_dz.size() != n_times)
        throw ContractError("adjoint_backward: gradient list must align with trajectory times");
    const std::size_t dim = traj.states.front().size();
    std::size_t n_params = 0;
    for (const auto& p : sys.params) n_params += p.size();

    AdjointResult out;
    out.z0_grad.assign(dim, 0.0);
    out.param_grads.reserve(sys.params.size());
    for (const auto& p : sys.params) out.param_grads.emplace_back(p.size(), 0.0);

    std::vector<double> adj = dl_dz.back();
    if (adj.size() != dim)
        throw ContractError("adjoint_backward: gradient dimension mismatch");
    std::vector<double> theta_acc(n_params, 0.0);

    // Augmented dynamics in reversed time s = t_i - t.
    auto params = sys.params;
    auto aug_dynamics = [&](const Tensor& aug) {
        const auto& av = aug.data();
        Tensor z_leaf = Tensor::vector(std::vector<double>(av.begin(), av.begin() + dim))
                            .set_requires_grad(true);
        Tensor fz = sys.f(z_leaf);
        for (auto& p : params) p.zero_grad();
        backward(fz, std::span<const double>(av.data() + dim, dim));
        z_leaf.node()->ensure_grad();

        std::vector<double> d(aug.size(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) d[i] = -fz[i];
        for (std::size_t i = 0; i < dim; ++i) d[dim + i] = z_leaf.grad()[i];
        std::size_t off = 2 * dim;
        for (const auto& p : params) {
            const auto& g = p.grad();
            for (std::size_t i = 0; i < g.size(); ++i) d[off + i] = g[i];
            off += g.size();
        }
        return Tensor::vector(std::move(d));
    };

    for (std::size_t i = n_times; i-- > 1;) {
        const double span = traj.times[i] - traj.times[i - 1];
        std::vector<double> aug0(2 * dim + n_params, 0.0);
        const auto& zi = traj.states[i].data();
        std::copy(zi.begin(), zi.end(), aug0.begin());
        std::copy(adj.begin(), adj.end(), aug0.begin() + dim);
        std::copy(theta_acc.begin(), theta_acc.end(), aug0.begin() + 2 * dim);

        const std::array<double, 2> seg_times{0.0, span};
        Trajectory seg = integrate(aug_dynamics, Tensor::vector(std::move(aug0)),
                                   seg_times, cfg);
        const auto& end = seg.states.back().data();
        const auto& gi = dl_dz[i - 1];
        if (gi.size() != dim)
            throw ContractError("adjoint_backward: gradient dimension mismatch");
        for (std::size_t j = 0; j < dim; ++j) adj[j] = end[dim + j] + gi[j];
        std::copy(end.begin() + 2 * dim, end.end(), theta_acc.begin());
    }

    out.z0_grad = adj;
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < sys.params.size(); ++pi) {
        for (std::size_t i = 0; i < out.param_grads[pi].size(); ++i)
            out.param_grads[pi][i] = theta_acc[off + i];
        off += out.param_grads[pi].size();
    }
    return out;
}

}  // namespace gridlode
