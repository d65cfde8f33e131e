#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "gridlode/nn.hpp"
#include "gridlode/odesolve.hpp"
#include "gridlode/rng.hpp"
#include "gridlode/tensor.hpp"

using namespace gridlode;

namespace {

const OdeFunc kZeroDynamics = [](const Tensor& z) {
    return Tensor::zeros(z.shape());
};
const OdeFunc kExpDynamics = [](const Tensor& z) { return mul_scalar(z, 1.0); };

// 2x2 matrix exponential oracle: scaling and squaring on the Taylor series.
std::array<double, 4> expm2(std::array<double, 4> m, double t) {
    for (auto& v : m) v *= t;
    int squarings = 0;
    auto norm = [&] {
        return std::max(std::abs(m[0]) + std::abs(m[1]),
                        std::abs(m[2]) + std::abs(m[3]));
    };
    while (norm() > 0.5) {
        for (auto& v : m) v /= 2.0;
        ++squarings;
    }
    auto matmul2 = [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
        return std::array<double, 4>{a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
                                     a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
    };
    std::array<double, 4> result{1, 0, 0, 1};
    std::array<double, 4> term{1, 0, 0, 1};
    for (int k = 1; k <= 24; ++k) {
        term = matmul2(term, m);
        for (auto& v : term) v /= k;
        for (int i = 0; i < 4; ++i) result[i] += term[i];
    }
    for (int s = 0; s < squarings; ++s) result = matmul2(result, result);
    return result;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double gmax = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        gmax = std::max({gmax, std::abs(a[i]), std::abs(b[i])});
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3 * gmax, 1e-12});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

std::vector<double> flatten_grads(std::span<const Tensor> params) {
    std::vector<double> out;
    for (const auto& p : params) {
        if (p.grad().empty()) {
            out.insert(out.end(), p.size(), 0.0);
        } else {
            out.insert(out.end(), p.grad().begin(), p.grad().end());
        }
    }
    return out;
}

}  // namespace

TEST(Dopri5Step, ZeroDynamicsIsExactAndAccepted) {
    SolverConfig cfg;
    auto r = dopri5_step(kZeroDynamics, 0.0, Tensor::vector({1.5, -2.0}), 0.1, cfg);
    EXPECT_EQ(r.z_next.data(), (std::vector<double>{1.5, -2.0}));
    EXPECT_EQ(r.err_norm, 0.0);
    EXPECT_TRUE(r.accepted);
    EXPECT_DOUBLE_EQ(r.h_next, 0.5);  // growth clamped at 5x
}

TEST(Dopri5Step, SingleStepMatchesExponential) {
    SolverConfig cfg;
    auto r = dopri5_step(kExpDynamics, 0.0, Tensor::vector({1.0}), 0.1, cfg);
    EXPECT_TRUE(r.accepted);
    EXPECT_NEAR(r.z_next.data()[0], std::exp(0.1), 1e-8);
}

TEST(Dopri5Step, StiffStepRejectedAndShrunk) {
    SolverConfig cfg;
    cfg.rtol = 1e-6;
    cfg.atol = 1e-6;
    const OdeFunc stiff = [](const Tensor& z) { return mul_scalar(z, -1000.0); };
    auto r = dopri5_step(stiff, 0.0, Tensor::vector({1.0}), 0.1, cfg);
    EXPECT_FALSE(r.accepted);
    EXPECT_LT(r.h_next, 0.1);
    // Analytic local-error oracle: the true solution collapses to ~0 while the
    // 5th-order polynomial step cannot, so the scaled error is far above 1.
    EXPECT_GT(r.err_norm, 1.0);
}

TEST(Dopri5Step, RejectsBadInputs) {
    SolverConfig cfg;
    EXPECT_THROW(dopri5_step(kExpDynamics, 0.0, Tensor::vector({1.0}), -0.1, cfg),
                 ContractError);
    EXPECT_THROW(
        dopri5_step(kExpDynamics, 0.0,
                    Tensor::vector({std::numeric_limits<double>::quiet_NaN()}), 0.1, cfg),
        ContractError);
}

TEST(Integrate, ZeroDynamicsHoldsInitialState) {
    const std::vector<double> times{0.0, 0.3, 1.1, 4.0};
    auto traj = integrate(kZeroDynamics, Tensor::vector({2.5, -1.0}), times, {});
    ASSERT_EQ(traj.states.size(), 4u);
    for (const auto& s : traj.states)
        EXPECT_EQ(s.data(), (std::vector<double>{2.5, -1.0}));
}

TEST(Integrate, ExponentialGrowthHitsAnalyticValue) {
    const std::vector<double> times{0.0, 1.0};
    auto traj = integrate(kExpDynamics, Tensor::vector({1.0}), times, {});
    EXPECT_NEAR(traj.states[1].data()[0], 2.718282, 1e-6);
    EXPECT_EQ(traj.times[0], 0.0);
    EXPECT_EQ(traj.states[0].data()[0], 1.0);
}

TEST(Integrate, ExponentialDecayAtInteriorTimes) {
    const OdeFunc f = [](const Tensor& z) { return mul_scalar(z, -2.0); };
    const std::vector<double> times{0.0, 0.5, 1.0};
    auto traj = integrate(f, Tensor::vector({1.0}), times, {});
    EXPECT_NEAR(traj.states[0].data()[0], 1.0, 0.0);
    EXPECT_NEAR(traj.states[1].data()[0], 0.367879, 1e-6);
    EXPECT_NEAR(traj.states[2].data()[0], 0.135335, 1e-6);
}

TEST(Integrate, TimeGridRefinementDoesNotPerturbSharedTimes) {
    const OdeFunc f = [](const Tensor& z) {
        // Nonlinear but smooth: dz/dt = tanh(z) + 0.1 z.
        return add(tanh(z), mul_scalar(z, 0.1));
    };
    const std::vector<double> coarse{0.0, 0.7, 1.9, 3.0};
    const std::vector<double> fine{0.0, 0.2, 0.7, 0.9, 1.3, 1.9, 2.4, 3.0};
    auto a = integrate(f, Tensor::vector({0.3, -0.8}), coarse, {});
    auto b = integrate(f, Tensor::vector({0.3, -0.8}), fine, {});
    const std::size_t map[] = {0, 2, 5, 7};
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const auto& za = a.states[i].data();
        const auto& zb = b.states[map[i]].data();
        for (std::size_t j = 0; j < za.size(); ++j)
            EXPECT_NEAR(za[j], zb[j], 1e-9);
    }
}

TEST(Integrate, DiagnosticsAreConsistent) {
    const std::vector<double> times{0.0, 1.0};
    auto traj = integrate(kExpDynamics, Tensor::vector({1.0}), times, {});
    EXPECT_GT(traj.stats.accepted, 0);
    EXPECT_EQ(traj.stats.nfev, 7 * (traj.stats.accepted + traj.stats.rejected));
}

TEST(Integrate, ContractErrors) {
    const std::vector<double> bad{0.0, 0.5, 0.5};
    EXPECT_THROW(integrate(kExpDynamics, Tensor::vector({1.0}), bad, {}), ContractError);

    SolverConfig tiny;
    tiny.max_steps = 3;
    tiny.rtol = 1e-12;
    tiny.atol = 1e-14;
    const std::vector<double> times{0.0, 10.0};
    EXPECT_THROW(integrate(kExpDynamics, Tensor::vector({1.0}), times, tiny),
                 IntegrationError);
}

TEST(Integrate, FiniteTimeBlowupRaisesIntegrationError) {
    // dz/dt = z^2 from z0=1 is singular at t=1.
    const OdeFunc f = [](const Tensor& z) { return mul(z, z); };
    const std::vector<double> times{0.0, 2.0};
    EXPECT_THROW(integrate(f, Tensor::vector({1.0}), times, {}), IntegrationError);
}

TEST(Integrate, ToleranceMonotonicityOnAnalyticSet) {
    struct Case {
        OdeFunc f;
        std::vector<double> z0;
        std::function<std::vector<double>(double)> exact;
    };
    const std::vector<Case> cases = {
        {kExpDynamics, {1.0}, [](double t) { return std::vector<double>{std::exp(t)}; }},
        {[](const Tensor& z) { return mul_scalar(z, -2.0); },
         {1.0},
         [](double t) { return std::vector<double>{std::exp(-2.0 * t)}; }},
        {[](const Tensor& z) {
             // Rotation: dz = (-z2, z1).
             return Tensor::vector({-z.data()[1], z.data()[0]});
         },
         {1.0, 0.0},
         [](double t) { return std::vector<double>{std::cos(t), std::sin(t)}; }},
    };
    const std::vector<double> times{0.0, 2.0};
    for (const auto& c : cases) {
        double prev_err = std::numeric_limits<double>::infinity();
        for (double rtol : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
            SolverConfig cfg;
            cfg.rtol = rtol;
            cfg.atol = rtol / 10.0;
            auto traj = integrate(c.f, Tensor::vector(c.z0), times, cfg);
            const auto want = c.exact(2.0);
            double err = 0.0;
            for (std::size_t j = 0; j < want.size(); ++j)
                err = std::max(err, std::abs(traj.states[1].data()[j] - want[j]));
            EXPECT_LE(err, prev_err * (1.0 + 1e-9));
            prev_err = err;
        }
    }
}

TEST(Integrate, FifthOrderConvergenceSlope) {
    // Fixed-step runs of the 5th-order formula on dz/dt = z over [0,1].
    SolverConfig cfg;
    cfg.atol = 1e30;  // force acceptance; h is supplied each call
    cfg.rtol = 1e30;
    std::vector<double> log_err, log_inv_h;
    for (double h : {0.1, 0.05, 0.025, 0.0125}) {
        Tensor z = Tensor::vector({1.0});
        const long n = std::lround(1.0 / h);
        double t = 0.0;
        for (long i = 0; i < n; ++i) {
            z = dopri5_step(kExpDynamics, t, z, h, cfg).z_next;
            t += h;
        }
        const double err = std::abs(z.data()[0] - std::exp(1.0));
        log_err.push_back(std::log2(err));
        log_inv_h.push_back(std::log2(1.0 / h));
    }
    // Least-squares slope of log2(error) against log2(1/h).
    const std::size_t n = log_err.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += log_inv_h[i];
        sy += log_err[i];
        sxx += log_inv_h[i] * log_inv_h[i];
        sxy += log_inv_h[i] * log_err[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    EXPECT_NEAR(-slope, 5.0, 0.3);
}

TEST(Adjoint, ZeroDynamicsSumsObservationGradients) {
    OdeSystem sys;
    sys.f = kZeroDynamics;
    const std::vector<double> times{0.0, 1.0, 2.0};
    auto traj = integrate(sys.f, Tensor::vector({1.0, 2.0}), times, {});
    const std::vector<std::vector<double>> dl = {{1.0, 0.0}, {0.5, -1.0}, {0.25, 2.0}};
    auto res = adjoint_backward(sys, traj, dl, {});
    EXPECT_NEAR(res.z0_grad[0], 1.75, 1e-12);
    EXPECT_NEAR(res.z0_grad[1], 1.0, 1e-12);
    EXPECT_TRUE(res.param_grads.empty());
}

TEST(Adjoint, LinearSystemMatchesMatrixExponential) {
    // For dz/dt = A z and a loss on z(T): dL/dz0 = exp(A^T T) dL/dz(T).
    const std::array<double, 4> a_vals{-0.5, 1.2, -0.7, -0.3};
    Tensor a = Tensor::of({2, 2}, {a_vals[0], a_vals[1], a_vals[2], a_vals[3]})
                   .set_requires_grad(true);
    OdeSystem sys;
    sys.f = [a](const Tensor& z) { return matmul(a, z); };
    sys.params = {a};
    const double T = 1.5;
    const std::vector<double> times{0.0, T};
    SolverConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-11;
    auto traj = integrate(sys.f, Tensor::vector({0.8, -0.4}), times, cfg);
    const std::vector<double> gT{0.3, -1.1};
    auto res = adjoint_backward(sys, traj, {{0.0, 0.0}, gT}, cfg);

    const std::array<double, 4> at{a_vals[0], a_vals[2], a_vals[1], a_vals[3]};
    const auto e = expm2(at, T);
    const std::vector<double> want{e[0] * gT[0] + e[1] * gT[1],
                                   e[2] * gT[0] + e[3] * gT[1]};
    EXPECT_NEAR(res.z0_grad[0], want[0], 1e-5);
    EXPECT_NEAR(res.z0_grad[1], want[1], 1e-5);
}

TEST(Adjoint, ParityWithBackpropAndFiniteDifferences) {
    // 3-dim latent, single-hidden-layer tanh dynamics net.
    Rng rng(41);
    const std::vector<std::size_t> hidden{8};
    MlpParams net = make_mlp(3, hidden, 3, Activation::Tanh, rng);
    auto params = net.parameters();
    const std::vector<double> times{0.0, 0.4, 0.9};
    const std::vector<double> z0v{0.3, -0.5, 0.8};
    std::vector<std::vector<double>> loss_w;
    for (std::size_t i = 0; i < times.size(); ++i) {
        std::vector<double> w(3);
        for (auto& v : w) v = rng.uniform(-1, 1);
        loss_w.push_back(w);
    }
    SolverConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-11;

    const OdeFunc f = [&](const Tensor& z) { return mlp_forward(net, z); };
    auto loss_value = [&] {
        auto traj = integrate(f, Tensor::vector(z0v), times, cfg);
        double l = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i)
            for (std::size_t j = 0; j < 3; ++j)
                l += loss_w[i][j] * traj.states[i].data()[j];
        return l;
    };

    // Backprop through the solver.
    zero_grad(std::span<Tensor>(params));
    Tensor z0 = Tensor::vector(z0v).set_requires_grad(true);
    auto traj = integrate(f, z0, times, cfg);
    Tensor loss;
    for (std::size_t i = 0; i < times.size(); ++i) {
        Tensor term = sum(mul(traj.states[i], Tensor::vector(loss_w[i])));
        loss = i == 0 ? term : add(loss, term);
    }
    backward(loss);
    const auto bp = flatten_grads(params);
    z0.node()->ensure_grad();
    const auto bp_z0 = z0.grad();

    // Adjoint on the same trajectory values.
    OdeSystem sys{f, params};
    auto res = adjoint_backward(sys, traj, loss_w, cfg);
    std::vector<double> aj;
    for (const auto& g : res.param_grads) aj.insert(aj.end(), g.begin(), g.end());

    EXPECT_LE(max_rel_err(aj, bp), 1e-4);
    EXPECT_LE(max_rel_err(res.z0_grad, bp_z0), 1e-4);

    // Both against central finite differences.
    std::vector<double> fd;
    const double h = 1e-5;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + h;
            const double fp = loss_value();
            p.data()[i] = saved - h;
            const double fm = loss_value();
            p.data()[i] = saved;
            fd.push_back((fp - fm) / (2.0 * h));
        }
    }
    EXPECT_LE(max_rel_err(bp, fd), 1e-3);
    EXPECT_LE(max_rel_err(aj, fd), 1e-3);
}

TEST(Adjoint, ScratchSafeOnParamGradBuffers) {
    // adjoint_backward may clobber param .grad; detached copies isolate it.
    Tensor a = Tensor::of({1, 1}, {0.7}).set_requires_grad(true);
    a.zero_grad();
    a.node()->grad[0] = 123.0;  // pending accumulation
    Tensor a_copy = a.detach(true);
    OdeSystem sys;
    sys.f = [a_copy](const Tensor& z) { return matmul(a_copy, z); };
    sys.params = {a_copy};
    auto traj = integrate(sys.f, Tensor::vector({1.0}), std::vector<double>{0.0, 1.0}, {});
    adjoint_backward(sys, traj, {{0.0}, {1.0}}, {});
    EXPECT_DOUBLE_EQ(a.grad()[0], 123.0);
}
