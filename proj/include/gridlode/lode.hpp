#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gridlode/error.hpp"
#include "gridlode/nn.hpp"
#include "gridlode/odesolve.hpp"
#include "gridlode/rng.hpp"
#include "gridlode/series.hpp"
#include "gridlode/tensor.hpp"

namespace gridlode {

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct LodeConfig {
    std::size_t latent_dim = 16;
    std::size_t gru_hidden = 40;
    std::vector<std::size_t> dynamics_hidden{100, 100, 100};
    std::size_t data_dim = 1;
    // Times enter the model scaled by this factor; one day in minutes maps
    // onto six model-time units. Daily load humps then need latent velocities
    // near one, which matches the init scale of the dynamics net and trains
    // far faster than a [0, 1] day.
    double time_scale = 1.0 / 240.0;

    std::size_t encoder_input_dim() const { return 2 * data_dim + 1; }
};

/// Encoder GRU + posterior head, latent dynamics net, and decoder.
struct LodeModel {
    LodeConfig cfg;
    GruParams encoder;
    MlpParams head;      // gru_hidden -> 2 * latent_dim, affine
    MlpParams dynamics;  // latent_dim -> ... -> latent_dim, tanh hidden
    MlpParams decoder;   // latent_dim -> data_dim, single affine layer

    static LodeModel init(const LodeConfig& cfg, Rng& rng) {
        LodeModel m;
        m.cfg = cfg;
        m.encoder = make_gru(cfg.encoder_input_dim(), cfg.gru_hidden, rng);
        m.head = make_mlp(cfg.gru_hidden, {}, 2 * cfg.latent_dim,
                          Activation::Identity, rng);
        // Start the posterior noise small: softplus(-2.5) ~ 0.08. With a wide
        // initial sigma the single-sample ELBO rewards a contracting latent
        // flow that erases record identity and the fit plateaus at the
        // population mean; a tight start keeps z0 informative from the first
        // update and the KL term still pulls sigma back up where warranted.
        auto& head_bias = m.head.layers[0].bias.data();
        for (std::size_t i = cfg.latent_dim; i < 2 * cfg.latent_dim; ++i)
            head_bias[i] = -2.5;
        m.dynamics = make_mlp(cfg.latent_dim, cfg.dynamics_hidden, cfg.latent_dim,
                              Activation::Tanh, rng);
        m.decoder = make_mlp(cfg.latent_dim, {}, cfg.data_dim,
                             Activation::Identity, rng);
        return m;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& p : encoder.parameters()) out.push_back(p);
        for (const auto& p : head.parameters()) out.push_back(p);
        for (const auto& p : dynamics.parameters()) out.push_back(p);
        for (const auto& p : decoder.parameters()) out.push_back(p);
        return out;
    }

    /// Parameter names aligned with parameters(); used by checkpoints.
    static std::vector<std::string> parameter_names(const LodeConfig& cfg) {
        std::vector<std::string> names;
        for (const char* gate : {"reset", "update", "cand"}) {
            names.push_back(std::string("encoder.w_") + gate);
            names.push_back(std::string("encoder.u_") + gate);
            names.push_back(std::string("encoder.b_") + gate);
        }
        auto mlp_names = [&names](const std::string& prefix, std::size_t n_layers) {
            for (std::size_t l = 0; l < n_layers; ++l) {
                names.push_back(prefix + ".w" + std::to_string(l));
                names.push_back(prefix + ".b" + std::to_string(l));
            }
        };
        mlp_names("head", 1);
        mlp_names("dynamics", cfg.dynamics_hidden.size() + 1);
        mlp_names("decoder", 1);
        return names;
    }

    /// Inference copy: same values, nothing requires a gradient, so forward
    /// passes record no tape.
    LodeModel detached() const {
        LodeModel m;
        m.cfg = cfg;
        auto det = [](const Tensor& t) { return t.detach(false); };
        m.encoder = GruParams{det(encoder.w_reset), det(encoder.u_reset), det(encoder.b_reset),
                              det(encoder.w_update), det(encoder.u_update), det(encoder.b_update),
                              det(encoder.w_cand), det(encoder.u_cand), det(encoder.b_cand)};
        auto det_mlp = [&](const MlpParams& p) {
            MlpParams out;
            for (const auto& l : p.layers)
                out.layers.push_back({det(l.weight), det(l.bias), l.act});
            return out;
        };
        m.head = det_mlp(head);
        m.dynamics = det_mlp(dynamics);
        m.decoder = det_mlp(decoder);
        return m;
    }

    OdeFunc dynamics_fn() const {
        return [net = dynamics](const Tensor& z) { return mlp_forward(net, z); };
    }
};

struct PosteriorStats {
    Tensor mu;     // latent_dim
    Tensor sigma;  // latent_dim, strictly positive (softplus of the raw head)
};

// ---------------------------------------------------------------------------
// Encode / sample / decode
// ---------------------------------------------------------------------------

/// Runs the GRU backward in time over the observation rows and maps the
/// final hidden state to the posterior over z0. One step per time point that
/// carries at least one observed channel; rows with nothing observed are
/// skipped entirely, so grid padding from batching neither stretches the
/// recurrence nor lets sentinel values in. Inputs per step are
/// [masked values; mask; dt], with dt the gap to the next-later observation
/// row (0 for the first consumed, i.e. latest, row).
inline PosteriorStats encode(const LodeModel& model, std::span<const double> values,
                             std::span<const double> mask,
                             std::span<const double> times) {
    const std::size_t d = model.cfg.data_dim;
    const std::size_t n = times.size();
    if (values.size() != n * d || mask.size() != n * d)
        throw ContractError("encode: values/mask must be N x data_dim");
    for (std::size_t i = 1; i < n; ++i)
        if (!(times[i] > times[i - 1]))
            throw ContractError("encode: times must be strictly increasing");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (mask[i * d + j] > 0.5) {
                rows.push_back(i);
                break;
            }
    if (rows.empty())
        throw ContractError("encode: empty record (no observed entries)");

    Tensor h = Tensor::zeros({model.cfg.gru_hidden});
    std::vector<double> x(2 * d + 1);
    for (std::size_t step = rows.size(); step-- > 0;) {
        const std::size_t row = rows[step];
        for (std::size_t j = 0; j < d; ++j) {
            const bool obs = mask[row * d + j] > 0.5;
            x[j] = obs ? values[row * d + j] : 0.0;
            x[d + j] = obs ? 1.0 : 0.0;
        }
        x[2 * d] = step + 1 < rows.size()
                       ? (times[rows[step + 1]] - times[row]) * model.cfg.time_scale
                       : 0.0;
        h = gru_step(model.encoder, Tensor::vector(x), h);
    }
    Tensor out = mlp_forward(model.head, h);
    const std::size_t latent = model.cfg.latent_dim;
    PosteriorStats ps;
    ps.mu = slice(out, 0, latent);
    ps.sigma = softplus(slice(out, latent, latent));
    return ps;
}

inline PosteriorStats encode(const LodeModel& model, const Series& s) {
    if (s.data_dim != model.cfg.data_dim)
        throw ContractError("encode: series data_dim does not match model");
    return encode(model, s.values, s.mask, s.times);
}

/// Reparameterized draw z0 = mu + sigma . eps; gradients flow to mu, sigma.
inline Tensor sample_latent(const PosteriorStats& ps, std::span<const double> eps) {
    if (eps.size() != ps.mu.size())
        throw ContractError("sample_latent: eps length must equal latent_dim");
    return add(ps.mu,
               mul(ps.sigma, Tensor::vector(std::vector<double>(eps.begin(), eps.end()))));
}

inline Tensor decode_state(const LodeModel& model, const Tensor& z) {
    return mlp_forward(model.decoder, z);
}

/// Decoder applied independently per trajectory state; rows are the means of
/// the observation likelihood in normalized data units.
inline std::vector<Tensor> decode(const LodeModel& model, const Trajectory& traj) {
    std::vector<Tensor> out;
    out.reserve(traj.size());
    for (const auto& z : traj.states) {
        if (!z.all_finite()) throw ContractError("decode: non-finite latent state");
        out.push_back(decode_state(model, z));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ELBO
// ---------------------------------------------------------------------------

enum class ReconWindow { Full, SecondHalf };
enum class GradMode { Backprop, Adjoint };

struct ElboConfig {
    double sigma_obs = 0.05;
    double kl_weight = 1.0;
    ReconWindow recon_window = ReconWindow::Full;
    double split_time = 720.0;  // minutes; used when recon_window is SecondHalf
};

/// KL(N(mu, sigma^2) || N(0, 1)) = sum_j 0.5 (mu_j^2 + sigma_j^2 - 1 - ln sigma_j^2).
inline Tensor kl_to_standard_normal(const PosteriorStats& ps) {
    Tensor quad = add(sum(mul(ps.mu, ps.mu)), sum(mul(ps.sigma, ps.sigma)));
    Tensor log_var = mul_scalar(sum(log(ps.sigma)), 2.0);
    const double latent = static_cast<double>(ps.mu.size());
    return add_scalar(sub(mul_scalar(quad, 0.5), mul_scalar(log_var, 0.5)),
                      -0.5 * latent);
}

namespace detail {

/// Tape results for a single record's ELBO pieces. In adjoint mode the
/// reconstruction graph hangs off per-time leaf states instead of the
/// solver's tape.
struct RecordElbo {
    Tensor neg_elbo;  // scalar tape node (backprop mode)
    Tensor neg_recon; // scalar tape node over decode graph
    Tensor kl;        // scalar tape node over the encoder graph
    Tensor z0;        // tape node into the encoder (mu + sigma.eps)
    double recon = 0, kl_value = 0, sse = 0;
    std::size_t n_obs = 0;
    // Adjoint-mode extras:
    Trajectory traj;               // plain-value trajectory
    std::vector<Tensor> z_leaves;  // leaf states the decode graph hangs from
    std::vector<double> int_times; // model-time integration grid
};

/// Observed-entry reconstruction over the latent trajectory. Only times
/// carrying at least one observation (inside the recon window) enter the
/// integration grid; masked entries contribute exactly zero.
inline RecordElbo record_elbo(const LodeModel& model, const LodeModel& dyn_model,
                              const Series& s, std::span<const double> eps,
                              const ElboConfig& cfg, const SolverConfig& solver,
                              GradMode mode) {
    s.validate();
    const std::size_t d = model.cfg.data_dim;
    const std::size_t n = s.length();

    PosteriorStats ps = encode(model, s);
    RecordElbo out;
    out.z0 = sample_latent(ps, eps);
    out.kl = kl_to_standard_normal(ps);
    out.kl_value = out.kl.value();

    // Times that contribute reconstruction terms.
    std::vector<std::size_t> recon_rows;
    for (std::size_t i = 0; i < n; ++i) {
        if (cfg.recon_window == ReconWindow::SecondHalf && s.times[i] <= cfg.split_time)
            continue;
        for (std::size_t j = 0; j < d; ++j)
            if (s.observed(i, j)) {
                recon_rows.push_back(i);
                break;
            }
    }
    if (recon_rows.empty())
        throw ContractError("elbo: no observed entries in the reconstruction window");

    // Integration grid in model time, always anchored at the record epoch.
    out.int_times.push_back(s.times[0] * model.cfg.time_scale);
    std::vector<std::size_t> traj_index(recon_rows.size());
    for (std::size_t r = 0; r < recon_rows.size(); ++r) {
        const double t = s.times[recon_rows[r]] * model.cfg.time_scale;
        if (t > out.int_times.back()) out.int_times.push_back(t);
        traj_index[r] = out.int_times.size() - 1;
    }

    std::vector<Tensor> decoded;
    if (mode == GradMode::Backprop) {
        out.traj = integrate(model.dynamics_fn(), out.z0, out.int_times, solver);
        decoded = decode(model, out.traj);
    } else {
        // Values-only forward solve; leaves receive dL/dz_i for the adjoint.
        out.traj = integrate(dyn_model.dynamics_fn(), out.z0.detach(false),
                             out.int_times, solver);
        out.z_leaves.reserve(out.traj.size());
        for (const auto& z : out.traj.states) out.z_leaves.push_back(z.detach(true));
        decoded.reserve(out.traj.size());
        for (const auto& z : out.z_leaves) decoded.push_back(decode_state(model, z));
    }

    Tensor sse;  // masked sum of squared errors, on tape
    for (std::size_t r = 0; r < recon_rows.size(); ++r) {
        const std::size_t row = recon_rows[r];
        std::vector<double> target(d), m(d);
        for (std::size_t j = 0; j < d; ++j) {
            const bool obs = s.observed(row, j);
            m[j] = obs ? 1.0 : 0.0;
            target[j] = obs ? s.value(row, j) : 0.0;
            out.n_obs += obs ? 1 : 0;
        }
        Tensor diff = sub(decoded[traj_index[r]], Tensor::vector(target));
        Tensor masked = mul(diff, Tensor::vector(m));
        Tensor term = sum(mul(masked, masked));
        sse = r == 0 ? term : add(sse, term);
    }
    out.sse = sse.value();

    // Gaussian log-likelihood with fixed sigma_obs:
    //   recon = -sse / (2 sigma^2) - n_obs * ln(sigma sqrt(2 pi))
    const double log_norm =
        std::log(cfg.sigma_obs * std::sqrt(2.0 * 3.14159265358979323846));
    out.neg_recon = add_scalar(mul_scalar(sse, 0.5 / (cfg.sigma_obs * cfg.sigma_obs)),
                               static_cast<double>(out.n_obs) * log_norm);
    out.recon = -out.neg_recon.value();
    if (mode == GradMode::Backprop)
        out.neg_elbo = add(out.neg_recon, mul_scalar(out.kl, cfg.kl_weight));
    return out;
}

}  // namespace detail

struct ElboResult {
    double elbo = 0;
    double recon = 0;
    double kl = 0;
    double mse = 0;           // masked MSE over observed entries, normalized units
    Tensor neg_elbo;          // batch-mean negative ELBO on tape
};

/// Batch ELBO with a single reparameterized z0 sample per record. Records
/// must share one unified time grid; eps supplies one latent-dim draw per
/// record so the estimator is deterministic given its inputs.
inline ElboResult elbo(const LodeModel& model, std::span<const Series> batch,
                       std::span<const std::vector<double>> eps,
                       const ElboConfig& cfg = {}, const SolverConfig& solver = {}) {
    if (batch.empty()) throw ContractError("elbo: empty batch");
    if (eps.size() != batch.size())
        throw ContractError("elbo: need one eps draw per record");
    for (std::size_t i = 1; i < batch.size(); ++i)
        if (batch[i].times != batch[0].times)
            throw ContractError("elbo: batch records must share a unified time grid");

    ElboResult res;
    std::size_t total_obs = 0;
    double total_sse = 0;
    Tensor acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto rec = detail::record_elbo(model, model, batch[i], eps[i], cfg, solver,
                                       GradMode::Backprop);
        res.recon += rec.recon;
        res.kl += rec.kl_value;
        total_sse += rec.sse;
        total_obs += rec.n_obs;
        acc = i == 0 ? rec.neg_elbo : add(acc, rec.neg_elbo);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    res.neg_elbo = mul_scalar(acc, inv);
    res.recon *= inv;
    res.kl *= inv;
    res.elbo = -res.neg_elbo.value();
    res.mse = total_sse / static_cast<double>(total_obs);
    return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 10;
    int iterations = 200;
    double lr_init = 0.01;
    double lr_decay = 0.999;  // lr_t = lr_init * lr_decay^t
    double sigma_obs = 0.05;
    double kl_weight = 1.0;
    std::uint64_t seed = 0;
    GradMode grad_mode = GradMode::Backprop;
    ReconWindow recon_window = ReconWindow::Full;
    double split_time = 720.0;

    void validate() const {
        if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
        if (iterations < 0) throw ContractError("train: iterations must be >= 0");
        if (lr_init <= 0) throw ContractError("train: lr_init must be positive");
        if (sigma_obs <= 0) throw ContractError("train: sigma_obs must be positive");
        if (lr_decay <= 0 || lr_decay > 1)
            throw ContractError("train: lr_decay must be in (0, 1]");
    }

    ElboConfig elbo_config() const {
        return ElboConfig{sigma_obs, kl_weight, recon_window, split_time};
    }
};

struct TrainLogEntry {
    std::int64_t iteration = 0;  // global step counter (continues on resume)
    double neg_elbo = 0;
    double mse = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
};

/// Non-finite training loss; carries the failing iteration and the last
/// finite loss seen before the blow-up.
struct DivergenceError : Error {
    DivergenceError(std::int64_t it, double last)
        : Error("training diverged at iteration " + std::to_string(it) +
                "; last finite loss " + std::to_string(last)),
          iteration(it),
          last_finite_loss(last) {}
    std::int64_t iteration = 0;
    double last_finite_loss = 0;
};

/// Maximizes the ELBO with Adam over minibatches of records. Deterministic
/// under a fixed config: batch selection draws from the "train.batch" stream
/// and reparameterization noise from "train.latent". Gradients flow through
/// the solver per cfg.grad_mode; both modes accumulate per record so peak
/// memory stays at one record's tape.
inline TrainResult train(LodeModel& model, std::span<const Series> records,
                         const TrainConfig& cfg, const SolverConfig& solver = {},
                         AdamState* opt_state = nullptr) {
    cfg.validate();
    if (records.empty()) throw ContractError("train: no records");
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].times != records[0].times)
            throw ContractError("train: records must share a unified time grid");

    auto params = model.parameters();
    AdamState local_state = AdamState::init(params);
    AdamState& adam = opt_state ? *opt_state : local_state;

    Rng batch_rng = Rng::stream(cfg.seed, "train.batch");
    Rng latent_rng = Rng::stream(cfg.seed, "train.latent");
    const ElboConfig ecfg = cfg.elbo_config();
    const double scale = 1.0 / static_cast<double>(cfg.batch_size);

    TrainResult result;
    double last_finite = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < cfg.iterations; ++it) {
        zero_grad(std::span<Tensor>(params));
        double batch_neg_elbo = 0;
        double batch_sse = 0;
        std::size_t batch_obs = 0;

        for (int b = 0; b < cfg.batch_size; ++b) {
            const Series& s = records[batch_rng.index(records.size())];
            std::vector<double> eps(model.cfg.latent_dim);
            for (auto& e : eps) e = latent_rng.normal();

            if (cfg.grad_mode == GradMode::Backprop) {
                auto rec = detail::record_elbo(model, model, s, eps, ecfg, solver,
                                               GradMode::Backprop);
                batch_neg_elbo += rec.neg_elbo.value();
                batch_sse += rec.sse;
                batch_obs += rec.n_obs;
                backward(mul_scalar(rec.neg_elbo, scale));
            } else {
                // Adjoint: VJP scratch must not touch the live grad buffers.
                LodeModel dyn_detached = model.detached();
                LodeModel dyn_grad = dyn_detached;
                MlpParams grad_net;
                for (const auto& l : model.dynamics.layers)
                    grad_net.layers.push_back(
                        {l.weight.detach(true), l.bias.detach(true), l.act});
                dyn_grad.dynamics = grad_net;

                auto rec = detail::record_elbo(model, dyn_detached, s, eps, ecfg,
                                               solver, GradMode::Adjoint);
                batch_neg_elbo += rec.neg_recon.value() +
                                  ecfg.kl_weight * rec.kl_value;
                batch_sse += rec.sse;
                batch_obs += rec.n_obs;

                // 1) Decode graph: populates decoder grads and dL/dz_i leaves.
                backward(mul_scalar(rec.neg_recon, scale));
                std::vector<std::vector<double>> dl_dz;
                dl_dz.reserve(rec.z_leaves.size());
                for (auto& leaf : rec.z_leaves) {
                    leaf.node()->ensure_grad();
                    dl_dz.push_back(leaf.grad());
                }
                // 2) Augmented backward solve for dynamics and z0 gradients.
                OdeSystem sys{dyn_grad.dynamics_fn(), grad_net.parameters()};
                auto adj = adjoint_backward(sys, rec.traj, dl_dz, solver);
                auto dyn_params = model.dynamics.parameters();
                for (std::size_t p = 0; p < dyn_params.size(); ++p) {
                    dyn_params[p].node()->ensure_grad();
                    auto& g = dyn_params[p].node()->grad;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        g[i] += adj.param_grads[p][i];
                }
                // 3) Encoder graph: KL plus the adjoint seed through z0.
                Tensor seed = Tensor::vector(adj.z0_grad);
                Tensor root = add(mul_scalar(rec.kl, ecfg.kl_weight * scale),
                                  sum(mul(rec.z0, seed)));
                backward(root);
            }
        }

        const double loss = batch_neg_elbo * scale;
        if (!std::isfinite(loss)) throw DivergenceError(adam.step + 1, last_finite);
        last_finite = loss;

        const double lr =
            cfg.lr_init * std::pow(cfg.lr_decay, static_cast<double>(adam.step));
        adam_update(adam, std::span<Tensor>(params), lr);
        result.log.push_back({adam.step, loss,
                              batch_sse / static_cast<double>(batch_obs)});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

namespace detail {

/// Shared impute/predict core: posterior-mean latent trajectory over the
/// union of record and query times, decoded and denormalized at the queries.
inline std::vector<double> mean_trajectory_values(const LodeModel& model,
                                                  const Series& s,
                                                  const NormStats& stats,
                                                  std::span<const double> query_times,
                                                  const SolverConfig& solver) {
    const LodeModel inf = model.detached();
    PosteriorStats ps = encode(inf, s);

    std::vector<double> grid(s.times.begin(), s.times.end());
    grid.insert(grid.end(), query_times.begin(), query_times.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::vector<double> scaled(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        scaled[i] = grid[i] * model.cfg.time_scale;

    Trajectory traj = integrate(inf.dynamics_fn(), ps.mu, scaled, solver);
    std::vector<double> out;
    out.reserve(query_times.size() * model.cfg.data_dim);
    for (double q : query_times) {
        const auto it = std::lower_bound(grid.begin(), grid.end(), q);
        const std::size_t idx = static_cast<std::size_t>(it - grid.begin());
        const Tensor row = decode_state(inf, traj.states[idx]);
        for (double v : row.data()) out.push_back(stats.denormalize(v));
    }
    return out;
}

}  // namespace detail

/// Reconstructs the record at arbitrary query instants: deterministic
/// inference from the posterior mean, returned in engineering units.
inline std::vector<double> impute(const LodeModel& model, const Series& s,
                                  const NormStats& stats,
                                  std::span<const double> query_times,
                                  const SolverConfig& solver = {}) {
    s.validate();
    if (s.observed_count() == 0) throw ContractError("impute: empty record");
    for (std::size_t i = 1; i < query_times.size(); ++i)
        if (!(query_times[i] > query_times[i - 1]))
            throw ContractError("impute: query times must be strictly increasing");
    if (!query_times.empty() && query_times.front() < s.times.front())
        throw ContractError("impute: query precedes the latent epoch");
    if (query_times.empty()) return {};
    return detail::mean_trajectory_values(model, s, stats, query_times, solver);
}

/// Extrapolates beyond the conditioning window: encodes the restricted
/// record and extends the latent trajectory to the horizon.
inline std::vector<double> predict(const LodeModel& model, const Series& conditioning,
                                   const NormStats& stats,
                                   std::span<const double> horizon_times,
                                   const SolverConfig& solver = {}) {
    conditioning.validate();
    if (conditioning.observed_count() == 0)
        throw ContractError("predict: empty conditioning window");
    if (horizon_times.empty()) return {};
    for (std::size_t i = 1; i < horizon_times.size(); ++i)
        if (!(horizon_times[i] > horizon_times[i - 1]))
            throw ContractError("predict: horizon times must be strictly increasing");
    if (horizon_times.front() <= conditioning.times.back())
        throw ContractError("predict: horizon must start after the conditioning window");
    return detail::mean_trajectory_values(model, conditioning, stats, horizon_times,
                                          solver);
}

}  // namespace gridlode
