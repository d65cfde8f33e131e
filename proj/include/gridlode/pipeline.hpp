#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gridlode/checkpoint.hpp"
#include "gridlode/error.hpp"
#include "gridlode/eval.hpp"
#include "gridlode/griddata.hpp"
#include "gridlode/lode.hpp"
#include "gridlode/rng.hpp"

namespace gridlode {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// All command parameters in one bag: flat `key = value` config file plus
/// command-line overrides. Every command validates what it needs before
/// producing any output.
struct RunConfig {
    // Paths.
    std::string out_dir = ".";
    std::string checkpoint_path;
    std::string feeder_spec_path;
    std::string dataset_path;
    std::string truth_path;

    std::uint64_t seed = 0;

    // Generation.
    int day_minutes = 1440;
    SampleOptions sample;

    // Model and training.
    LodeConfig model;
    TrainConfig train;
    SolverConfig solver;
    double holdout_frac = 0.2;
    bool resume = false;

    // Task parameters.
    int query_rate = 1;         // minutes between query instants
    double split_time = 720.0;  // conditioning/horizon split for prediction
    double horizon_end = 1440.0;
    std::string task = "imputation";
};

namespace detail {

inline double cfg_double(const std::string& key, const std::string& value) {
    try {
        return parse_double(value, 0);
    } catch (const ParseError&) {
        throw ContractError("config: key '" + key + "' expects a number, got '" +
                            value + "'");
    }
}

inline std::int64_t cfg_int(const std::string& key, const std::string& value) {
    const double d = cfg_double(key, value);
    const auto i = static_cast<std::int64_t>(d);
    if (static_cast<double>(i) != d)
        throw ContractError("config: key '" + key + "' expects an integer");
    return i;
}

inline bool cfg_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ContractError("config: key '" + key + "' expects true/false");
}

inline std::vector<std::size_t> cfg_size_list(const std::string& key,
                                              const std::string& value) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<std::size_t>(cfg_int(key, item)));
    if (out.empty())
        throw ContractError("config: key '" + key + "' expects a size list");
    return out;
}

}  // namespace detail

inline GradMode parse_grad_mode(const std::string& s) {
    if (s == "backprop") return GradMode::Backprop;
    if (s == "adjoint") return GradMode::Adjoint;
    throw ContractError("grad mode must be 'backprop' or 'adjoint', got '" + s + "'");
}

/// Flat key-value text: `key = value` per line, '#' comments. Unknown keys
/// are rejected so typos cannot silently change a run.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](const std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) +
                                 ": expected key = value",
                             line_no);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    using detail::cfg_bool;
    using detail::cfg_double;
    using detail::cfg_int;
    for (const auto& [key, value] : kv) {
        if (key == "seed") cfg.seed = static_cast<std::uint64_t>(cfg_int(key, value));
        else if (key == "out") cfg.out_dir = value;
        else if (key == "checkpoint") cfg.checkpoint_path = value;
        else if (key == "feeder_spec") cfg.feeder_spec_path = value;
        else if (key == "dataset") cfg.dataset_path = value;
        else if (key == "truth") cfg.truth_path = value;
        else if (key == "day_minutes") cfg.day_minutes = static_cast<int>(cfg_int(key, value));
        else if (key == "smart_meter_rate") cfg.sample.smart_meter_rate = static_cast<int>(cfg_int(key, value));
        else if (key == "scada_rate") cfg.sample.scada_rate = static_cast<int>(cfg_int(key, value));
        else if (key == "noise_frac") cfg.sample.noise_frac = cfg_double(key, value);
        else if (key == "missing_prob") cfg.sample.missing_prob = cfg_double(key, value);
        else if (key == "scada_spacing") cfg.sample.scada_spacing = static_cast<int>(cfg_int(key, value));
        else if (key == "latent_dim") cfg.model.latent_dim = static_cast<std::size_t>(cfg_int(key, value));
        else if (key == "gru_hidden") cfg.model.gru_hidden = static_cast<std::size_t>(cfg_int(key, value));
        else if (key == "dynamics_hidden") cfg.model.dynamics_hidden = detail::cfg_size_list(key, value);
        else if (key == "time_scale") cfg.model.time_scale = cfg_double(key, value);
        else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(cfg_int(key, value));
        else if (key == "iterations") cfg.train.iterations = static_cast<int>(cfg_int(key, value));
        else if (key == "lr_init") cfg.train.lr_init = cfg_double(key, value);
        else if (key == "lr_decay") cfg.train.lr_decay = cfg_double(key, value);
        else if (key == "sigma_obs") cfg.train.sigma_obs = cfg_double(key, value);
        else if (key == "kl_weight") cfg.train.kl_weight = cfg_double(key, value);
        else if (key == "grad_mode") cfg.train.grad_mode = parse_grad_mode(value);
        else if (key == "recon_window") {
            if (value == "full") cfg.train.recon_window = ReconWindow::Full;
            else if (value == "second_half") cfg.train.recon_window = ReconWindow::SecondHalf;
            else throw ContractError("config: recon_window must be full|second_half");
        }
        else if (key == "rtol") cfg.solver.rtol = cfg_double(key, value);
        else if (key == "atol") cfg.solver.atol = cfg_double(key, value);
        else if (key == "h_init") cfg.solver.h_init = cfg_double(key, value);
        else if (key == "h_min") cfg.solver.h_min = cfg_double(key, value);
        else if (key == "h_max") cfg.solver.h_max = cfg_double(key, value);
        else if (key == "safety") cfg.solver.safety = cfg_double(key, value);
        else if (key == "max_steps") cfg.solver.max_steps = cfg_int(key, value);
        else if (key == "holdout_frac") cfg.holdout_frac = cfg_double(key, value);
        else if (key == "resume") cfg.resume = cfg_bool(key, value);
        else if (key == "query_rate") cfg.query_rate = static_cast<int>(cfg_int(key, value));
        else if (key == "split_time") { cfg.split_time = cfg_double(key, value); cfg.train.split_time = cfg.split_time; }
        else if (key == "horizon_end") cfg.horizon_end = cfg_double(key, value);
        else if (key == "task") {
            if (value != "imputation" && value != "prediction")
                throw ContractError("config: task must be imputation|prediction");
            cfg.task = value;
        }
        else throw ContractError("config: unknown key '" + key + "'");
    }
    cfg.train.seed = cfg.seed;
}

// ---------------------------------------------------------------------------
// Truth CSV
// ---------------------------------------------------------------------------

/// Truth is stored in the same CSV schema as observations, fully observed at
/// the 1-minute resolution: P/Q rows for every load node, V for every node.
inline void save_truth_csv(const std::string& path, const FeederSpec& spec,
                           const TruthSeries& truth) {
    Dataset ds;
    auto push = [&](int node, MeasType type, const std::vector<double>& series) {
        Record r;
        r.node_id = node;
        r.type = type;
        for (int t = 0; t < truth.day_minutes; ++t) {
            r.times.push_back(t);
            r.values.push_back(series[t]);
            r.mask.push_back(1.0);
        }
        ds.records.push_back(std::move(r));
    };
    for (const auto& n : spec.nodes) {
        if (n.base_kw <= 0.0) continue;
        push(n.id, MeasType::P, truth.p_kw[n.id]);
        push(n.id, MeasType::Q, truth.q_kvar[n.id]);
    }
    for (const auto& n : spec.nodes) push(n.id, MeasType::V, truth.v_pu[n.id]);
    save_dataset(path, ds);
}

inline TruthSeries load_truth_csv(const std::string& path) {
    Dataset ds = load_dataset(path);
    if (ds.records.empty()) throw ContractError("truth file " + path + " is empty");
    TruthSeries truth;
    int max_node = 0;
    std::size_t minutes = 0;
    for (const auto& r : ds.records) {
        max_node = std::max(max_node, r.node_id);
        minutes = std::max(minutes, r.times.size());
    }
    truth.day_minutes = static_cast<int>(minutes);
    truth.p_kw.assign(max_node + 1, {});
    truth.q_kvar.assign(max_node + 1, {});
    truth.v_pu.assign(max_node + 1, {});
    for (const auto& r : ds.records) {
        if (r.times.size() != minutes || r.times.front() != 0.0)
            throw ContractError("truth record " + r.key() +
                                " must cover the full 1-minute grid");
        auto& dst = r.type == MeasType::P   ? truth.p_kw[r.node_id]
                    : r.type == MeasType::Q ? truth.q_kvar[r.node_id]
                                            : truth.v_pu[r.node_id];
        dst = r.values;
    }
    return truth;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline FeederSpec resolve_feeder_spec(const RunConfig& cfg) {
    if (cfg.feeder_spec_path.empty()) return default_feeder_spec();
    if (!std::filesystem::exists(cfg.feeder_spec_path))
        throw IoError("feeder spec file not found: " + cfg.feeder_spec_path);
    return load_feeder_spec(cfg.feeder_spec_path);
}

inline Dataset load_normalized_dataset(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        throw ContractError("config: 'dataset' path is required");
    if (!std::filesystem::exists(cfg.dataset_path))
        throw IoError("dataset file not found: " + cfg.dataset_path);
    Dataset raw = load_dataset(cfg.dataset_path);
    if (raw.records.empty()) throw ContractError("dataset is empty");
    return normalize(unify_time_grid(raw.records));
}

inline std::string config_snapshot(const RunConfig& cfg) {
    std::ostringstream ss;
    ss << "seed=" << cfg.seed << " dataset=" << cfg.dataset_path
       << " checkpoint=" << cfg.checkpoint_path << " holdout_frac=" << cfg.holdout_frac
       << " query_rate=" << cfg.query_rate;
    return ss.str();
}

}  // namespace detail

/// generate: synthesize the feeder day, sample multi-rate records, write
/// feeder.spec, truth.csv and observed.csv under the output directory.
inline int cmd_generate(const RunConfig& cfg) {
    const FeederSpec spec = detail::resolve_feeder_spec(cfg);
    spec.validate();
    if (cfg.day_minutes <= 0) throw ContractError("day_minutes must be positive");

    SampleOptions opt = cfg.sample;
    opt.seed = cfg.seed;
    const TruthSeries truth = generate_truth(spec, cfg.day_minutes, cfg.seed);
    const auto records = sample_multirate(spec, truth, opt);
    const Dataset ds = unify_time_grid(records);

    detail::ensure_out_dir(cfg);
    save_feeder_spec(detail::out_path(cfg, "feeder.spec"), spec);
    save_truth_csv(detail::out_path(cfg, "truth.csv"), spec, truth);
    save_dataset(detail::out_path(cfg, "observed.csv"), ds);

    std::size_t observations = 0;
    for (const auto& r : ds.records) observations += r.observed_count();
    std::cout << "generated " << spec.nodes.size() << " nodes, " << ds.records.size()
              << " records, " << observations << " observations\n";
    return 0;
}

/// train: fit the latent ODE on the training split and write checkpoint.json
/// plus loss_log.csv. Resumes from an existing checkpoint when resume=true.
inline int cmd_train(const RunConfig& cfg) {
    Dataset ds = detail::load_normalized_dataset(cfg);
    const Split split = holdout_split(ds, cfg.holdout_frac, cfg.seed);
    if (split.train_idx.empty()) throw ContractError("training split is empty");

    auto all_series = to_series(ds);
    std::vector<Series> train_series;
    for (auto i : split.train_idx) train_series.push_back(all_series[i]);

    Checkpoint ckpt;
    if (cfg.resume) {
        if (cfg.checkpoint_path.empty() ||
            !std::filesystem::exists(cfg.checkpoint_path))
            throw IoError("resume requested but checkpoint not found: " +
                          cfg.checkpoint_path);
        ckpt = load_checkpoint(cfg.checkpoint_path);
        ckpt.train.iterations = cfg.train.iterations;
        ckpt.train.grad_mode = cfg.train.grad_mode;
    } else {
        ckpt.model_cfg = cfg.model;
        Rng init_rng = Rng::stream(cfg.seed, "init");
        ckpt.model = LodeModel::init(ckpt.model_cfg, init_rng);
        auto params = ckpt.model.parameters();
        ckpt.optimizer = AdamState::init(params);
        ckpt.train = cfg.train;
        ckpt.solver = cfg.solver;
        ckpt.seed = cfg.seed;
    }

    auto result = train(ckpt.model, train_series, ckpt.train, ckpt.solver,
                        &ckpt.optimizer);
    ckpt.iterations_done = ckpt.optimizer.step;
    ckpt.norm_stats.clear();
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        ckpt.norm_stats.emplace_back(ds.records[i].key(), ds.norm_stats[i]);

    detail::ensure_out_dir(cfg);
    const std::string ckpt_path = cfg.checkpoint_path.empty()
                                      ? detail::out_path(cfg, "checkpoint.json")
                                      : cfg.checkpoint_path;
    save_checkpoint(ckpt_path, ckpt);
    save_loss_log(detail::out_path(cfg, "loss_log.csv"), result.log);

    if (!result.log.empty())
        std::cout << "trained " << result.log.size() << " iterations, neg_elbo "
                  << result.log.front().neg_elbo << " -> " << result.log.back().neg_elbo
                  << ", mse " << result.log.front().mse << " -> "
                  << result.log.back().mse << "\n";
    else
        std::cout << "trained 0 iterations (checkpoint written unchanged)\n";
    return 0;
}

namespace detail {

struct LoadedModel {
    Checkpoint ckpt;
    Dataset ds;
    TruthSeries truth;
    bool has_truth = false;
};

inline LoadedModel load_for_inference(const RunConfig& cfg) {
    if (cfg.checkpoint_path.empty())
        throw ContractError("config: 'checkpoint' path is required");
    if (!std::filesystem::exists(cfg.checkpoint_path))
        throw IoError("checkpoint not found: " + cfg.checkpoint_path);
    LoadedModel lm;
    lm.ckpt = load_checkpoint(cfg.checkpoint_path);
    lm.ds = load_normalized_dataset(cfg);
    if (!cfg.truth_path.empty()) {
        if (!std::filesystem::exists(cfg.truth_path))
            throw IoError("truth file not found: " + cfg.truth_path);
        lm.truth = load_truth_csv(cfg.truth_path);
        lm.has_truth = true;
    }
    return lm;
}

inline std::vector<std::size_t> smart_meter_records(const Dataset& ds) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        if (ds.records[i].type != MeasType::V) idx.push_back(i);
    return idx;
}

inline std::vector<std::size_t> eval_selection(const RunConfig& cfg, const Dataset& ds) {
    if (cfg.holdout_frac > 0.0) {
        const Split split = holdout_split(ds, cfg.holdout_frac, cfg.seed);
        if (!split.test_idx.empty()) return split.test_idx;
    }
    return smart_meter_records(ds);
}

}  // namespace detail

/// impute: reconstruct every smart-meter record on the query grid; write
/// per-node plot-ready series and, when truth is available, an MSE report
/// against both the model and the linear baseline.
inline int cmd_impute(const RunConfig& cfg) {
    auto lm = detail::load_for_inference(cfg);
    const auto started = std::chrono::steady_clock::now();

    std::vector<double> query;
    for (int t = 0; t < cfg.day_minutes; t += cfg.query_rate) query.push_back(t);

    detail::ensure_out_dir(cfg);
    std::filesystem::create_directories(
        std::filesystem::path(cfg.out_dir) / "series");

    auto series = to_series(lm.ds);
    const auto idx = detail::smart_meter_records(lm.ds);
    EvalReport report;
    report.task = "imputation";
    report.config_snapshot = detail::config_snapshot(cfg);
    for (std::size_t i : idx) {
        const Record& rec = lm.ds.records[i];
        const NormStats& stats = lm.ds.norm_stats[i];
        auto imputed = impute(lm.ckpt.model, series[i], stats, query, lm.ckpt.solver);

        std::vector<double> obs_eng(rec.values.size(), 0.0);
        for (std::size_t k = 0; k < rec.values.size(); ++k)
            if (rec.mask[k] > 0.5) obs_eng[k] = stats.denormalize(rec.values[k]);
        auto baseline = linear_interp(rec.times, obs_eng, rec.mask, query);

        SeriesFrame frame;
        frame.times = query;
        frame.imputed = imputed;
        frame.baseline = baseline;
        frame.truth.assign(query.size(), 0.0);
        frame.observed.assign(query.size(), 0.0);
        frame.observed_mask.assign(query.size(), 0.0);
        for (std::size_t k = 0; k < rec.times.size(); ++k) {
            if (rec.mask[k] <= 0.5) continue;
            const auto it = std::lower_bound(query.begin(), query.end(), rec.times[k]);
            if (it != query.end() && *it == rec.times[k]) {
                const std::size_t q = static_cast<std::size_t>(it - query.begin());
                frame.observed[q] = obs_eng[k];
                frame.observed_mask[q] = 1.0;
            }
        }
        if (lm.has_truth) {
            const auto& t = detail::truth_for(lm.truth, rec);
            for (std::size_t q = 0; q < query.size(); ++q)
                frame.truth[q] = t[static_cast<std::size_t>(query[q])];
            report.rows.push_back(detail::score_record(rec, stats, query, imputed,
                                                       baseline, t));
        } else {
            for (std::size_t q = 0; q < query.size(); ++q)
                frame.truth[q] = std::numeric_limits<double>::quiet_NaN();
        }
        save_series_frame(detail::out_path(cfg, "series/impute_" + rec.key() + ".csv"),
                          frame);
    }
    report.finalize_aggregate();
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    save_eval_report(detail::out_path(cfg, "impute_report.csv"), report);
    std::cout << "imputed " << idx.size() << " records at " << query.size()
              << " instants";
    if (lm.has_truth)
        std::cout << "; aggregate mse% lode " << report.aggregate_mse_pct_lode
                  << " baseline " << report.aggregate_mse_pct_baseline;
    std::cout << "\n";
    return 0;
}

/// predict: condition on the first half, extrapolate over the horizon grid;
/// horizons past the observed day are allowed and flagged as extrapolation.
inline int cmd_predict(const RunConfig& cfg) {
    auto lm = detail::load_for_inference(cfg);
    const auto started = std::chrono::steady_clock::now();

    std::vector<double> horizon;
    for (double t = 0; t < cfg.horizon_end; t += cfg.query_rate)
        if (t > cfg.split_time) horizon.push_back(t);
    if (horizon.empty()) throw ContractError("predict: empty horizon");

    detail::ensure_out_dir(cfg);
    std::filesystem::create_directories(
        std::filesystem::path(cfg.out_dir) / "series");

    auto series = to_series(lm.ds);
    const auto idx = detail::smart_meter_records(lm.ds);
    EvalReport report;
    report.task = "prediction";
    report.config_snapshot = detail::config_snapshot(cfg);
    const bool extrapolates_past_day =
        cfg.horizon_end > static_cast<double>(lm.ds.grid_times().back());
    if (extrapolates_past_day)
        report.config_snapshot += " extrapolation=beyond-observed-window";

    for (std::size_t i : idx) {
        const Record& rec = lm.ds.records[i];
        const NormStats& stats = lm.ds.norm_stats[i];

        Series cond;
        cond.data_dim = 1;
        double last_obs_eng = 0;
        bool has_obs = false;
        for (std::size_t k = 0; k < rec.times.size(); ++k) {
            if (rec.times[k] > cfg.split_time) break;
            cond.times.push_back(rec.times[k]);
            cond.values.push_back(series[i].values[k]);
            cond.mask.push_back(series[i].mask[k]);
            if (rec.mask[k] > 0.5) {
                last_obs_eng = stats.denormalize(rec.values[k]);
                has_obs = true;
            }
        }
        if (!has_obs) continue;  // nothing to condition on

        auto predicted = predict(lm.ckpt.model, cond, stats, horizon, lm.ckpt.solver);
        std::vector<double> hold_last(horizon.size(), last_obs_eng);

        SeriesFrame frame;
        frame.times = horizon;
        frame.imputed = predicted;
        frame.baseline = hold_last;
        frame.truth.assign(horizon.size(), std::numeric_limits<double>::quiet_NaN());
        frame.observed.assign(horizon.size(), 0.0);
        frame.observed_mask.assign(horizon.size(), 0.0);
        if (lm.has_truth) {
            const auto& t = detail::truth_for(lm.truth, rec);
            bool in_range = true;
            for (std::size_t q = 0; q < horizon.size(); ++q) {
                const auto m = static_cast<std::size_t>(horizon[q]);
                if (m >= t.size()) {
                    in_range = false;
                    break;
                }
                frame.truth[q] = t[m];
            }
            if (in_range)
                report.rows.push_back(detail::score_record(rec, stats, horizon,
                                                           predicted, hold_last, t));
        }
        save_series_frame(detail::out_path(cfg, "series/predict_" + rec.key() + ".csv"),
                          frame);
    }
    report.finalize_aggregate();
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    save_eval_report(detail::out_path(cfg, "predict_report.csv"), report);
    std::cout << "predicted " << idx.size() << " records over " << horizon.size()
              << " horizon instants\n";
    return 0;
}

/// evaluate: score the held-out records (or all smart-meter records when no
/// holdout) for the configured task; requires the truth file.
inline int cmd_evaluate(const RunConfig& cfg) {
    if (cfg.truth_path.empty())
        throw ContractError("config: 'truth' path is required for evaluate");
    auto lm = detail::load_for_inference(cfg);
    if (!lm.has_truth) throw ContractError("evaluate: truth file failed to load");
    const auto started = std::chrono::steady_clock::now();

    const auto idx = detail::eval_selection(cfg, lm.ds);
    EvalReport report;
    if (cfg.task == "prediction") {
        report = evaluate_prediction(lm.ckpt.model, lm.ds, lm.truth, idx,
                                     cfg.split_time, lm.ckpt.solver);
    } else {
        report = evaluate_imputation(lm.ckpt.model, lm.ds, lm.truth, idx,
                                     lm.ckpt.solver);
    }
    report.config_snapshot = detail::config_snapshot(cfg) + " task=" + cfg.task;
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();

    detail::ensure_out_dir(cfg);
    save_eval_report(detail::out_path(cfg, "eval_report.csv"), report);
    std::cout << "evaluated " << report.rows.size() << " records: mse% lode "
              << report.aggregate_mse_pct_lode << ", baseline "
              << report.aggregate_mse_pct_baseline << "\n";
    return 0;
}

}  // namespace gridlode
