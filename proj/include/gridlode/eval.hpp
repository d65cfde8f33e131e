#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gridlode/error.hpp"
#include "gridlode/griddata.hpp"
#include "gridlode/lode.hpp"
#include "gridlode/series.hpp"

namespace gridlode {

// ---------------------------------------------------------------------------
// Baselines and metrics
// ---------------------------------------------------------------------------

/// Piecewise-linear interpolation between observed points; before the first
/// and after the last observation the nearest observed value is held.
inline std::vector<double> linear_interp(std::span<const double> times,
                                         std::span<const double> values,
                                         std::span<const double> mask,
                                         std::span<const double> query_times) {
    if (times.size() != values.size() || times.size() != mask.size())
        throw ContractError("linear_interp: times/values/mask lengths differ");
    std::vector<double> obs_t, obs_v;
    for (std::size_t i = 0; i < times.size(); ++i)
        if (mask[i] > 0.5) {
            obs_t.push_back(times[i]);
            obs_v.push_back(values[i]);
        }
    if (obs_t.empty()) throw ContractError("linear_interp: empty record");

    std::vector<double> out;
    out.reserve(query_times.size());
    for (double q : query_times) {
        if (q <= obs_t.front()) {
            out.push_back(obs_v.front());
            continue;
        }
        if (q >= obs_t.back()) {
            out.push_back(obs_v.back());
            continue;
        }
        const auto it = std::upper_bound(obs_t.begin(), obs_t.end(), q);
        const std::size_t hi = static_cast<std::size_t>(it - obs_t.begin());
        const double t0 = obs_t[hi - 1], t1 = obs_t[hi];
        const double v0 = obs_v[hi - 1], v1 = obs_v[hi];
        out.push_back(v0 + (v1 - v0) * (q - t0) / (t1 - t0));
    }
    return out;
}

/// 100 * mean squared error over selected entries, in normalized [0,1] units.
inline double mse_percent(std::span<const double> pred, std::span<const double> truth,
                          std::span<const double> eval_mask) {
    if (pred.size() != truth.size() || pred.size() != eval_mask.size())
        throw ContractError("mse_percent: inputs must be aligned");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (eval_mask[i] <= 0.5) continue;
        const double d = pred[i] - truth[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw ContractError("mse_percent: empty selection");
    return 100.0 * acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Task evaluation
// ---------------------------------------------------------------------------

struct EvalRecordRow {
    std::string key;
    int node_id = 0;
    MeasType type = MeasType::P;
    std::size_t points = 0;
    double mse_pct_lode = 0;
    double mse_pct_baseline = 0;
    double rmse_lode = 0;      // engineering units
    double rmse_baseline = 0;  // engineering units
};

struct EvalReport {
    std::string task;  // "imputation" or "prediction"
    std::vector<EvalRecordRow> rows;
    double aggregate_mse_pct_lode = 0;
    double aggregate_mse_pct_baseline = 0;
    double runtime_seconds = 0;
    std::string config_snapshot;

    /// Point-count weighted mean of the per-record MSEs.
    void finalize_aggregate() {
        double wl = 0, wb = 0, n = 0;
        for (const auto& r : rows) {
            wl += r.mse_pct_lode * static_cast<double>(r.points);
            wb += r.mse_pct_baseline * static_cast<double>(r.points);
            n += static_cast<double>(r.points);
        }
        if (n > 0) {
            aggregate_mse_pct_lode = wl / n;
            aggregate_mse_pct_baseline = wb / n;
        }
    }
};

namespace detail {

inline const std::vector<double>& truth_for(const TruthSeries& truth, const Record& r) {
    switch (r.type) {
        case MeasType::P: return truth.p_kw[r.node_id];
        case MeasType::Q: return truth.q_kvar[r.node_id];
        default: return truth.v_pu[r.node_id];
    }
}

inline EvalRecordRow score_record(const Record& rec, const NormStats& stats,
                                  std::span<const double> query,
                                  std::span<const double> model_eng,
                                  std::span<const double> baseline_eng,
                                  const std::vector<double>& truth_series) {
    std::vector<double> truth_norm, model_norm, base_norm, ones;
    truth_norm.reserve(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        const double t_eng = truth_series[static_cast<std::size_t>(query[i])];
        truth_norm.push_back(stats.normalize(t_eng));
        model_norm.push_back(stats.normalize(model_eng[i]));
        base_norm.push_back(stats.normalize(baseline_eng[i]));
    }
    ones.assign(query.size(), 1.0);

    EvalRecordRow row;
    row.key = rec.key();
    row.node_id = rec.node_id;
    row.type = rec.type;
    row.points = query.size();
    row.mse_pct_lode = mse_percent(model_norm, truth_norm, ones);
    row.mse_pct_baseline = mse_percent(base_norm, truth_norm, ones);
    double sl = 0, sb = 0;
    for (std::size_t i = 0; i < query.size(); ++i) {
        const double t_eng = truth_series[static_cast<std::size_t>(query[i])];
        sl += (model_eng[i] - t_eng) * (model_eng[i] - t_eng);
        sb += (baseline_eng[i] - t_eng) * (baseline_eng[i] - t_eng);
    }
    row.rmse_lode = std::sqrt(sl / static_cast<double>(query.size()));
    row.rmse_baseline = std::sqrt(sb / static_cast<double>(query.size()));
    return row;
}

}  // namespace detail

/// Imputation task: reconstructs each evaluation record on the 1-minute grid
/// from its own observations and scores model and linear baseline against the
/// instantaneous truth, both in normalized units and engineering units.
/// The model never sees the truth; it conditions only on the record.
inline EvalReport evaluate_imputation(const LodeModel& model, const Dataset& ds,
                                      const TruthSeries& truth,
                                      std::span<const std::size_t> record_idx,
                                      const SolverConfig& solver = {}) {
    if (!ds.normalized || ds.norm_stats.size() != ds.records.size())
        throw ContractError("evaluate_imputation: dataset must be normalized");
    if (record_idx.empty())
        throw ContractError("evaluate_imputation: empty evaluation set");

    std::vector<double> query;
    for (int t = 0; t < truth.day_minutes; ++t) query.push_back(t);

    EvalReport report;
    report.task = "imputation";
    auto series = to_series(ds);
    for (std::size_t idx : record_idx) {
        const Record& rec = ds.records[idx];
        const NormStats& stats = ds.norm_stats[idx];
        auto imputed = impute(model, series[idx], stats, query, solver);

        // Baseline interpolates the same observed (engineering-unit) inputs.
        std::vector<double> obs_values(rec.values.size());
        for (std::size_t i = 0; i < rec.values.size(); ++i)
            obs_values[i] = rec.mask[i] > 0.5 ? stats.denormalize(rec.values[i]) : 0.0;
        auto baseline = linear_interp(rec.times, obs_values, rec.mask, query);

        report.rows.push_back(detail::score_record(rec, stats, query, imputed, baseline,
                                                   detail::truth_for(truth, rec)));
    }
    report.finalize_aggregate();
    return report;
}

/// Prediction task: conditions on observations up to split_time and scores
/// the horizon beyond it on the 1-minute grid. Baseline holds the last
/// conditioned observation constant.
inline EvalReport evaluate_prediction(const LodeModel& model, const Dataset& ds,
                                      const TruthSeries& truth,
                                      std::span<const std::size_t> record_idx,
                                      double split_time = 720.0,
                                      const SolverConfig& solver = {}) {
    if (!ds.normalized || ds.norm_stats.size() != ds.records.size())
        throw ContractError("evaluate_prediction: dataset must be normalized");
    if (record_idx.empty())
        throw ContractError("evaluate_prediction: empty evaluation set");

    std::vector<double> horizon;
    for (int t = 0; t < truth.day_minutes; ++t)
        if (static_cast<double>(t) > split_time) horizon.push_back(t);

    EvalReport report;
    report.task = "prediction";
    auto series = to_series(ds);
    for (std::size_t idx : record_idx) {
        const Record& rec = ds.records[idx];
        const NormStats& stats = ds.norm_stats[idx];

        // Restrict the conditioning window to times <= split_time.
        Series cond;
        cond.data_dim = 1;
        double last_obs_eng = 0;
        bool has_obs = false;
        for (std::size_t i = 0; i < rec.times.size(); ++i) {
            if (rec.times[i] > split_time) break;
            cond.times.push_back(rec.times[i]);
            cond.values.push_back(series[idx].values[i]);
            cond.mask.push_back(series[idx].mask[i]);
            if (rec.mask[i] > 0.5) {
                last_obs_eng = stats.denormalize(rec.values[i]);
                has_obs = true;
            }
        }
        if (!has_obs)
            throw ContractError("evaluate_prediction: record " + rec.key() +
                                " has no observations before the split");

        auto predicted = predict(model, cond, stats, horizon, solver);
        std::vector<double> hold_last(horizon.size(), last_obs_eng);
        report.rows.push_back(detail::score_record(rec, stats, horizon, predicted,
                                                   hold_last,
                                                   detail::truth_for(truth, rec)));
    }
    report.finalize_aggregate();
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

/// Per-record CSV with '#' metadata lines and a trailing aggregate row.
inline void save_eval_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "# task=" << report.task << "\n";
    out << "# runtime_seconds=" << detail::format_double(report.runtime_seconds) << "\n";
    if (!report.config_snapshot.empty())
        out << "# config=" << report.config_snapshot << "\n";
    out << "record,node_id,type,points,mse_pct_lode,mse_pct_baseline,"
           "rmse_lode,rmse_baseline\n";
    for (const auto& r : report.rows) {
        out << r.key << ',' << r.node_id << ',' << meas_type_char(r.type) << ','
            << r.points << ',' << detail::format_double(r.mse_pct_lode) << ','
            << detail::format_double(r.mse_pct_baseline) << ','
            << detail::format_double(r.rmse_lode) << ','
            << detail::format_double(r.rmse_baseline) << "\n";
    }
    out << "aggregate,,,"
        << "," << detail::format_double(report.aggregate_mse_pct_lode) << ','
        << detail::format_double(report.aggregate_mse_pct_baseline) << ",,\n";
}

/// `iteration,neg_elbo,mse_pct` series for loss-curve plots.
inline void save_loss_log(const std::string& path,
                          std::span<const TrainLogEntry> log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "iteration,neg_elbo,mse_pct\n";
    for (const auto& e : log)
        out << e.iteration << ',' << detail::format_double(e.neg_elbo) << ','
            << detail::format_double(100.0 * e.mse) << "\n";
}

/// Plot-ready per-node frame: `time_min,truth,observed,imputed,baseline`,
/// with the observed column empty off the record's observation times.
struct SeriesFrame {
    std::vector<double> times;
    std::vector<double> truth;
    std::vector<double> observed;       // aligned with observed_mask
    std::vector<double> observed_mask;  // 1 where an observation exists
    std::vector<double> imputed;
    std::vector<double> baseline;
};

inline void save_series_frame(const std::string& path, const SeriesFrame& frame) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "time_min,truth,observed,imputed,baseline\n";
    for (std::size_t i = 0; i < frame.times.size(); ++i) {
        out << detail::format_double(frame.times[i]) << ','
            << detail::format_double(frame.truth[i]) << ',';
        if (frame.observed_mask[i] > 0.5) out << detail::format_double(frame.observed[i]);
        out << ',' << detail::format_double(frame.imputed[i]) << ','
            << detail::format_double(frame.baseline[i]) << "\n";
    }
}

}  // namespace gridlode
