#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridlode/error.hpp"
#include "gridlode/rng.hpp"
#include "gridlode/series.hpp"

namespace gridlode {

// ---------------------------------------------------------------------------
// Records and datasets
// ---------------------------------------------------------------------------

enum class MeasType { P, Q, V };

inline char meas_type_char(MeasType t) {
    switch (t) {
        case MeasType::P: return 'P';
        case MeasType::Q: return 'Q';
        default: return 'V';
    }
}

inline MeasType meas_type_from_char(char c) {
    switch (c) {
        case 'P': return MeasType::P;
        case 'Q': return MeasType::Q;
        case 'V': return MeasType::V;
        default:
            throw ContractError(std::string("unknown measurement type '") + c + "'");
    }
}

/// One node's time series: engineering units (kW, kvar, or volts p.u.),
/// minutes from midnight, and a 0/1 availability mask. Mask-0 entries hold a
/// NaN sentinel and must never be read by models.
struct Record {
    int node_id = 0;
    MeasType type = MeasType::P;
    std::vector<double> values;
    std::vector<double> times;
    std::vector<double> mask;

    std::string key() const {
        return std::to_string(node_id) + ":" + meas_type_char(type);
    }

    std::size_t observed_count() const {
        std::size_t n = 0;
        for (double m : mask) n += m > 0.5 ? 1 : 0;
        return n;
    }

    void validate() const {
        if (values.size() != times.size() || mask.size() != times.size())
            throw ContractError("record " + key() + ": values/times/mask lengths differ");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw ContractError("record " + key() + ": times not strictly increasing");
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0.0 && mask[i] != 1.0)
                throw ContractError("record " + key() + ": mask must be 0 or 1");
            if (mask[i] == 1.0 && !std::isfinite(values[i]))
                throw ContractError("record " + key() + ": observed value not finite");
        }
    }
};

/// Records re-expressed on one shared time grid, plus per-record min-max
/// statistics once normalize() has run.
struct Dataset {
    std::vector<Record> records;
    std::vector<NormStats> norm_stats;  // aligned with records; empty until normalized
    bool normalized = false;

    std::size_t size() const { return records.size(); }
    const std::vector<double>& grid_times() const {
        if (records.empty()) throw ContractError("dataset is empty");
        return records.front().times;
    }
};

// ---------------------------------------------------------------------------
// Synthetic feeder
// ---------------------------------------------------------------------------

enum class ProfileClass { Substation, Residential, Commercial };

struct FeederNode {
    int id = 0;
    int parent = -1;  // -1 for the substation root
    double r = 0.0;   // line resistance to parent, p.u.
    double x = 0.0;   // line reactance to parent, p.u.
    ProfileClass cls = ProfileClass::Residential;
    double base_kw = 0.0;
};

/// Radial feeder description: a connected tree rooted at node 0 (the
/// substation, held at 1.0 p.u.).
struct FeederSpec {
    double s_base_kw = 100.0;
    std::vector<FeederNode> nodes;

    void validate() const {
        if (nodes.empty()) throw ContractError("feeder spec has no nodes");
        if (nodes[0].parent != -1)
            throw ContractError("feeder spec: node 0 must be the substation root");
        for (std::size_t i = 1; i < nodes.size(); ++i) {
            const auto& n = nodes[i];
            if (n.id != static_cast<int>(i))
                throw ContractError("feeder spec: node ids must be 0..n-1 in order");
            if (n.parent < 0 || n.parent >= n.id)
                throw ContractError("feeder spec: node " + std::to_string(n.id) +
                                    " parent must precede it (tree, no cycles)");
            if (!(n.r > 0.0) || !(n.x > 0.0))
                throw ContractError("feeder spec: node " + std::to_string(n.id) +
                                    " line impedance must be positive");
        }
        if (s_base_kw <= 0) throw ContractError("feeder spec: s_base_kw must be positive");
    }
};

/// 37-node default: three feeders off the substation with short laterals,
/// a residential/commercial mix, and per-unit impedances that keep voltages
/// inside (0.9, 1.0] under the default loading.
inline FeederSpec default_feeder_spec() {
    FeederSpec spec;
    spec.s_base_kw = 100.0;
    // id -> parent; 0 is the substation.
    const int parents[37] = {-1, 0, 1,  2,  3,  4,  5,  2,  7,  4,  5,  10, 6,
                             0,  13, 14, 15, 16, 14, 18, 15, 16, 21, 17, 23,
                             0,  25, 26, 27, 28, 26, 30, 27, 28, 33, 29, 31};
    const int commercial[] = {2, 5, 8, 11, 14, 17, 20, 23, 26, 29, 32, 35};
    const double res_kw[] = {1.8, 2.2, 2.6, 3.0, 3.4, 2.0, 2.4, 2.8, 3.2};
    const double com_kw[] = {6.0, 7.5, 9.0, 10.5, 8.0, 11.0, 6.5, 9.5};
    int res_i = 0, com_i = 0;
    for (int id = 0; id < 37; ++id) {
        FeederNode n;
        n.id = id;
        n.parent = parents[id];
        if (id == 0) {
            n.cls = ProfileClass::Substation;
            n.base_kw = 0.0;
        } else {
            // Mainline segments are stiffer than laterals.
            const bool lateral = id != 1 && id != 13 && id != 25 &&
                                 parents[id] + 1 != id;
            n.r = lateral ? 0.006 : 0.004;
            n.x = lateral ? 0.005 : 0.0035;
            const bool is_com =
                std::find(std::begin(commercial), std::end(commercial), id) !=
                std::end(commercial);
            if (is_com) {
                n.cls = ProfileClass::Commercial;
                n.base_kw = com_kw[com_i++ % 8] * 0.5;
            } else {
                n.cls = ProfileClass::Residential;
                n.base_kw = res_kw[res_i++ % 9];
            }
        }
        spec.nodes.push_back(n);
    }
    return spec;
}

/// Q/P ratio for a 0.9 lagging power factor: tan(acos(0.9)).
inline constexpr double kPowerFactorTan = 0.48432210483785254;

/// Per-node truth at 1-minute resolution.
struct TruthSeries {
    int day_minutes = 1440;
    std::vector<std::vector<double>> p_kw;    // [node][minute]
    std::vector<std::vector<double>> q_kvar;  // q = p * tan(acos(0.9))
    std::vector<std::vector<double>> v_pu;    // filled by lindistflow_voltages
};

/// Smooth 24-hour load shapes: residential is a double peak (morning and
/// evening bumps on a base), commercial a midday plateau. Reactive power
/// follows the fixed 0.9 power factor. Deterministic per (seed, node).
inline TruthSeries generate_profiles(const FeederSpec& spec, int day_minutes = 1440,
                                     std::uint64_t seed = 0) {
    spec.validate();
    TruthSeries truth;
    truth.day_minutes = day_minutes;
    truth.p_kw.resize(spec.nodes.size());
    truth.q_kvar.resize(spec.nodes.size());
    auto gauss = [](double t, double mean, double sd) {
        const double u = (t - mean) / sd;
        return std::exp(-0.5 * u * u);
    };
    auto smooth_step = [](double t, double edge, double width) {
        return 1.0 / (1.0 + std::exp(-(t - edge) / width));
    };
    for (const auto& node : spec.nodes) {
        auto& p = truth.p_kw[node.id];
        auto& q = truth.q_kvar[node.id];
        p.assign(day_minutes, 0.0);
        q.assign(day_minutes, 0.0);
        if (node.base_kw <= 0.0) continue;
        Rng rng = Rng::stream(seed, "profiles." + std::to_string(node.id));
        const double a1 = rng.uniform(0.9, 1.1);
        const double a2 = rng.uniform(0.9, 1.1);
        const double shift1 = rng.uniform(-12.0, 12.0);
        const double shift2 = rng.uniform(-15.0, 15.0);
        for (int t = 0; t < day_minutes; ++t) {
            double shape;
            if (node.cls == ProfileClass::Residential) {
                shape = 1.6 + 0.55 * a1 * gauss(t, 465.0 + shift1, 160.0) +
                        0.9 * a2 * gauss(t, 1130.0 + shift2, 190.0);
            } else {
                shape = 1.5 + 0.85 * a1 *
                                  smooth_step(t, 490.0 + shift1, 70.0) *
                                  smooth_step(-t, -(1070.0 + shift2), 90.0);
            }
            p[t] = node.base_kw * shape;
            q[t] = p[t] * kPowerFactorTan;
        }
    }
    return truth;
}

/// LinDistFlow voltage magnitudes on a radial feeder:
///   V_j^2 = V_parent^2 - 2 (r_l P_flow + x_l Q_flow)
/// with branch flows equal to the sum of downstream injections (p.u.) and
/// the substation pinned at 1.0 p.u.
inline std::vector<std::vector<double>> lindistflow_voltages(
    const FeederSpec& spec, const std::vector<std::vector<double>>& p_pu,
    const std::vector<std::vector<double>>& q_pu) {
    spec.validate();
    const std::size_t n = spec.nodes.size();
    if (p_pu.size() != n || q_pu.size() != n)
        throw ContractError("lindistflow: per-node load arrays must match the spec");
    const std::size_t steps = p_pu[0].size();

    std::vector<std::vector<double>> v(n, std::vector<double>(steps, 1.0));
    std::vector<double> p_flow(n), q_flow(n), v2(n);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < n; ++j) {
            p_flow[j] = p_pu[j][t];
            q_flow[j] = q_pu[j][t];
        }
        // Children precede parents when walking ids backwards (parent < id).
        for (std::size_t j = n; j-- > 1;) {
            p_flow[spec.nodes[j].parent] += p_flow[j];
            q_flow[spec.nodes[j].parent] += q_flow[j];
        }
        v2[0] = 1.0;
        for (std::size_t j = 1; j < n; ++j) {
            const auto& node = spec.nodes[j];
            v2[j] = v2[node.parent] -
                    2.0 * (node.r * p_flow[j] + node.x * q_flow[j]);
            if (!(v2[j] > 0.0))
                throw ContractError("lindistflow: infeasible loading, squared voltage " +
                                    std::to_string(v2[j]) + " at node " +
                                    std::to_string(node.id));
            v[j][t] = std::sqrt(v2[j]);
        }
    }
    return v;
}

/// Convenience: truth profiles plus load-flow voltages for the whole feeder.
inline TruthSeries generate_truth(const FeederSpec& spec, int day_minutes = 1440,
                                  std::uint64_t seed = 0) {
    TruthSeries truth = generate_profiles(spec, day_minutes, seed);
    std::vector<std::vector<double>> p_pu(spec.nodes.size()), q_pu(spec.nodes.size());
    for (std::size_t j = 0; j < spec.nodes.size(); ++j) {
        p_pu[j].resize(day_minutes);
        q_pu[j].resize(day_minutes);
        for (int t = 0; t < day_minutes; ++t) {
            p_pu[j][t] = truth.p_kw[j][t] / spec.s_base_kw;
            q_pu[j][t] = truth.q_kvar[j][t] / spec.s_base_kw;
        }
    }
    truth.v_pu = lindistflow_voltages(spec, p_pu, q_pu);
    return truth;
}

// ---------------------------------------------------------------------------
// Multi-rate sampling
// ---------------------------------------------------------------------------

struct SampleOptions {
    int smart_meter_rate = 15;  // minutes per smart-meter interval average
    int scada_rate = 1;         // minutes between SCADA voltage samples
    double noise_frac = 0.10;   // std of smart-meter noise as fraction of value
    double missing_prob = 0.05; // i.i.d. per-observation dropout
    int scada_spacing = 4;      // every n-th node carries a voltage sensor
    std::uint64_t seed = 0;
};

/// Smart-meter P/Q records as noisy interval averages at the 15-minute rate
/// (times label window starts) and noise-free SCADA voltage records at the
/// 1-minute rate on every scada_spacing-th node. Dropped observations get
/// mask 0 and a NaN sentinel.
inline std::vector<Record> sample_multirate(const FeederSpec& spec,
                                            const TruthSeries& truth,
                                            const SampleOptions& opt = {}) {
    if (opt.smart_meter_rate <= 0 || truth.day_minutes % opt.smart_meter_rate != 0)
        throw ContractError("sample_multirate: smart meter rate must divide the horizon");
    if (opt.scada_rate <= 0 || truth.day_minutes % opt.scada_rate != 0)
        throw ContractError("sample_multirate: scada rate must divide the horizon");
    if (opt.missing_prob < 0.0 || opt.missing_prob >= 1.0)
        throw ContractError("sample_multirate: missing_prob must be in [0, 1)");

    std::vector<Record> records;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    auto sample_power = [&](int node, MeasType type, const std::vector<double>& series) {
        Record rec;
        rec.node_id = node;
        rec.type = type;
        const std::string tag = std::string(1, meas_type_char(type)) + "." +
                                std::to_string(node);
        Rng noise = Rng::stream(opt.seed, "noise." + tag);
        Rng drop = Rng::stream(opt.seed, "mask." + tag);
        for (int w = 0; w < truth.day_minutes; w += opt.smart_meter_rate) {
            double avg = 0.0;
            for (int t = w; t < w + opt.smart_meter_rate; ++t) avg += series[t];
            avg /= opt.smart_meter_rate;
            double value = avg + noise.normal(0.0, opt.noise_frac * std::abs(avg));
            const bool dropped = drop.bernoulli(opt.missing_prob);
            rec.times.push_back(static_cast<double>(w));
            rec.values.push_back(dropped ? nan : value);
            rec.mask.push_back(dropped ? 0.0 : 1.0);
        }
        records.push_back(std::move(rec));
    };

    for (const auto& node : spec.nodes) {
        if (node.base_kw <= 0.0) continue;
        sample_power(node.id, MeasType::P, truth.p_kw[node.id]);
        sample_power(node.id, MeasType::Q, truth.q_kvar[node.id]);
    }
    for (const auto& node : spec.nodes) {
        if (opt.scada_spacing > 0 && node.id % opt.scada_spacing != 0) continue;
        if (truth.v_pu.empty()) break;
        Record rec;
        rec.node_id = node.id;
        rec.type = MeasType::V;
        Rng drop = Rng::stream(opt.seed, "mask.V." + std::to_string(node.id));
        for (int t = 0; t < truth.day_minutes; t += opt.scada_rate) {
            const bool dropped = drop.bernoulli(opt.missing_prob);
            rec.times.push_back(static_cast<double>(t));
            rec.values.push_back(dropped ? nan : truth.v_pu[node.id][t]);
            rec.mask.push_back(dropped ? 0.0 : 1.0);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Unification and normalization
// ---------------------------------------------------------------------------

/// Re-expresses every record on the sorted union of all time points. A
/// record keeps its own mask values at its own times and gets mask 0 plus
/// the NaN sentinel everywhere else. Idempotent.
inline Dataset unify_time_grid(std::span<const Record> records) {
    Dataset out;
    std::vector<double> grid;
    for (const auto& r : records) {
        r.validate();
        grid.insert(grid.end(), r.times.begin(), r.times.end());
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : records) {
        Record u;
        u.node_id = r.node_id;
        u.type = r.type;
        u.times = grid;
        u.values.assign(grid.size(), nan);
        u.mask.assign(grid.size(), 0.0);
        for (std::size_t i = 0; i < r.times.size(); ++i) {
            const auto it = std::lower_bound(grid.begin(), grid.end(), r.times[i]);
            const std::size_t pos = static_cast<std::size_t>(it - grid.begin());
            u.mask[pos] = r.mask[i];
            u.values[pos] = r.mask[i] > 0.5 ? r.values[i] : nan;
        }
        out.records.push_back(std::move(u));
    }
    return out;
}

/// Per-record min-max scaling over observed entries into [0, 1].
inline Dataset normalize(const Dataset& ds) {
    Dataset out = ds;
    out.norm_stats.clear();
    for (auto& r : out.records) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < r.values.size(); ++i)
            if (r.mask[i] > 0.5) {
                lo = std::min(lo, r.values[i]);
                hi = std::max(hi, r.values[i]);
            }
        if (!(lo <= hi))
            throw ContractError("normalize: record " + r.key() + " has no observed values");
        NormStats stats{lo, hi};
        for (std::size_t i = 0; i < r.values.size(); ++i)
            if (r.mask[i] > 0.5) r.values[i] = stats.normalize(r.values[i]);
        out.norm_stats.push_back(stats);
    }
    out.normalized = true;
    return out;
}

inline std::vector<Series> to_series(const Dataset& ds) {
    std::vector<Series> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) {
        Series s;
        s.times = r.times;
        s.values = r.values;
        s.mask = r.mask;
        s.data_dim = 1;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV and feeder-spec files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view sv, std::size_t line_no) {
    double out = 0;
    const auto res = std::from_chars(sv.data(), sv.data() + sv.size(), out);
    if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad number '" +
                             std::string(sv) + "'",
                         line_no);
    return out;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace detail

inline constexpr const char* kDatasetCsvHeader =
    "node_id,measurement_type,time_min,value,mask";

/// One row per (record, grid time); empty value field when mask is 0.
/// UTF-8, LF line endings, shortest round-trip float formatting.
inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << kDatasetCsvHeader << "\n";
    for (const auto& r : ds.records) {
        for (std::size_t i = 0; i < r.times.size(); ++i) {
            out << r.node_id << ',' << meas_type_char(r.type) << ','
                << detail::format_double(r.times[i]) << ',';
            if (r.mask[i] > 0.5) out << detail::format_double(r.values[i]);
            out << ',' << (r.mask[i] > 0.5 ? '1' : '0') << "\n";
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) return ds;  // empty file: empty dataset
    ++line_no;
    if (line == "") return ds;
    if (line != kDatasetCsvHeader)
        throw ParseError("line 1: expected header '" +
                             std::string(kDatasetCsvHeader) + "'",
                         1);

    std::map<std::pair<int, char>, std::size_t> index;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 5)
            throw ParseError("line " + std::to_string(line_no) +
                                 ": expected 5 fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        const int node = static_cast<int>(detail::parse_double(fields[0], line_no));
        if (fields[1].size() != 1)
            throw ParseError("line " + std::to_string(line_no) +
                                 ": bad measurement type",
                             line_no);
        MeasType type;
        try {
            type = meas_type_from_char(fields[1][0]);
        } catch (const ContractError&) {
            throw ParseError("line " + std::to_string(line_no) +
                                 ": bad measurement type",
                             line_no);
        }
        const double time = detail::parse_double(fields[2], line_no);
        if (fields[4] != "0" && fields[4] != "1")
            throw ParseError("line " + std::to_string(line_no) +
                                 ": mask must be 0 or 1, got '" +
                                 std::string(fields[4]) + "'",
                             line_no);
        const bool observed = fields[4] == "1";
        if (observed && fields[3].empty())
            throw ParseError("line " + std::to_string(line_no) +
                                 ": observed row has empty value",
                             line_no);
        if (!observed && !fields[3].empty())
            throw ParseError("line " + std::to_string(line_no) +
                                 ": masked row must have empty value",
                             line_no);
        const double value =
            observed ? detail::parse_double(fields[3], line_no) : nan;

        const auto key = std::make_pair(node, meas_type_char(type));
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, ds.records.size());
            Record r;
            r.node_id = node;
            r.type = type;
            ds.records.push_back(std::move(r));
            it = index.find(key);
        }
        Record& r = ds.records[it->second];
        r.times.push_back(time);
        r.values.push_back(value);
        r.mask.push_back(observed ? 1.0 : 0.0);
    }
    for (const auto& r : ds.records) r.validate();
    return ds;
}

/// Key-value feeder description: one `node.<id> = parent r x class base_kw`
/// line per node.
inline void save_feeder_spec(const std::string& path, const FeederSpec& spec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "s_base_kw = " << detail::format_double(spec.s_base_kw) << "\n";
    for (const auto& n : spec.nodes) {
        const char* cls = n.cls == ProfileClass::Substation  ? "substation"
                          : n.cls == ProfileClass::Residential ? "residential"
                                                                : "commercial";
        out << "node." << n.id << " = " << n.parent << ' '
            << detail::format_double(n.r) << ' ' << detail::format_double(n.x)
            << ' ' << cls << ' ' << detail::format_double(n.base_kw) << "\n";
    }
}

inline FeederSpec load_feeder_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    FeederSpec spec;
    spec.nodes.clear();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected key = value",
                             line_no);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "s_base_kw") {
            spec.s_base_kw = detail::parse_double(value, line_no);
        } else if (key.rfind("node.", 0) == 0) {
            FeederNode n;
            n.id = static_cast<int>(detail::parse_double(key.substr(5), line_no));
            std::istringstream fields(value);
            std::string cls;
            if (!(fields >> n.parent >> n.r >> n.x >> cls >> n.base_kw))
                throw ParseError("line " + std::to_string(line_no) +
                                     ": expected 'parent r x class base_kw'",
                                 line_no);
            if (cls == "substation") n.cls = ProfileClass::Substation;
            else if (cls == "residential") n.cls = ProfileClass::Residential;
            else if (cls == "commercial") n.cls = ProfileClass::Commercial;
            else
                throw ParseError("line " + std::to_string(line_no) +
                                     ": unknown class '" + cls + "'",
                                 line_no);
            spec.nodes.push_back(n);
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": unknown key '" +
                                 key + "'",
                             line_no);
        }
    }
    std::sort(spec.nodes.begin(), spec.nodes.end(),
              [](const FeederNode& a, const FeederNode& b) { return a.id < b.id; });
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

struct Split {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;  // P/Q records of held-out load nodes
};

/// Holds out a fraction of the load nodes: their smart-meter records become
/// the imputation test set; SCADA voltage records always stay in training.
inline Split holdout_split(const Dataset& ds, double holdout_frac, std::uint64_t seed) {
    if (holdout_frac < 0.0 || holdout_frac >= 1.0)
        throw ContractError("holdout_split: fraction must be in [0, 1)");
    std::vector<int> load_nodes;
    for (const auto& r : ds.records)
        if (r.type == MeasType::P) load_nodes.push_back(r.node_id);
    std::sort(load_nodes.begin(), load_nodes.end());
    load_nodes.erase(std::unique(load_nodes.begin(), load_nodes.end()),
                     load_nodes.end());

    Rng rng = Rng::stream(seed, "split");
    const std::size_t n_hold =
        static_cast<std::size_t>(std::floor(holdout_frac * load_nodes.size()));
    std::vector<int> pool = load_nodes;
    std::vector<int> held;
    for (std::size_t i = 0; i < n_hold; ++i) {
        const std::size_t pick = rng.index(pool.size());
        held.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(held.begin(), held.end());

    Split split;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        const bool is_held = r.type != MeasType::V &&
                             std::binary_search(held.begin(), held.end(), r.node_id);
        (is_held ? split.test_idx : split.train_idx).push_back(i);
    }
    return split;
}

}  // namespace gridlode
