#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridlode/error.hpp"
#include "gridlode/lode.hpp"
#include "gridlode/series.hpp"

namespace gridlode {

/// Everything needed to resume or serve a trained model: parameter arrays by
/// name, optimizer moments and step counter, the training/solver configs,
/// per-record normalization statistics, and the run seed. JSON with shortest
/// round-trip float formatting, so values survive save/load bit-exactly.
struct Checkpoint {
    static constexpr int kVersion = 1;

    LodeConfig model_cfg;
    LodeModel model;
    AdamState optimizer;
    TrainConfig train;
    SolverConfig solver;
    std::uint64_t seed = 0;
    std::int64_t iterations_done = 0;
    std::vector<std::pair<std::string, NormStats>> norm_stats;  // record key -> stats
};

namespace detail {

inline nlohmann::json tensor_to_json(const std::string& name, const Tensor& t) {
    nlohmann::json j;
    j["name"] = name;
    j["shape"] = t.shape();
    j["data"] = t.data();
    return j;
}

inline const char* grad_mode_name(GradMode m) {
    return m == GradMode::Backprop ? "backprop" : "adjoint";
}

inline GradMode grad_mode_from(const std::string& s) {
    if (s == "backprop") return GradMode::Backprop;
    if (s == "adjoint") return GradMode::Adjoint;
    throw ContractError("unknown grad mode '" + s + "'");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = "gridlode-checkpoint";
    j["version"] = Checkpoint::kVersion;
    j["seed"] = ckpt.seed;
    j["iterations_done"] = ckpt.iterations_done;

    j["model"] = {{"latent_dim", ckpt.model_cfg.latent_dim},
                  {"gru_hidden", ckpt.model_cfg.gru_hidden},
                  {"dynamics_hidden", ckpt.model_cfg.dynamics_hidden},
                  {"data_dim", ckpt.model_cfg.data_dim},
                  {"time_scale", ckpt.model_cfg.time_scale}};

    j["train"] = {{"batch_size", ckpt.train.batch_size},
                  {"iterations", ckpt.train.iterations},
                  {"lr_init", ckpt.train.lr_init},
                  {"lr_decay", ckpt.train.lr_decay},
                  {"sigma_obs", ckpt.train.sigma_obs},
                  {"kl_weight", ckpt.train.kl_weight},
                  {"seed", ckpt.train.seed},
                  {"grad_mode", detail::grad_mode_name(ckpt.train.grad_mode)},
                  {"recon_window",
                   ckpt.train.recon_window == ReconWindow::Full ? "full" : "second_half"},
                  {"split_time", ckpt.train.split_time}};

    j["solver"] = {{"rtol", ckpt.solver.rtol},     {"atol", ckpt.solver.atol},
                   {"h_init", ckpt.solver.h_init}, {"h_min", ckpt.solver.h_min},
                   {"h_max", ckpt.solver.h_max},   {"safety", ckpt.solver.safety},
                   {"max_steps", ckpt.solver.max_steps}};

    const auto names = LodeModel::parameter_names(ckpt.model_cfg);
    const auto params = ckpt.model.parameters();
    if (names.size() != params.size())
        throw ContractError("checkpoint: parameter naming out of sync");
    j["params"] = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i)
        j["params"].push_back(detail::tensor_to_json(names[i], params[i]));

    j["optimizer"] = {{"step", ckpt.optimizer.step},
                      {"beta1", ckpt.optimizer.cfg.beta1},
                      {"beta2", ckpt.optimizer.cfg.beta2},
                      {"eps", ckpt.optimizer.cfg.eps},
                      {"m", ckpt.optimizer.m},
                      {"v", ckpt.optimizer.v}};

    j["norm_stats"] = nlohmann::json::array();
    for (const auto& [key, stats] : ckpt.norm_stats)
        j["norm_stats"].push_back(
            {{"record", key}, {"min", stats.min}, {"max", stats.max}});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(1) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint parse failure: ") + e.what());
    }
    if (j.value("format", "") != "gridlode-checkpoint")
        throw ContractError("not a gridlode checkpoint: " + path);
    if (j.value("version", -1) != Checkpoint::kVersion)
        throw ContractError("checkpoint version mismatch: expected " +
                            std::to_string(Checkpoint::kVersion) + ", found " +
                            std::to_string(j.value("version", -1)));

    Checkpoint ckpt;
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.iterations_done = j.at("iterations_done").get<std::int64_t>();

    const auto& jm = j.at("model");
    ckpt.model_cfg.latent_dim = jm.at("latent_dim").get<std::size_t>();
    ckpt.model_cfg.gru_hidden = jm.at("gru_hidden").get<std::size_t>();
    ckpt.model_cfg.dynamics_hidden =
        jm.at("dynamics_hidden").get<std::vector<std::size_t>>();
    ckpt.model_cfg.data_dim = jm.at("data_dim").get<std::size_t>();
    ckpt.model_cfg.time_scale = jm.at("time_scale").get<double>();

    const auto& jt = j.at("train");
    ckpt.train.batch_size = jt.at("batch_size").get<int>();
    ckpt.train.iterations = jt.at("iterations").get<int>();
    ckpt.train.lr_init = jt.at("lr_init").get<double>();
    ckpt.train.lr_decay = jt.at("lr_decay").get<double>();
    ckpt.train.sigma_obs = jt.at("sigma_obs").get<double>();
    ckpt.train.kl_weight = jt.at("kl_weight").get<double>();
    ckpt.train.seed = jt.at("seed").get<std::uint64_t>();
    ckpt.train.grad_mode = detail::grad_mode_from(jt.at("grad_mode").get<std::string>());
    ckpt.train.recon_window = jt.at("recon_window").get<std::string>() == "full"
                                  ? ReconWindow::Full
                                  : ReconWindow::SecondHalf;
    ckpt.train.split_time = jt.at("split_time").get<double>();

    const auto& js = j.at("solver");
    ckpt.solver.rtol = js.at("rtol").get<double>();
    ckpt.solver.atol = js.at("atol").get<double>();
    ckpt.solver.h_init = js.at("h_init").get<double>();
    ckpt.solver.h_min = js.at("h_min").get<double>();
    ckpt.solver.h_max = js.at("h_max").get<double>();
    ckpt.solver.safety = js.at("safety").get<double>();
    ckpt.solver.max_steps = js.at("max_steps").get<std::int64_t>();

    // Rebuild the model skeleton, then overwrite parameter values by name.
    Rng scratch(0);
    ckpt.model = LodeModel::init(ckpt.model_cfg, scratch);
    auto params = ckpt.model.parameters();
    const auto names = LodeModel::parameter_names(ckpt.model_cfg);
    const auto& jp = j.at("params");
    if (jp.size() != params.size())
        throw ContractError("checkpoint holds " + std::to_string(jp.size()) +
                            " parameter arrays, model expects " +
                            std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = jp[i];
        if (entry.at("name").get<std::string>() != names[i])
            throw ContractError("checkpoint parameter order mismatch at index " +
                                std::to_string(i));
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != params[i].shape())
            throw ContractError("checkpoint parameter shape mismatch for " + names[i]);
        auto data = entry.at("data").get<std::vector<double>>();
        if (data.size() != params[i].size())
            throw ContractError("checkpoint parameter size mismatch for " + names[i]);
        params[i].data() = std::move(data);
    }

    const auto& jo = j.at("optimizer");
    ckpt.optimizer = AdamState::init(params,
                                     AdamConfig{jo.at("beta1").get<double>(),
                                                jo.at("beta2").get<double>(),
                                                jo.at("eps").get<double>()});
    ckpt.optimizer.step = jo.at("step").get<std::int64_t>();
    ckpt.optimizer.m = jo.at("m").get<std::vector<std::vector<double>>>();
    ckpt.optimizer.v = jo.at("v").get<std::vector<std::vector<double>>>();
    if (ckpt.optimizer.m.size() != params.size() ||
        ckpt.optimizer.v.size() != params.size())
        throw ContractError("checkpoint optimizer buffers do not match parameters");

    for (const auto& entry : j.at("norm_stats"))
        ckpt.norm_stats.emplace_back(
            entry.at("record").get<std::string>(),
            NormStats{entry.at("min").get<double>(), entry.at("max").get<double>()});
    return ckpt;
}

}  // namespace gridlode
