#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gridlode/pipeline.hpp"

using namespace gridlode;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& child = "") const {
        return child.empty() ? path.string() : (path / child).string();
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig tiny_run_config(const TempDir& dir) {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.train.seed = 7;
    cfg.out_dir = dir.str();
    cfg.day_minutes = 240;
    cfg.sample.missing_prob = 0.05;
    cfg.model.latent_dim = 4;
    cfg.model.gru_hidden = 8;
    cfg.model.dynamics_hidden = {12};
    cfg.model.time_scale = 1.0 / 240.0;
    cfg.train.iterations = 8;
    cfg.train.batch_size = 4;
    cfg.holdout_frac = 0.2;
    cfg.dataset_path = dir.str("observed.csv");
    cfg.truth_path = dir.str("truth.csv");
    cfg.checkpoint_path = dir.str("checkpoint.json");
    return cfg;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GRIDLODE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST(Config, ParsesFlatKeyValueFile) {
    TempDir dir("gridlode_cfg_test");
    const std::string path = dir.str("run.cfg");
    {
        std::ofstream out(path);
        out << "# comment\n";
        out << "seed = 42\n";
        out << "iterations = 11\n";
        out << "dynamics_hidden = 20,20\n";
        out << "grad_mode = adjoint\n";
        out << "noise_frac = 0.2\n";
    }
    RunConfig cfg;
    apply_config(cfg, read_config_file(path));
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.train.iterations, 11);
    EXPECT_EQ(cfg.model.dynamics_hidden, (std::vector<std::size_t>{20, 20}));
    EXPECT_EQ(static_cast<int>(cfg.train.grad_mode),
              static_cast<int>(GradMode::Adjoint));
    EXPECT_DOUBLE_EQ(cfg.sample.noise_frac, 0.2);
    EXPECT_EQ(cfg.train.seed, 42u);
}

TEST(Config, UnknownKeyRejected) {
    TempDir dir("gridlode_cfg_bad");
    const std::string path = dir.str("run.cfg");
    {
        std::ofstream out(path);
        out << "iterationz = 11\n";
    }
    RunConfig cfg;
    EXPECT_THROW(apply_config(cfg, read_config_file(path)), ContractError);
}

TEST(Generate, DefaultSpecProducesExpectedShapes) {
    TempDir dir("gridlode_gen_test");
    RunConfig cfg;
    cfg.seed = 3;
    cfg.out_dir = dir.str();
    EXPECT_EQ(cmd_generate(cfg), 0);

    auto ds = load_dataset(dir.str("observed.csv"));
    int n_p = 0, n_v = 0;
    for (const auto& r : ds.records) {
        if (r.type == MeasType::P) {
            ++n_p;
            EXPECT_EQ(r.observed_count() + static_cast<std::size_t>(std::count(
                                               r.mask.begin(), r.mask.end(), 0.0)),
                      r.mask.size());
        }
        if (r.type == MeasType::V) ++n_v;
    }
    EXPECT_EQ(n_p, 36);
    EXPECT_EQ(n_v, 10);

    auto spec = load_feeder_spec(dir.str("feeder.spec"));
    EXPECT_EQ(spec.nodes.size(), 37u);
    auto truth = load_truth_csv(dir.str("truth.csv"));
    EXPECT_EQ(truth.day_minutes, 1440);
}

TEST(Generate, SameSeedGivesByteIdenticalOutputs) {
    TempDir a("gridlode_gen_a"), b("gridlode_gen_b");
    RunConfig ca, cb;
    ca.seed = cb.seed = 11;
    ca.out_dir = a.str();
    cb.out_dir = b.str();
    ca.day_minutes = cb.day_minutes = 120;
    EXPECT_EQ(cmd_generate(ca), 0);
    EXPECT_EQ(cmd_generate(cb), 0);
    EXPECT_EQ(read_file(a.str("observed.csv")), read_file(b.str("observed.csv")));
    EXPECT_EQ(read_file(a.str("truth.csv")), read_file(b.str("truth.csv")));
}

TEST(Generate, MissingSpecFileFailsBeforeAnyOutput) {
    TempDir dir("gridlode_gen_missing");
    RunConfig cfg;
    cfg.out_dir = dir.str("outputs");
    cfg.feeder_spec_path = dir.str("no_such.spec");
    EXPECT_THROW(cmd_generate(cfg), IoError);
    EXPECT_FALSE(fs::exists(dir.str("outputs")));
}

TEST(TrainCmd, WritesCheckpointAndLossLog) {
    TempDir dir("gridlode_train_test");
    RunConfig cfg = tiny_run_config(dir);
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    EXPECT_TRUE(fs::exists(cfg.checkpoint_path));
    EXPECT_TRUE(fs::exists(dir.str("loss_log.csv")));

    auto ckpt = load_checkpoint(cfg.checkpoint_path);
    EXPECT_EQ(ckpt.iterations_done, 8);
    const std::string log = read_file(dir.str("loss_log.csv"));
    EXPECT_EQ(log.rfind("iteration,neg_elbo,mse_pct", 0), 0u);
}

TEST(TrainCmd, ZeroIterationsKeepInitialization) {
    TempDir dir("gridlode_train_zero");
    RunConfig cfg = tiny_run_config(dir);
    cfg.train.iterations = 0;
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    auto ckpt = load_checkpoint(cfg.checkpoint_path);
    EXPECT_EQ(ckpt.iterations_done, 0);

    Rng init_rng = Rng::stream(cfg.seed, "init");
    LodeModel fresh = LodeModel::init(ckpt.model_cfg, init_rng);
    const auto a = fresh.parameters();
    const auto b = ckpt.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data(), b[i].data());
}

TEST(TrainCmd, ResumeContinuesStepCounter) {
    TempDir dir("gridlode_train_resume");
    RunConfig cfg = tiny_run_config(dir);
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    RunConfig cfg2 = cfg;
    cfg2.resume = true;
    cfg2.train.iterations = 5;
    ASSERT_EQ(cmd_train(cfg2), 0);
    auto ckpt = load_checkpoint(cfg.checkpoint_path);
    EXPECT_EQ(ckpt.iterations_done, 13);
    EXPECT_EQ(ckpt.optimizer.step, 13);
}

TEST(ImputeCmd, WritesSeriesAndReport) {
    TempDir dir("gridlode_impute_test");
    RunConfig cfg = tiny_run_config(dir);
    cfg.query_rate = 5;
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    ASSERT_EQ(cmd_impute(cfg), 0);
    EXPECT_TRUE(fs::exists(dir.str("impute_report.csv")));
    EXPECT_TRUE(fs::exists(dir.str("series/impute_1:P.csv")));
    const std::string frame = read_file(dir.str("series/impute_1:P.csv"));
    EXPECT_EQ(frame.rfind("time_min,truth,observed,imputed,baseline", 0), 0u);
    // 240 minutes at 5-minute queries.
    EXPECT_EQ(std::count(frame.begin(), frame.end(), '\n'), 49);
}

TEST(PredictCmd, WritesHorizonSeries) {
    TempDir dir("gridlode_predict_test");
    RunConfig cfg = tiny_run_config(dir);
    cfg.query_rate = 5;
    cfg.split_time = 120;
    cfg.train.split_time = 120;
    cfg.horizon_end = 240;
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    ASSERT_EQ(cmd_predict(cfg), 0);
    EXPECT_TRUE(fs::exists(dir.str("predict_report.csv")));
    const std::string frame = read_file(dir.str("series/predict_1:P.csv"));
    // Horizon minutes 125..235 at 5-minute spacing.
    EXPECT_EQ(std::count(frame.begin(), frame.end(), '\n'), 24);
}

TEST(PredictCmd, HorizonBeyondDayIsFlaggedAsExtrapolation) {
    TempDir dir("gridlode_predict_extrap");
    RunConfig cfg = tiny_run_config(dir);
    cfg.query_rate = 30;
    cfg.split_time = 120;
    cfg.horizon_end = 480;  // data ends at 240
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    ASSERT_EQ(cmd_predict(cfg), 0);
    const std::string report = read_file(dir.str("predict_report.csv"));
    EXPECT_NE(report.find("extrapolation=beyond-observed-window"), std::string::npos);
}

TEST(EvaluateCmd, ReportsBothMethods) {
    TempDir dir("gridlode_eval_cmd");
    RunConfig cfg = tiny_run_config(dir);
    ASSERT_EQ(cmd_generate(cfg), 0);
    ASSERT_EQ(cmd_train(cfg), 0);
    ASSERT_EQ(cmd_evaluate(cfg), 0);
    const std::string report = read_file(dir.str("eval_report.csv"));
    EXPECT_NE(report.find("mse_pct_lode"), std::string::npos);
    EXPECT_NE(report.find("mse_pct_baseline"), std::string::npos);
    EXPECT_NE(report.find("aggregate"), std::string::npos);
}

TEST(EndToEnd, SeededRunsReproduceIdenticalArtifacts) {
    TempDir a("gridlode_e2e_a"), b("gridlode_e2e_b");
    for (const TempDir* dir : {&a, &b}) {
        RunConfig cfg = tiny_run_config(*dir);
        ASSERT_EQ(cmd_generate(cfg), 0);
        ASSERT_EQ(cmd_train(cfg), 0);
        ASSERT_EQ(cmd_evaluate(cfg), 0);
    }
    EXPECT_EQ(read_file(a.str("observed.csv")), read_file(b.str("observed.csv")));
    EXPECT_EQ(read_file(a.str("loss_log.csv")), read_file(b.str("loss_log.csv")));
    EXPECT_EQ(read_file(a.str("checkpoint.json")), read_file(b.str("checkpoint.json")));
    const std::string ra = read_file(a.str("eval_report.csv"));
    const std::string rb = read_file(b.str("eval_report.csv"));
    // Reports differ only in '#' metadata (measured runtime, output paths).
    std::istringstream sa(ra), sb(rb);
    std::string la, lb;
    while (std::getline(sa, la) && std::getline(sb, lb)) {
        if (la.rfind("# ", 0) == 0 && lb.rfind("# ", 0) == 0) continue;
        EXPECT_EQ(la, lb);
    }
}

TEST(Cli, ExitCodesFollowContract) {
    TempDir dir("gridlode_cli_test");
    // Unknown subcommand and bad flags: usage error -> 2.
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("train --no-such-flag"), 2);
    // Missing config inputs -> 2.
    EXPECT_EQ(run_cli("train"), 2);
    // Missing feeder spec file -> 2.
    EXPECT_EQ(run_cli("generate --config /no/such/config.cfg"), 2);

    // A healthy generate run exits 0.
    const std::string cfg_path = dir.str("run.cfg");
    {
        std::ofstream out(cfg_path);
        out << "day_minutes = 60\n";
        out << "out = " << dir.str("gen") << "\n";
    }
    EXPECT_EQ(run_cli("generate --config " + cfg_path + " --seed 5"), 0);
    EXPECT_TRUE(fs::exists(dir.str("gen/observed.csv")));
}

TEST(Cli, SeedFlagOverridesConfig) {
    TempDir dir("gridlode_cli_seed");
    const std::string cfg_path = dir.str("run.cfg");
    {
        std::ofstream out(cfg_path);
        out << "seed = 1\n";
        out << "day_minutes = 60\n";
        out << "out = " << dir.str("g1") << "\n";
    }
    EXPECT_EQ(run_cli("generate --config " + cfg_path), 0);
    EXPECT_EQ(run_cli("generate --config " + cfg_path + " --seed 1 --out " +
                      dir.str("g2")),
              0);
    EXPECT_EQ(run_cli("generate --config " + cfg_path + " --seed 2 --out " +
                      dir.str("g3")),
              0);
    EXPECT_EQ(read_file(dir.str("g1/observed.csv")), read_file(dir.str("g2/observed.csv")));
    EXPECT_NE(read_file(dir.str("g1/observed.csv")), read_file(dir.str("g3/observed.csv")));
}
