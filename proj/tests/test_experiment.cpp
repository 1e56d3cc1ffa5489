#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iscc/experiment.hpp"

using namespace iscc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = ISCC_CONFIG_DIR;

json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in, nullptr, true, true);
}

std::string scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("iscc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string write_config(const json& j, const std::string& dir, const std::string& name = "cfg.json") {
    const auto path = (fs::path(dir) / name).string();
    std::ofstream(path) << j.dump(2);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t column(const Table& t, const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    EXPECT_NE(it, t.header.end()) << name;
    return static_cast<std::size_t>(it - t.header.begin());
}

// Three heterogeneous devices, scalar probe task, optimizer policy.
json small_optimize_config() {
    json j = read_json(kConfigs + "/verify_tight.json");
    j.erase("verify");
    j["system"]["grad_dim"] = 20;
    j["system"]["num_subcarriers"] = 10;
    j["system"]["sense_noise_var"] = 1e-3;
    j["system"]["channel_noise_var"] = 1e-6;
    j["system"]["latency_budget"] = 30.0;
    j["system"]["total_rounds"] = 2;
    j["task"] = {{"kind", "linear-probe"}, {"mean", std::vector<double>(20, 0.1)},
                 {"stddev", std::vector<double>(20, 0.2)}, {"gain", 1.0}};
    const double gains[] = {5e-4, 1e-3, 2e-3};
    j["devices"] = json::array();
    for (double h : gains)
        j["devices"].push_back({{"channel_power_gain", h}, {"energy_budget", 5.0}, {"cpu_constant", 5e-27},
                                {"max_frequency", 1e9}, {"max_sense_power", 0.02}, {"clutter_var", 1.0}});
    j["schedule"] = {{"policy", "optimize"}};
    j["solver"] = {{"restarts", 2}};
    j["seeds"] = {1};
    return j;
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(ISCC_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, RoundTrip) {
    for (const char* name : {"verify_tight.json", "batch_size_sweep.json", "optimize_six_devices.json"}) {
        const auto cfg = load_config(kConfigs + "/" + name);
        const auto j = to_json(cfg);
        EXPECT_EQ(to_json(config_from_json(j)), j) << name;
    }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto j = read_json(kConfigs + "/verify_tight.json");
    j["system"]["latency_budgett"] = 1.0;
    EXPECT_THROW(config_from_json(j), ValidationError);

    j = read_json(kConfigs + "/verify_tight.json");
    j["system"]["symbol_time"] = -1.0;
    try {
        config_from_json(j);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_FALSE(e.violations().empty());
    }

    j = read_json(kConfigs + "/verify_tight.json");
    j["sweep"] = {{"path", "system.no_such_field"}, {"values", {1.0}}};
    EXPECT_THROW(config_from_json(j), ValidationError);
}

TEST(Config, SetPath) {
    json doc = {{"a", {{"b", {1, 2, 3}}, {"c", {{{"x", 1}}, {{"x", 2}}}}}}};
    set_path(doc, "a.b.1", 9);
    EXPECT_EQ(doc["a"]["b"][1], 9);
    set_path(doc, "a.b.*", 0);
    EXPECT_EQ(doc["a"]["b"], json({0, 0, 0}));
    set_path(doc, "a.c.*.x", 5);
    EXPECT_EQ(doc["a"]["c"][1]["x"], 5);
    EXPECT_THROW(set_path(doc, "a.d", 1), ValidationError);
    EXPECT_THROW(set_path(doc, "a.b.7", 1), ValidationError);
}

TEST(Config, DefaultLearningRate) {
    auto cfg = load_config(kConfigs + "/verify_tight.json");
    cfg.schedule.learning_rate.reset();
    cfg.system.total_rounds = 400;
    cfg.system.smoothness = 2.0;
    EXPECT_DOUBLE_EQ(cfg.learning_rate(), 1.0 / (20.0 * 2.0));
}

TEST(Simulate, OneRowPerRoundAndSeed) {
    auto cfg = load_config(kConfigs + "/verify_tight.json");
    cfg.system.total_rounds = 10;
    cfg.seeds = {1, 2};
    const auto t = simulate_table(cfg, 1);
    ASSERT_EQ(t.rows.size(), 20u);
    const auto seed = column(t, "seed");
    EXPECT_EQ(t.rows.front()[seed], "1");
    EXPECT_EQ(t.rows.back()[seed], "2");
    for (const auto& r : t.rows) EXPECT_EQ(r.size(), t.header.size());
}

TEST(Simulate, WritesCsvThroughCommand) {
    const auto dir = scratch_dir("simulate");
    auto j = read_json(kConfigs + "/verify_tight.json");
    j["system"]["total_rounds"] = 3;
    const auto path = write_config(j, dir);
    std::ostringstream log;
    RunOptions o;
    o.out_dir = dir + "/out";
    EXPECT_EQ(cmd_simulate(path, o, log), 0);
    const auto csv = slurp(dir + "/out/simulate.csv");
    EXPECT_NE(csv.find("train_loss"), std::string::npos);
}

TEST(Optimize, InfeasibleExitCodeAndNoFile) {
    const auto dir = scratch_dir("infeasible");
    auto j = small_optimize_config();
    j["devices"][1]["energy_budget"] = 0.0;
    const auto path = write_config(j, dir);
    std::ostringstream log;
    RunOptions o;
    o.out_dir = dir + "/out";
    EXPECT_EQ(cmd_optimize(path, o, log), exit_code::kInfeasible);
    EXPECT_FALSE(fs::exists(dir + "/out/optimize.json"));
    EXPECT_NE(log.str().find("1"), std::string::npos);
}

TEST(Optimize, ByteIdenticalOnRepeat) {
    const auto dir = scratch_dir("repeat");
    const auto path = write_config(small_optimize_config(), dir);
    std::ostringstream log;
    RunOptions a, b;
    a.out_dir = dir + "/a";
    b.out_dir = dir + "/b";
    ASSERT_EQ(cmd_optimize(path, a, log), 0) << log.str();
    ASSERT_EQ(cmd_optimize(path, b, log), 0) << log.str();
    const auto first = slurp(dir + "/a/optimize.json");
    EXPECT_FALSE(first.empty());
    EXPECT_EQ(first, slurp(dir + "/b/optimize.json"));
    const auto report = json::parse(first);
    EXPECT_TRUE(report.contains("objective"));
}

TEST(Verify, InflatedHessianBoundPasses) {
    auto cfg = load_config(kConfigs + "/verify_tight.json");
    cfg.verify.tight = false;
    cfg.verify.trials = 20000;
    cfg.system.hessian_bound = 20.0;
    for (const auto& c : verify_bounds(cfg)) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
}

TEST(Verify, MisreportedChannelNoiseFails) {
    const auto dir = scratch_dir("misreported");
    auto j = read_json(kConfigs + "/verify_tight.json");
    j["verify"]["tight"] = false;
    j["verify"]["trials"] = 20000;
    j["verify"]["checks"] = {"variance"};
    j["system"]["channel_noise_var"] = 0.01;
    j["verify"]["simulation_overrides"] = {{"system.channel_noise_var", 0.1}};
    const auto path = write_config(j, dir);
    std::ostringstream log;
    RunOptions o;
    o.out_dir = dir + "/out";
    EXPECT_EQ(cmd_verify_bounds(path, o, log), exit_code::kBoundCheck);
    EXPECT_TRUE(fs::exists(dir + "/out/verify.csv"));
}

TEST(Verify, TightCasePasses) {
    const auto cfg = load_config(kConfigs + "/verify_tight.json");
    for (const auto& c : verify_bounds(cfg)) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
}

TEST(Sweep, SingleValueMatchesSimulate) {
    auto cfg = load_config(kConfigs + "/verify_tight.json");
    cfg.system.total_rounds = 8;
    cfg.seeds = {3, 4};
    cfg.schedule.final_window = 1;
    const auto sim = simulate_table(cfg, 1);
    cfg.sweep = SweepSpec{"system.channel_noise_var", {json(cfg.system.channel_noise_var)}};
    const auto sw = sweep_table(cfg, 1);
    ASSERT_EQ(sw.rows.size(), 2u);
    const auto sim_loss = column(sim, "train_loss"), sw_loss = column(sw, "train_loss");
    EXPECT_EQ(sw.rows[0][sw_loss], sim.rows[7][sim_loss]);
    EXPECT_EQ(sw.rows[1][sw_loss], sim.rows[15][sim_loss]);
}

TEST(Sweep, LatencyBudgetObjectiveNonIncreasing) {
    auto cfg = config_from_json(small_optimize_config());
    cfg.system.total_rounds = 1;
    cfg.sweep = SweepSpec{"system.latency_budget", {json(20.0), json(30.0), json(40.0)}};
    const auto t = sweep_table(cfg, 1);
    ASSERT_EQ(t.rows.size(), 3u);
    const auto obj = column(t, "objective");
    for (std::size_t i = 1; i < t.rows.size(); ++i)
        EXPECT_LE(std::stod(t.rows[i][obj]), std::stod(t.rows[i - 1][obj]) * (1 + 1e-6));
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli("optimize --config /nonexistent.json"), exit_code::kValidation);
    EXPECT_EQ(run_cli("no-such-command"), exit_code::kValidation);
    const auto dir = scratch_dir("cli");
    std::ofstream(dir + "/broken.json") << "{ not json";
    EXPECT_EQ(run_cli("simulate --config " + dir + "/broken.json --out " + dir), exit_code::kValidation);
    auto j = small_optimize_config();
    j["devices"][0]["energy_budget"] = 0.0;
    EXPECT_EQ(run_cli("optimize --config " + write_config(j, dir) + " --out " + dir),
              exit_code::kInfeasible);
}
