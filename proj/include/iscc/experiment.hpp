// experiment.hpp - config-driven experiments behind the command-line tool.
//
// A config is one JSON document with sections system, devices (or
// device_generator), solver, task, schedule, sweep, seeds, output, verify.
// Every command returns a process exit code; results go to the output
// directory as CSV (time series, tables) or JSON (single reports).

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iscc/fl_sim.hpp"
#include "iscc/optimizer.hpp"
#include "iscc/types.hpp"

namespace iscc {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kIo = 1;
inline constexpr int kValidation = 2;
inline constexpr int kInfeasible = 3;
inline constexpr int kNonConvergence = 4;
inline constexpr int kBoundCheck = 5;
}  // namespace exit_code

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Randomized devices; uniform draws from a dedicated stream of `seed`.
struct DeviceGenerator {
    int count = 6;
    std::uint64_t seed = 1;
    Range channel_power_gain{5e-4, 2e-3};
    Range energy_budget{2.0, 10.0};
    Range cpu_constant{0.2e-26, 1e-26};
    Range max_frequency{0.4e9, 2e9};
    Range max_sense_power{0.6e-2, 3e-2};
    double clutter_var = 1.0;

    std::vector<DeviceConfig> generate() const;
};

struct ScheduleSpec {
    std::optional<double> learning_rate;  // default 1 / (sqrt(T) L)
    AllocationPolicy policy = AllocationPolicy::kFixed;
    RoundAllocation allocation;
    ErrorReference error_reference = ErrorReference::kPaired;
    bool tolerate_divergence = true;
    double oscillation_threshold = 0.043;
    int divergence_window = 80;
    int final_window = 20;
};

struct SweepSpec {
    std::string path;  // dotted JSON path; '*' addresses every list element
    std::vector<nlohmann::json> values;
};

struct VerifySpec {
    int trials = 100000;
    std::vector<std::string> checks{"unbiased", "variance", "degradation"};
    /// Require |empirical / bound - 1| < tight_tolerance instead of empirical <= bound.
    bool tight = false;
    double tight_tolerance = 0.03;
    double z_threshold = 3.0;
    /// Path -> value edits applied to the simulated world only (the bounds
    /// keep using the config as written).
    nlohmann::json simulation_overrides = nlohmann::json::object();
    std::vector<double> model;  // evaluation point; zeros when empty
};

struct OutputSpec {
    std::string dir = "results";
    std::string format = "csv";
};

struct ExperimentConfig {
    SystemConfig system;
    std::vector<DeviceConfig> devices;
    std::optional<DeviceGenerator> device_generator;
    SolverOptions solver;
    Task task;
    bool has_task = false;  // only simulate, sweep and verify-bounds need one
    ScheduleSpec schedule;
    std::optional<SweepSpec> sweep;
    std::vector<std::uint64_t> seeds{1};
    OutputSpec output;
    VerifySpec verify;

    /// Explicit devices, or the generated ones.
    std::vector<DeviceConfig> resolved_devices() const;
    double learning_rate() const;
    TrainingSchedule training_schedule() const;
    std::vector<std::string> violations() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Throws ValidationError on unknown keys, wrong types or violated invariants.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Sets every location addressed by `path` to `value`. Throws ValidationError
/// when the path does not name an existing field.
void set_path(nlohmann::json& doc, const std::string& path, const nlohmann::json& value);

struct RunOptions {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed_override;
    int jobs = 1;
    std::optional<std::string> format;
};

/// Rows with a header and '#' comment lines, written as CSV or a JSON array.
struct Table {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write_csv(std::ostream& os) const;
    void write_json(std::ostream& os) const;
};

std::string format_number(double x);

/// Report of one alternating-solver run.
nlohmann::json optimize_report(const ExperimentConfig& cfg, const Algorithm1Result& result);

Table simulate_table(const ExperimentConfig& cfg, int jobs);
Table sweep_table(const ExperimentConfig& cfg, int jobs);

struct BoundCheck {
    std::string name;
    double empirical = 0.0;
    double reference = 0.0;  // bound or target
    double margin = 0.0;     // positive when the check passes
    double std_error = 0.0;
    bool pass = false;
    std::string detail;
};

std::vector<BoundCheck> verify_bounds(const ExperimentConfig& cfg, int jobs = 1);
Table verify_table(const std::vector<BoundCheck>& checks);

// Subcommands. Each returns the process exit code and writes its diagnostics to `log`.
int cmd_optimize(const std::string& config_path, const RunOptions& opts, std::ostream& log);
int cmd_simulate(const std::string& config_path, const RunOptions& opts, std::ostream& log);
int cmd_verify_bounds(const std::string& config_path, const RunOptions& opts, std::ostream& log);
int cmd_sweep(const std::string& config_path, const RunOptions& opts, std::ostream& log);

/// Runs fn(0..n-1) on up to `jobs` threads; fn writes into its own slot.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace iscc
