// types.hpp - shared domain types for the ISCC over-the-air federated learning model.
//
// Symbols follow the usual Air-FEEL notation in comments only; identifiers are
// named by role.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace iscc {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a formula (e.g. division by zero power).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Vector lengths that do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Configuration rejected by validation. Carries every violated invariant.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

/// No allocation satisfies the round constraints.
class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& what, int device = -1)
        : Error(what), device_(device) {}
    /// Offending device index, or -1 when the failure is global.
    int device() const noexcept { return device_; }

private:
    int device_;
};

/// Training produced non-finite weights.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int round) : Error(what), round_(round) {}
    int round() const noexcept { return round_; }

private:
    int round_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Global constants of the system (one round of Air-FEEL).
struct SystemConfig {
    int num_devices = 1;             // K
    int grad_dim = 1;                // N, model / gradient length
    int num_subcarriers = 1;         // M
    double sense_sample_time = 0.5;  // tau_s [s]
    double symbol_time = 0.02;       // tau_u [s]
    double cycles_per_sample = 2.5e7;  // C
    double latency_budget = 30.0;    // per-round latency budget [s]
    double sense_noise_var = 0.0;    // delta_s^2
    double channel_noise_var = 0.0;  // delta_u^2
    double grad_var_bound = 1.0;     // sigma^2
    double hessian_bound = 1.0;      // A
    double smoothness = 1.0;         // L
    int total_rounds = 1;            // T

    /// Every violated invariant, empty when valid.
    std::vector<std::string> violations() const;
    void validate() const;
};

/// Per-device physical parameters.
struct DeviceConfig {
    double channel_power_gain = 1.0;  // H_k = E[h_k^2]
    double energy_budget = 1.0;       // E_k [J]
    double cpu_constant = 0.0;        // Omega_k
    double max_frequency = 1e9;       // f_k^max [Hz]
    double max_sense_power = 1.0;     // P_{k,s}^max [W]
    double clutter_var = 0.0;         // delta_{k,c}^2

    std::vector<std::string> violations(int index) const;
};

/// Validates a system together with its device list (count must match K).
std::vector<std::string> validation_errors(const SystemConfig& cfg,
                                           const std::vector<DeviceConfig>& devices);
void validate(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices);

/// Decision variables of one round.
///
/// `batch_fractions` are the AirComp aggregation weights alpha_k. For the
/// original problem they equal b_k / b; the batch-size subproblem treats them
/// as free weights constrained only by sum(alpha) = 1.
struct RoundAllocation {
    std::vector<double> batch_sizes;      // b_k (continuous until rounded)
    std::vector<double> batch_fractions;  // alpha_k
    double total_batch = 0.0;             // b = sum b_k
    std::vector<double> sense_powers;     // P_{k,s}
    std::vector<double> frequencies;      // f_k
    double receive_magnitude_sq = 0.0;    // eta

    std::size_t size() const noexcept { return batch_sizes.size(); }

    /// Builds a consistent allocation with alpha_k = b_k / b.
    static RoundAllocation from_batches(std::vector<double> batch_sizes,
                                        std::vector<double> sense_powers,
                                        std::vector<double> frequencies, double eta);

    /// Shape checks plus sum(alpha) = 1 and b = sum(b_k) within `tol`.
    std::vector<std::string> consistency_errors(double tol = 1e-9) const;
};

/// Value of one quantity for every device.
using PerDevice = std::vector<double>;

}  // namespace iscc
