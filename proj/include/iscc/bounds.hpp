// bounds.hpp - executable forms of the convergence analysis.
//
// All evaluators are pure functions of their inputs. The true gradient norm
// and the initial optimality gap are supplied by the caller (the simulator
// can estimate them); nothing here touches data.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "iscc/types.hpp"

namespace iscc {

struct BoundInputs {
    SystemConfig cfg;
    std::vector<DeviceConfig> devices;
    RoundAllocation alloc;
    double true_grad_sq_norm = 0.0;  // ||g^(t)||^2
    double initial_gap = 0.0;        // F(w^0) - F*
};

struct ConvergenceBound {
    double g_t_value = 0.0;
    std::vector<double> per_round_noise_terms;
};

/// Per-sample error bracket sigma^2 + A^2 (clutter_var + sense_noise_var / P).
double sample_error_bracket(const SystemConfig& cfg, const DeviceConfig& device,
                            double sense_power);

/// Gradient-error bound: sum_k b_k / b^2 * bracket_k + delta_u^2 / eta.
double variance_bound(const BoundInputs& in);

/// Batch-size/resource objective: delta_u^2 / eta + sum_k alpha_k^2 / b_k * bracket_k.
/// Devices with alpha_k = 0 contribute nothing.
double objective_p2(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                    const RoundAllocation& alloc);
double objective_p2(const BoundInputs& in);

/// Learning rate assumed by the per-round bound: 1 / (sqrt(T) L).
double bound_learning_rate(const SystemConfig& cfg);

/// Lower bound on the expected loss decrease of one round. If a learning rate
/// is supplied it must equal bound_learning_rate(cfg) (relative 1e-12), otherwise
/// ValidationError is thrown.
double per_round_degradation_lb(const BoundInputs& in,
                                std::optional<double> learning_rate = std::nullopt);

/// G_T from per-round noise terms (terms.size() == T).
ConvergenceBound convergence_bound_from_terms(double smoothness, double initial_gap,
                                              std::vector<double> terms);

/// G_T for a schedule of allocations, one per round.
ConvergenceBound convergence_bound_gt(const SystemConfig& cfg,
                                      const std::vector<DeviceConfig>& devices,
                                      std::span<const RoundAllocation> schedule,
                                      double initial_gap);

}  // namespace iscc
