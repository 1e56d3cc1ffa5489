// model_core.hpp - per-round physical cost model and signal formulas.
//
// Sensing corrupts each sample with clutter and power-scaled noise, local
// gradients are computed on the corrupted samples, and AirComp recovers a
// weighted sum of the local gradients plus scaled channel noise. Each step
// consumes time and energy on the device; the functions below evaluate those
// costs exactly.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "iscc/rng.hpp"
#include "iscc/types.hpp"

namespace iscc {

/// A clean sample with its label (label is 0 for unlabeled tasks).
struct TruthSample {
    std::vector<double> x;
    double label = 0.0;
};

using TruthSource = std::function<TruthSample(Rng&)>;

/// One sensed sample. `observed == truth + clutter + noise_scaled` holds bit-exactly.
struct SenseSample {
    std::vector<double> truth;
    std::vector<double> clutter;
    std::vector<double> noise_scaled;
    std::vector<double> observed;
    double label = 0.0;
};

/// Sensing a batch: clutter with total variance clutter_var and sensing noise
/// with total variance sense_noise_var / sense_power, drawn independently per sample.
std::vector<SenseSample> sense_batch(const DeviceConfig& device, const SystemConfig& cfg,
                                     double sense_power, int batch_size,
                                     const TruthSource& truth_source, Rng& rng);

// Time and energy of the three round phases.
double sensing_time(double batch_size, const SystemConfig& cfg);
double sensing_energy(double sense_power, double batch_size, const SystemConfig& cfg);
double compute_time(double batch_size, double frequency, const SystemConfig& cfg);
double compute_energy(double batch_size, double frequency, const DeviceConfig& device,
                      const SystemConfig& cfg);
/// ceil(N/M) * tau_u, identical for all devices.
double upload_time(const SystemConfig& cfg);
/// Upload energy with aggregation weight b_k / b.
double upload_energy(double eta, double batch_size, double total_batch,
                     const DeviceConfig& device, const SystemConfig& cfg);
/// Upload energy for an explicit aggregation weight alpha_k: eta alpha^2 N tau_u / H_k.
double upload_energy_weighted(double eta, double fraction, const DeviceConfig& device,
                              const SystemConfig& cfg);

/// Per-element transmit power from channel alignment: beta = eta / h^2.
double tx_power_from_alignment(double eta, double channel_magnitude);

/// Channel magnitudes of one round with the receiver noise level.
struct ChannelRealization {
    std::vector<double> magnitudes;
    double noise_var = 0.0;

    /// Transmit powers beta_k = eta / h_k^2 for every device.
    std::vector<double> aligned_tx_powers(double eta) const;
};

/// AirComp recovery with weights b_k / sum(b).
std::vector<double> aircomp_aggregate(std::span<const std::vector<double>> local_grads,
                                      std::span<const double> batch_sizes, double eta,
                                      const SystemConfig& cfg, Rng& rng);

/// AirComp recovery with explicit weights (sum to 1). Draws exactly
/// grad_dim channel-noise values regardless of the noise level.
std::vector<double> aircomp_aggregate_weighted(std::span<const std::vector<double>> local_grads,
                                               std::span<const double> weights, double eta,
                                               const SystemConfig& cfg, Rng& rng);

/// Latency T_s + T_c + T_u of device k.
double round_latency(int k, const RoundAllocation& alloc, const SystemConfig& cfg);
/// Energy E_s + E_c + E_u of device k, upload term using alloc.batch_fractions[k].
double round_energy(int k, const RoundAllocation& alloc, const std::vector<DeviceConfig>& devices,
                    const SystemConfig& cfg);

/// Per-device latency/energy with constraint slack.
struct ConstraintReport {
    std::vector<double> latency;
    std::vector<double> energy;
    std::vector<double> latency_slack;  // budget - latency
    std::vector<double> energy_slack;   // E_k - energy
    double alpha_sum = 0.0;
    std::vector<std::string> violations;

    bool satisfied() const noexcept { return violations.empty(); }
};

/// Evaluates C1 (sum alpha = 1), C2 (latency) and C3 (energy). A constraint is
/// violated when it exceeds its budget by more than `rel_tol` relative.
ConstraintReport check_constraints(const RoundAllocation& alloc,
                                   const std::vector<DeviceConfig>& devices,
                                   const SystemConfig& cfg, double rel_tol = 0.0);

}  // namespace iscc
