// fl_sim.hpp - federated training simulator on synthetic tasks.
//
// One round: every device senses b_k corrupted samples, computes its local
// gradient on them, the server recovers the AirComp aggregate and takes a
// gradient step. Randomness is split into independent streams per round,
// device and purpose, so changing a noise level leaves the truth samples of a
// run unchanged (common random numbers across sweep cells).

#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iscc/model_core.hpp"
#include "iscc/optimizer.hpp"
#include "iscc/rng.hpp"
#include "iscc/types.hpp"

namespace iscc {

enum class TaskKind { kLinearProbe, kLogistic };

/// Synthetic learning task.
///
/// kLinearProbe: loss gain * w.x + |w|^2 / 2 with x ~ N(mean, diag(stddev^2)).
///   The gradient gain * x + w is affine in the sample, so sensing noise passes
///   through it exactly and the data-Jacobian norm equals `gain`.
/// kLogistic: labels y = +-1 equiprobable, x = y * mean + stddev (.) z, loss
///   log(1 + exp(-y w.x)) + l2 |w|^2 / 2.
struct Task {
    TaskKind kind = TaskKind::kLinearProbe;
    std::vector<double> mean;
    std::vector<double> stddev;
    double gain = 1.0;
    double l2 = 0.0;
    int eval_samples = 4000;        // fixed clean set for the logistic training loss
    std::uint64_t eval_seed = 7;

    static Task linear_probe(std::vector<double> mean, std::vector<double> stddev, double gain = 1.0);
    static Task logistic(std::vector<double> mean, std::vector<double> stddev, double l2 = 0.0);

    int dim() const noexcept { return static_cast<int>(mean.size()); }
    std::vector<std::string> violations() const;

    TruthSample sample(Rng& rng) const;
    double loss(std::span<const double> w, std::span<const double> x, double label) const;
    /// Adds the per-sample gradient to `out`.
    void add_gradient(std::span<const double> w, std::span<const double> x, double label,
                      std::span<double> out) const;

    /// Smoothness constant of the population loss (an upper bound for logistic).
    double smoothness() const;
    /// Total per-sample gradient variance of clean data at w (exact for the linear probe).
    double clean_gradient_variance() const;
    /// Population gradient (exact for the linear probe, evaluation-set average for logistic).
    std::vector<double> population_gradient(std::span<const double> w) const;
    double population_loss(std::span<const double> w) const;
    /// Exact population accuracy of sign(w.x) for logistic; 0 for the linear probe.
    double test_accuracy(std::span<const double> w) const;
    /// Optimal population loss (linear probe only; NaN otherwise).
    double optimal_loss() const;
    /// The fixed clean evaluation set (regenerated from eval_seed unless cached).
    std::vector<TruthSample> eval_set() const;
    /// Builds the evaluation set once; call after the task parameters are final.
    void cache_eval_set();

private:
    std::shared_ptr<const std::vector<TruthSample>> eval_cache_;
    const std::vector<TruthSample>& eval_samples_ref(std::vector<TruthSample>& scratch) const;
};

struct ModelState {
    std::vector<double> weights;
    int round = 0;
};

enum class AllocationPolicy { kFixed, kOptimize };
enum class ErrorReference { kPaired, kPopulation };

struct TrainingSchedule {
    double learning_rate = 0.1;
    int total_rounds = 1;
    AllocationPolicy policy = AllocationPolicy::kFixed;
    RoundAllocation allocation;  // used by kFixed
    SolverOptions solver;        // used by kOptimize
    /// Paired: clean gradient of the very samples that were sensed. Population:
    /// true gradient, so the error also contains sampling noise.
    ErrorReference error_reference = ErrorReference::kPaired;
    /// Record non-finite weights as divergence instead of throwing.
    bool tolerate_divergence = false;
    /// A run whose training loss over the last `divergence_window` rounds has a
    /// relative standard deviation above this is flagged as not converging.
    double oscillation_threshold = 0.043;
    int divergence_window = 80;
    /// Rounds averaged into TrainingResult::final_accuracy and final_loss.
    int final_window = 20;

    std::vector<std::string> violations() const;
};

struct RoundMetrics {
    int round = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double grad_error_sq = 0.0;
    PerDevice latency;
    PerDevice energy;
    std::vector<std::string> violated_constraints;
};

struct TrainingResult {
    std::vector<RoundMetrics> rounds;
    ModelState final_model;
    RoundAllocation allocation;
    bool diverged = false;
    int diverged_round = -1;
    std::string divergence_reason;
    double tail_loss_rel_std = 0.0;
    /// Mean test accuracy / training loss over the last final_window rounds
    /// (per-round values fluctuate around a plateau once training settles).
    double final_accuracy = 0.0;
    double final_loss = 0.0;
};

/// Mean per-sample gradient on the observed (corrupted) samples.
std::vector<double> local_gradient(const ModelState& model, std::span<const SenseSample> batch,
                                   const Task& task);

/// Aggregated gradient of one round together with the paired clean gradient
/// (same truth samples, no clutter, sensing or channel noise, same weights).
struct RoundGradient {
    std::vector<double> aggregated;
    std::vector<double> clean;
};

/// `seed` roots the per-device sensing/truth streams and the channel stream.
RoundGradient sample_round_gradient(const ModelState& model, const SystemConfig& cfg,
                                    const std::vector<DeviceConfig>& devices,
                                    const RoundAllocation& alloc, const Task& task,
                                    std::uint64_t seed);

struct RoundOutcome {
    ModelState model;
    RoundMetrics metrics;
};

/// Executes one round. Throws DivergenceError on non-finite weights.
RoundOutcome run_round(const ModelState& model, const SystemConfig& cfg,
                       const std::vector<DeviceConfig>& devices, const RoundAllocation& alloc,
                       const Task& task, const TrainingSchedule& sched, Rng& rng);

/// T rounds from w = 0; bit-identical for equal seeds.
TrainingResult run_training(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                            const Task& task, const TrainingSchedule& sched, std::uint64_t seed);

struct GradNormEstimate {
    double value = 0.0;
    double std_error = std::numeric_limits<double>::infinity();
};

/// Unbiased estimate of |E grad|^2 from n clean samples: |mean|^2 - tr(S)/n,
/// with delta-method standard error sqrt(4 m'Sm / n + 2 tr(S^2) / n^2).
GradNormEstimate estimate_grad_sq_norm(const ModelState& model, const Task& task, int n_samples,
                                       Rng& rng);

}  // namespace iscc
