// optimizer.hpp - joint batch-size and resource allocation for one round.
//
// The round problem
//
//     min  delta_u^2/eta + sum_k alpha_k^2/b_k * M_k(P_k)
//     s.t. sum_k alpha_k = 1                                   (C1)
//          b_k tau_s + b_k C/f_k + T_u <= latency budget       (C2)
//          P_k b_k tau_s + Omega_k b_k C f_k^2
//              + eta alpha_k^2 N tau_u / H_k <= E_k            (C3)
//
// is solved by alternating two convex subproblems: batch sizes (alpha, b) for
// fixed (P, f, eta), and resources (P, f, eta) for fixed (alpha, b). Both are
// solved through their KKT systems; the dual variables are returned so the
// first-order conditions can be checked independently (see p3_kkt / p4_kkt).

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iscc/rng.hpp"
#include "iscc/types.hpp"

namespace iscc {

struct SolverOptions {
    int max_iters = 200;          // bisection steps per dual search
    double tol = 1e-4;            // scaled KKT residual threshold
    double alt_tol = 1e-6;        // relative objective change that ends the alternation
    int alt_max_iters = 100;
    double lambda_floor = 1e-12;  // floor on energy multipliers in the closed forms
    double min_batch = 1.0;       // b_min
    int init_retries = 1000;
    double eta_log10_min = -6.0;  // initial eta ~ log-uniform over [10^min, 10^max]
    double eta_log10_max = 0.0;
    int restarts = 8;             // independent feasible initializations; best result kept
    bool eta_search = true;       // also start from the best fixed-eta solution along eta
    int eta_scan_points = 24;     // coarse log-spaced eta grid before golden refinement
    double power_floor_fraction = 1e-6;  // P / P^max when sensing noise does not enter the objective
    double eta_floor_fraction = 1e-9;    // eta / eta_max when channel noise is zero

    std::vector<std::string> violations() const;
};

/// Lagrange multipliers. mu, gamma, lambda belong to the batch-size problem;
/// phi, psi to the resource problem.
struct DualState {
    double mu = 0.0;
    PerDevice gamma, lambda, phi, psi;
};

/// Scaled first-order residuals. Each entry is dimensionless.
struct KktReport {
    double stationarity = 0.0;
    double complementarity = 0.0;
    double primal = 0.0;
    double dual_sign = 0.0;  // magnitude of any negative inequality multiplier

    double max_residual() const noexcept;
    bool ok(double tol) const noexcept { return max_residual() < tol; }
};

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

struct FeasibilityResult {
    double max_alpha_sum = 0.0;
    bool feasible = false;
    PerDevice alpha_max;           // per-device maximum weight at b_k = min_batch
    std::vector<int> latency_blocked;  // devices for which min_batch violates C2
};

/// Maximizes sum(alpha) under C2/C3 for fixed (P, f, eta). Separable: with
/// b_k = min_batch, alpha_k = sqrt(H_k max(0, E_k - P tau_s b_min - Omega C f^2 b_min) / (eta N tau_u)).
FeasibilityResult check_feasibility(const SystemConfig& cfg,
                                    const std::vector<DeviceConfig>& devices,
                                    const PerDevice& sense_powers, const PerDevice& frequencies,
                                    double eta, double min_batch = 1.0);

// ---------------------------------------------------------------------------
// Batch-size subproblem
// ---------------------------------------------------------------------------

/// J_k = gamma_k (tau_s + C/f_k) + lambda_k (P_k tau_s + Omega_k C f_k^2),
/// M_k = sigma^2 + A^2 (clutter_k + delta_s^2 / P_k).
struct P3Intermediates {
    PerDevice j;
    PerDevice m;
};

P3Intermediates p3_intermediates(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                                 const PerDevice& sense_powers, const PerDevice& frequencies,
                                 const DualState& duals);

/// Closed-form primal point for given multipliers:
///   alpha = (-mu - 2 sqrt(J M)) H / (2 lambda eta N tau_u)
///   b     = H / (2 lambda eta N tau_u) * (-mu sqrt(M/J) - 2M)
/// lambda is floored at `lambda_floor`; both values are projected to [0, inf).
struct WeightAndBatch {
    double alpha = 0.0;
    double batch = 0.0;
};
WeightAndBatch weight_batch_closed_form(const SystemConfig& cfg, const DeviceConfig& device, double j,
                             double m, double mu, double lambda, double eta,
                             double lambda_floor = 1e-12);

struct P3Result {
    PerDevice alpha;
    PerDevice batch;
    DualState duals;
    KktReport kkt;
    double objective = 0.0;
    int iterations = 0;
};

/// Optimal (alpha, b) for fixed (P, f, eta). Throws InfeasibleError when the
/// feasibility problem has value < 1.
P3Result solve_p3(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& sense_powers, const PerDevice& frequencies, double eta,
                  const SolverOptions& opts = {}, const std::optional<DualState>& warm = std::nullopt);

/// Evaluates the batch-size KKT conditions at an arbitrary primal/dual pair.
KktReport p3_kkt(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                 const PerDevice& sense_powers, const PerDevice& frequencies, double eta,
                 const PerDevice& alpha, const PerDevice& batch, const DualState& duals,
                 double min_batch = 1.0);

// ---------------------------------------------------------------------------
// Resource subproblem
// ---------------------------------------------------------------------------

/// Sensing power from the energy multiplier: alpha A delta_s / (b sqrt(psi tau_s)).
double closed_form_power(const SystemConfig& cfg, double alpha, double batch, double psi);
/// Receive magnitude: sqrt(delta_u^2 / sum_k psi_k alpha_k^2 N tau_u / H_k).
double closed_form_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& alpha, const PerDevice& psi);
/// Slowest frequency meeting the latency budget: b C / (budget - T_u - b tau_s).
/// Throws InfeasibleError when the denominator is not positive.
double latency_tight_frequency(const SystemConfig& cfg, double batch, int device = -1);

struct P4Result {
    PerDevice sense_powers;
    PerDevice frequencies;
    double eta = 0.0;
    DualState duals;
    KktReport kkt;
    double objective = 0.0;
    std::vector<std::string> warnings;
};

/// Optimal (P, f, eta) for fixed (alpha, b).
P4Result solve_p4(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& alpha, const PerDevice& batch, const SolverOptions& opts = {},
                  const std::optional<DualState>& warm = std::nullopt);

KktReport p4_kkt(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                 const PerDevice& alpha, const PerDevice& batch, const PerDevice& sense_powers,
                 const PerDevice& frequencies, double eta, const DualState& duals,
                 const SolverOptions& opts = {});

// ---------------------------------------------------------------------------
// Fixed receive magnitude
// ---------------------------------------------------------------------------

struct FixedEtaResult {
    PerDevice alpha;
    PerDevice batch;
    PerDevice sense_powers;
    PerDevice frequencies;
    double objective = 0.0;
};

/// Optimal (alpha, b, P, f) for fixed eta. With s_k = P_k b_k the sensing
/// energy, the per-device cost alpha^2 (M0/b + A^2 delta_s^2 / s) is jointly
/// convex and the energy constraint with f at its latency-tight value is convex
/// too, so the problem is solved exactly by a price search on sum(alpha) = 1 over
/// nested one-dimensional convex minimizations.
FixedEtaResult solve_fixed_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                               double eta, const SolverOptions& opts = {});

/// Largest eta for which some allocation exists (sum of per-device weight caps = 1).
double max_feasible_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                        double min_batch = 1.0);

struct EtaSearchResult {
    FixedEtaResult best;
    double eta = 0.0;
    int evaluations = 0;
};

/// Minimizes the fixed-eta optimum over eta: coarse log-spaced scan below
/// max_feasible_eta, then golden-section refinement around the best scan point.
EtaSearchResult search_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                           const SolverOptions& opts = {});

// ---------------------------------------------------------------------------
// Alternation
// ---------------------------------------------------------------------------

struct Algorithm1Result {
    RoundAllocation continuous;  // before integer rounding
    RoundAllocation rounded;     // after round_batches
    double objective = 0.0;      // of `continuous`
    double rounded_objective = 0.0;
    std::vector<double> trace;   // objective after every subproblem solve (best restart)
    DualState duals;
    KktReport p3_kkt;
    KktReport p4_kkt;
    int iterations = 0;
    int init_attempts = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

/// Subproblem solve that did not meet the residual tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, Algorithm1Result partial)
        : Error(what), partial_(std::move(partial)) {}
    const Algorithm1Result& partial() const noexcept { return partial_; }

private:
    Algorithm1Result partial_;
};

/// Alternates the two subproblems from random feasible starts.
/// Throws InfeasibleError when no feasible start is found, ConvergenceError
/// when the best run ends with KKT residuals above opts.tol.
Algorithm1Result run_algorithm1(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                                const SolverOptions& opts, Rng& rng);

/// Rounds b_k to the nearest integer, or down when rounding up breaks C2/C3 at
/// the allocation's (P, f, eta). Weights are renormalized and b recomputed.
RoundAllocation round_batches(const RoundAllocation& alloc, const SystemConfig& cfg,
                              const std::vector<DeviceConfig>& devices);

}  // namespace iscc
