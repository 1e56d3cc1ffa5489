#include "iscc/bounds.hpp"

#include <cmath>
#include <numeric>

namespace iscc {

double sample_error_bracket(const SystemConfig& cfg, const DeviceConfig& device,
                            double sense_power) {
    if (!(sense_power > 0.0)) throw DomainError("sense power must be positive");
    const double a2 = cfg.hessian_bound * cfg.hessian_bound;
    return cfg.grad_var_bound + a2 * (device.clutter_var + cfg.sense_noise_var / sense_power);
}

namespace {

double channel_term(const SystemConfig& cfg, double eta) {
    if (!(eta > 0.0)) throw DomainError("receive magnitude eta must be positive");
    return cfg.channel_noise_var / eta;
}

void check_shapes(const BoundInputs& in) {
    const auto k = in.devices.size();
    if (in.alloc.batch_sizes.size() != k || in.alloc.sense_powers.size() != k ||
        in.alloc.batch_fractions.size() != k)
        throw ShapeError("allocation length does not match the device list");
}

}  // namespace

double variance_bound(const BoundInputs& in) {
    check_shapes(in);
    const auto& b_k = in.alloc.batch_sizes;
    const double b = std::accumulate(b_k.begin(), b_k.end(), 0.0);
    if (!(b > 0.0)) throw DomainError("variance_bound: total batch must be positive");
    double sum = 0.0;
    for (std::size_t k = 0; k < b_k.size(); ++k) {
        if (b_k[k] == 0.0) continue;
        sum += b_k[k] / (b * b) *
               sample_error_bracket(in.cfg, in.devices[k], in.alloc.sense_powers[k]);
    }
    return sum + channel_term(in.cfg, in.alloc.receive_magnitude_sq);
}

double objective_p2(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                    const RoundAllocation& alloc) {
    double sum = channel_term(cfg, alloc.receive_magnitude_sq);
    for (std::size_t k = 0; k < devices.size(); ++k) {
        const double a = alloc.batch_fractions.at(k);
        if (a == 0.0) continue;
        const double b = alloc.batch_sizes.at(k);
        if (!(b > 0.0)) throw DomainError("objective_p2: positive weight on an empty batch");
        sum += a * a / b * sample_error_bracket(cfg, devices[k], alloc.sense_powers.at(k));
    }
    return sum;
}

double objective_p2(const BoundInputs& in) {
    check_shapes(in);
    return objective_p2(in.cfg, in.devices, in.alloc);
}

double bound_learning_rate(const SystemConfig& cfg) {
    return 1.0 / (std::sqrt(static_cast<double>(cfg.total_rounds)) * cfg.smoothness);
}

double per_round_degradation_lb(const BoundInputs& in, std::optional<double> learning_rate) {
    const double lr = bound_learning_rate(in.cfg);
    if (learning_rate && std::abs(*learning_rate - lr) > 1e-12 * lr) {
        throw ValidationError({"learning rate " + std::to_string(*learning_rate) +
                               " differs from 1/(sqrt(T) L) = " + std::to_string(lr) +
                               " assumed by the per-round bound"});
    }
    const double t = static_cast<double>(in.cfg.total_rounds);
    const double l = in.cfg.smoothness;
    const double half = 1.0 / (2.0 * t * l);
    return (lr - half) * in.true_grad_sq_norm - half * variance_bound(in);
}

ConvergenceBound convergence_bound_from_terms(double smoothness, double initial_gap,
                                              std::vector<double> terms) {
    if (terms.empty()) throw DomainError("convergence bound needs at least one round");
    const double t = static_cast<double>(terms.size());
    const double root = std::sqrt(t);
    // Neumaier summation keeps constant-term schedules exact to ~1 ulp for T up to 1e6+.
    double sum = 0.0, comp = 0.0;
    for (double x : terms) {
        const double s = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - s) + x : (x - s) + sum;
        sum = s;
    }
    sum += comp;
    ConvergenceBound out;
    out.g_t_value = 2.0 * smoothness / root * initial_gap + sum / (root * t);
    out.per_round_noise_terms = std::move(terms);
    return out;
}

ConvergenceBound convergence_bound_gt(const SystemConfig& cfg,
                                      const std::vector<DeviceConfig>& devices,
                                      std::span<const RoundAllocation> schedule,
                                      double initial_gap) {
    std::vector<double> terms;
    terms.reserve(schedule.size());
    BoundInputs in{cfg, devices, {}, 0.0, initial_gap};
    for (const auto& a : schedule) {
        in.alloc = a;
        terms.push_back(variance_bound(in));
    }
    return convergence_bound_from_terms(cfg.smoothness, initial_gap, std::move(terms));
}

}  // namespace iscc
