#include "iscc/model_core.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace iscc {

std::vector<SenseSample> sense_batch(const DeviceConfig& device, const SystemConfig& cfg,
                                     double sense_power, int batch_size,
                                     const TruthSource& truth_source, Rng& rng) {
    if (!(sense_power > 0.0)) throw DomainError("sense_batch: sense power must be positive");
    if (batch_size < 0) throw DomainError("sense_batch: negative batch size");

    const double noise_var = cfg.sense_noise_var / sense_power;
    std::vector<SenseSample> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        TruthSample t = truth_source(rng);
        SenseSample s;
        const auto dim = t.x.size();
        s.clutter = isotropic_gaussian(dim, device.clutter_var, rng);
        s.noise_scaled = isotropic_gaussian(dim, noise_var, rng);
        s.observed.resize(dim);
        for (std::size_t j = 0; j < dim; ++j)
            s.observed[j] = t.x[j] + s.clutter[j] + s.noise_scaled[j];
        s.truth = std::move(t.x);
        s.label = t.label;
        batch.push_back(std::move(s));
    }
    return batch;
}

double sensing_time(double batch_size, const SystemConfig& cfg) {
    return batch_size * cfg.sense_sample_time;
}

double sensing_energy(double sense_power, double batch_size, const SystemConfig& cfg) {
    return sense_power * batch_size * cfg.sense_sample_time;
}

double compute_time(double batch_size, double frequency, const SystemConfig& cfg) {
    if (!(frequency > 0.0)) throw DomainError("compute_time: frequency must be positive");
    return batch_size * cfg.cycles_per_sample / frequency;
}

double compute_energy(double batch_size, double frequency, const DeviceConfig& device,
                      const SystemConfig& cfg) {
    return device.cpu_constant * batch_size * cfg.cycles_per_sample * frequency * frequency;
}

double upload_time(const SystemConfig& cfg) {
    const auto blocks = (cfg.grad_dim + cfg.num_subcarriers - 1) / cfg.num_subcarriers;
    return static_cast<double>(blocks) * cfg.symbol_time;
}

double upload_energy(double eta, double batch_size, double total_batch,
                     const DeviceConfig& device, const SystemConfig& cfg) {
    if (!(total_batch > 0.0)) throw DomainError("upload_energy: total batch must be positive");
    return upload_energy_weighted(eta, batch_size / total_batch, device, cfg);
}

double upload_energy_weighted(double eta, double fraction, const DeviceConfig& device,
                              const SystemConfig& cfg) {
    if (!(device.channel_power_gain > 0.0))
        throw DomainError("upload_energy: channel power gain must be positive");
    return eta * fraction * fraction * cfg.grad_dim * cfg.symbol_time / device.channel_power_gain;
}

double tx_power_from_alignment(double eta, double channel_magnitude) {
    if (!(channel_magnitude > 0.0))
        throw DomainError("tx_power_from_alignment: channel magnitude must be positive");
    return eta / (channel_magnitude * channel_magnitude);
}

std::vector<double> ChannelRealization::aligned_tx_powers(double eta) const {
    std::vector<double> beta(magnitudes.size());
    for (std::size_t k = 0; k < magnitudes.size(); ++k)
        beta[k] = tx_power_from_alignment(eta, magnitudes[k]);
    return beta;
}

std::vector<double> aircomp_aggregate(std::span<const std::vector<double>> local_grads,
                                      std::span<const double> batch_sizes, double eta,
                                      const SystemConfig& cfg, Rng& rng) {
    if (local_grads.size() != batch_sizes.size())
        throw ShapeError("aircomp_aggregate: one batch size per local gradient required");
    const double total = std::accumulate(batch_sizes.begin(), batch_sizes.end(), 0.0);
    if (!(total > 0.0)) throw DomainError("aircomp_aggregate: total batch must be positive");
    std::vector<double> weights(batch_sizes.size());
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = batch_sizes[k] / total;
    return aircomp_aggregate_weighted(local_grads, weights, eta, cfg, rng);
}

std::vector<double> aircomp_aggregate_weighted(std::span<const std::vector<double>> local_grads,
                                               std::span<const double> weights, double eta,
                                               const SystemConfig& cfg, Rng& rng) {
    if (local_grads.size() != weights.size())
        throw ShapeError("aircomp_aggregate: one weight per local gradient required");
    const auto dim = static_cast<std::size_t>(cfg.grad_dim);
    for (const auto& g : local_grads) {
        if (g.size() != dim) throw ShapeError("aircomp_aggregate: gradient length != grad_dim");
    }
    if (cfg.channel_noise_var > 0.0 && !(eta > 0.0))
        throw DomainError("aircomp_aggregate: receive magnitude must be positive");

    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < local_grads.size(); ++k) {
        const double w = weights[k];
        if (w == 0.0) continue;
        for (std::size_t j = 0; j < dim; ++j) out[j] += w * local_grads[k][j];
    }
    // n_u / sqrt(eta): total variance delta_u^2 / eta.
    const double noise_var = cfg.channel_noise_var > 0.0 ? cfg.channel_noise_var / eta : 0.0;
    std::vector<double> noise(dim);
    fill_isotropic_gaussian(noise, noise_var, rng);
    for (std::size_t j = 0; j < dim; ++j) out[j] += noise[j];
    return out;
}

double round_latency(int k, const RoundAllocation& alloc, const SystemConfig& cfg) {
    const double b = alloc.batch_sizes.at(k);
    const double t_c = b > 0.0 ? compute_time(b, alloc.frequencies.at(k), cfg) : 0.0;
    return sensing_time(b, cfg) + t_c + upload_time(cfg);
}

double round_energy(int k, const RoundAllocation& alloc, const std::vector<DeviceConfig>& devices,
                    const SystemConfig& cfg) {
    const auto& dev = devices.at(k);
    const double b = alloc.batch_sizes.at(k);
    return sensing_energy(alloc.sense_powers.at(k), b, cfg) +
           compute_energy(b, alloc.frequencies.at(k), dev, cfg) +
           upload_energy_weighted(alloc.receive_magnitude_sq, alloc.batch_fractions.at(k), dev, cfg);
}

ConstraintReport check_constraints(const RoundAllocation& alloc,
                                   const std::vector<DeviceConfig>& devices,
                                   const SystemConfig& cfg, double rel_tol) {
    ConstraintReport r;
    const int n = static_cast<int>(alloc.size());
    if (static_cast<int>(devices.size()) != n) throw ShapeError("check_constraints: K mismatch");
    r.alpha_sum = std::accumulate(alloc.batch_fractions.begin(), alloc.batch_fractions.end(), 0.0);
    if (std::abs(r.alpha_sum - 1.0) > std::max(rel_tol, 1e-12))
        r.violations.push_back("C1: batch fractions sum to " + std::to_string(r.alpha_sum));
    for (int k = 0; k < n; ++k) {
        const double lat = round_latency(k, alloc, cfg);
        const double en = round_energy(k, alloc, devices, cfg);
        r.latency.push_back(lat);
        r.energy.push_back(en);
        r.latency_slack.push_back(cfg.latency_budget - lat);
        r.energy_slack.push_back(devices[k].energy_budget - en);
        if (lat > cfg.latency_budget * (1.0 + rel_tol))
            r.violations.push_back("C2: device " + std::to_string(k) + " latency " +
                                   std::to_string(lat) + " s exceeds budget");
        if (en > devices[k].energy_budget * (1.0 + rel_tol))
            r.violations.push_back("C3: device " + std::to_string(k) + " energy " +
                                   std::to_string(en) + " J exceeds budget");
    }
    return r;
}

}  // namespace iscc
