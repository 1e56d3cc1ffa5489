#include "iscc/types.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace iscc {

namespace {

std::string join_violations(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
}

void require(std::vector<std::string>& out, bool ok, const std::string& msg) {
    if (!ok) out.push_back(msg);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }
bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

std::vector<std::string> SystemConfig::violations() const {
    std::vector<std::string> v;
    require(v, num_devices >= 1, "system.num_devices must be >= 1");
    require(v, grad_dim >= 1, "system.grad_dim must be >= 1");
    require(v, num_subcarriers >= 1, "system.num_subcarriers must be >= 1");
    require(v, finite_positive(sense_sample_time), "system.sense_sample_time must be > 0");
    require(v, finite_positive(symbol_time), "system.symbol_time must be > 0");
    require(v, finite_positive(cycles_per_sample), "system.cycles_per_sample must be > 0");
    require(v, finite_positive(latency_budget), "system.latency_budget must be > 0");
    require(v, finite_nonneg(sense_noise_var), "system.sense_noise_var must be >= 0");
    require(v, finite_nonneg(channel_noise_var), "system.channel_noise_var must be >= 0");
    require(v, finite_nonneg(grad_var_bound), "system.grad_var_bound must be >= 0");
    require(v, finite_nonneg(hessian_bound), "system.hessian_bound must be >= 0");
    require(v, finite_positive(smoothness), "system.smoothness must be > 0");
    require(v, total_rounds >= 1, "system.total_rounds must be >= 1");
    if (grad_dim >= 1 && num_subcarriers >= 1 && symbol_time > 0.0) {
        const double blocks = std::ceil(static_cast<double>(grad_dim) / num_subcarriers);
        require(v, latency_budget > blocks * symbol_time,
                "system.latency_budget must exceed the upload time ceil(N/M)*symbol_time");
    }
    return v;
}

void SystemConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ValidationError(std::move(v));
}

std::vector<std::string> DeviceConfig::violations(int index) const {
    std::vector<std::string> v;
    const std::string p = "devices[" + std::to_string(index) + "].";
    require(v, finite_positive(channel_power_gain), p + "channel_power_gain must be > 0");
    require(v, finite_nonneg(energy_budget), p + "energy_budget must be >= 0");
    require(v, finite_nonneg(cpu_constant), p + "cpu_constant must be >= 0");
    require(v, finite_positive(max_frequency), p + "max_frequency must be > 0");
    require(v, finite_positive(max_sense_power), p + "max_sense_power must be > 0");
    require(v, finite_nonneg(clutter_var), p + "clutter_var must be >= 0");
    return v;
}

std::vector<std::string> validation_errors(const SystemConfig& cfg,
                                           const std::vector<DeviceConfig>& devices) {
    auto v = cfg.violations();
    if (static_cast<int>(devices.size()) != cfg.num_devices) {
        v.push_back("device list has " + std::to_string(devices.size()) +
                    " entries but system.num_devices = " + std::to_string(cfg.num_devices));
    }
    for (std::size_t k = 0; k < devices.size(); ++k) {
        auto dv = devices[k].violations(static_cast<int>(k));
        v.insert(v.end(), dv.begin(), dv.end());
    }
    return v;
}

void validate(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices) {
    auto v = validation_errors(cfg, devices);
    if (!v.empty()) throw ValidationError(std::move(v));
}

RoundAllocation RoundAllocation::from_batches(std::vector<double> batch_sizes,
                                              std::vector<double> sense_powers,
                                              std::vector<double> frequencies, double eta) {
    RoundAllocation a;
    a.total_batch = std::accumulate(batch_sizes.begin(), batch_sizes.end(), 0.0);
    a.batch_fractions.resize(batch_sizes.size(), 0.0);
    if (a.total_batch > 0.0) {
        for (std::size_t k = 0; k < batch_sizes.size(); ++k)
            a.batch_fractions[k] = batch_sizes[k] / a.total_batch;
    }
    a.batch_sizes = std::move(batch_sizes);
    a.sense_powers = std::move(sense_powers);
    a.frequencies = std::move(frequencies);
    a.receive_magnitude_sq = eta;
    return a;
}

std::vector<std::string> RoundAllocation::consistency_errors(double tol) const {
    std::vector<std::string> v;
    const auto k = batch_sizes.size();
    if (batch_fractions.size() != k || sense_powers.size() != k || frequencies.size() != k) {
        v.push_back("allocation vectors have mismatched lengths");
        return v;
    }
    const double alpha_sum = std::accumulate(batch_fractions.begin(), batch_fractions.end(), 0.0);
    const double b_sum = std::accumulate(batch_sizes.begin(), batch_sizes.end(), 0.0);
    if (std::abs(alpha_sum - 1.0) > tol) v.push_back("batch fractions do not sum to 1");
    if (std::abs(total_batch - b_sum) > tol * std::max(1.0, b_sum))
        v.push_back("total_batch differs from the sum of batch sizes");
    for (std::size_t i = 0; i < k; ++i) {
        if (batch_sizes[i] < 0.0) v.push_back("negative batch size");
        if (batch_fractions[i] < 0.0 || batch_fractions[i] > 1.0 + tol)
            v.push_back("batch fraction outside [0, 1]");
    }
    return v;
}

}  // namespace iscc
