#include "iscc/grid_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iscc/bounds.hpp"
#include "iscc/model_core.hpp"

namespace iscc {

double GridAxis::value(int i) const {
    if (points <= 1 || i <= 0) return lo;
    if (i >= points - 1) return hi;
    const double t = static_cast<double>(i) / static_cast<double>(points - 1);
    if (log_scale) return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * t);
    return lo + (hi - lo) * t;
}

GridSpec GridSpec::refined() const {
    GridSpec out = *this;
    auto refine = [](GridAxis& a) { a.points = 2 * a.points - 1; };
    for (auto* axes : {&out.batch, &out.power, &out.frequency, &out.weights})
        for (auto& a : *axes) refine(a);
    refine(out.eta);
    return out;
}

std::size_t GridSpec::size() const {
    std::size_t n = static_cast<std::size_t>(eta.points);
    for (const auto* axes : {&batch, &power, &frequency, &weights})
        for (const auto& a : *axes) n *= static_cast<std::size_t>(a.points);
    return n;
}

namespace {

// Axis order (slowest first): batches, weights, powers, frequencies, eta.
std::vector<GridAxis> flatten(const GridSpec& s) {
    std::vector<GridAxis> axes;
    for (const auto* group : {&s.batch, &s.weights, &s.power, &s.frequency})
        axes.insert(axes.end(), group->begin(), group->end());
    axes.push_back(s.eta);
    return axes;
}

GridSpec unflatten(const GridSpec& shape, const std::vector<GridAxis>& axes) {
    GridSpec s = shape;
    std::size_t i = 0;
    for (auto* group : {&s.batch, &s.weights, &s.power, &s.frequency})
        for (auto& a : *group) a = axes[i++];
    s.eta = axes[i];
    return s;
}

struct Search {
    GridResult result;
    std::vector<int> best_index;
};

Search search(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
              const GridSpec& spec) {
    const std::size_t k_dev = devices.size();
    if (spec.batch.size() != k_dev || spec.power.size() != k_dev ||
        spec.frequency.size() != k_dev)
        throw ShapeError("grid_oracle: one batch, power and frequency axis per device required");
    const bool free_weights = !spec.weights.empty();
    if (free_weights && spec.weights.size() + 1 != k_dev)
        throw ShapeError("grid_oracle: K-1 weight axes required");

    const auto axes = flatten(spec);
    std::vector<std::vector<double>> values(axes.size());
    for (std::size_t a = 0; a < axes.size(); ++a) {
        if (axes[a].points <= 0) throw DomainError("grid_oracle: axis with no points");
        for (int i = 0; i < axes[a].points; ++i) values[a].push_back(axes[a].value(i));
    }
    const std::size_t w0 = k_dev, p0 = w0 + spec.weights.size(), f0 = p0 + k_dev, e0 = f0 + k_dev;

    const double t_u = upload_time(cfg);
    std::vector<double> upload_coef(k_dev);
    for (std::size_t k = 0; k < k_dev; ++k)
        upload_coef[k] = cfg.grad_dim * cfg.symbol_time / devices[k].channel_power_gain;

    Search out;
    auto& res = out.result;
    res.objective = std::numeric_limits<double>::infinity();
    std::vector<int> idx(axes.size(), 0);
    std::vector<double> b(k_dev), alpha(k_dev), p(k_dev), f(k_dev);
    while (true) {
        ++res.evaluated;
        double eta = values[e0][idx[e0]];
        double b_sum = 0.0;
        for (std::size_t k = 0; k < k_dev; ++k) {
            b[k] = values[k][idx[k]];
            p[k] = values[p0 + k][idx[p0 + k]];
            f[k] = values[f0 + k][idx[f0 + k]];
            b_sum += b[k];
        }
        bool ok = b_sum > 0.0;
        if (free_weights) {
            double rest = 1.0;
            for (std::size_t k = 0; k + 1 < k_dev; ++k) {
                alpha[k] = values[w0 + k][idx[w0 + k]];
                rest -= alpha[k];
            }
            alpha[k_dev - 1] = rest;
            ok = ok && rest >= -1e-12;
            if (rest < 0.0) alpha[k_dev - 1] = 0.0;
        } else if (ok) {
            for (std::size_t k = 0; k < k_dev; ++k) alpha[k] = b[k] / b_sum;
        }
        double obj = cfg.channel_noise_var > 0.0 ? cfg.channel_noise_var / eta : 0.0;
        for (std::size_t k = 0; ok && k < k_dev; ++k) {
            const auto& d = devices[k];
            if (alpha[k] > 0.0 && b[k] <= 0.0) { ok = false; break; }
            const double lat = b[k] * (cfg.sense_sample_time + cfg.cycles_per_sample / f[k]) + t_u;
            const double en = b[k] * (p[k] * cfg.sense_sample_time +
                                      d.cpu_constant * cfg.cycles_per_sample * f[k] * f[k]) +
                              eta * alpha[k] * alpha[k] * upload_coef[k];
            if (lat > cfg.latency_budget || en > d.energy_budget) { ok = false; break; }
            if (alpha[k] > 0.0)
                obj += alpha[k] * alpha[k] / b[k] * sample_error_bracket(cfg, d, p[k]);
        }
        if (ok) {
            ++res.feasible;
            if (obj < res.objective) {
                res.objective = obj;
                res.found = true;
                out.best_index = idx;
                res.best.batch_sizes = b;
                res.best.batch_fractions = alpha;
                res.best.total_batch = b_sum;
                res.best.sense_powers = p;
                res.best.frequencies = f;
                res.best.receive_magnitude_sq = eta;
            }
        }
        // Mixed-radix increment, last axis fastest.
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++idx[a] < axes[a].points) break;
            idx[a] = 0;
            if (a == 0) return out;
        }
    }
}

}  // namespace

GridResult grid_oracle(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                       const GridSpec& spec) {
    return search(cfg, devices, spec).result;
}

GridResult grid_oracle_zoom(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                            const GridSpec& spec, int levels) {
    auto current = search(cfg, devices, spec);
    const auto outer = flatten(spec);
    GridSpec shape = spec;
    std::size_t evaluated = current.result.evaluated;
    for (int level = 0; level < levels && current.result.found; ++level) {
        auto axes = flatten(shape);
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const int i = current.best_index[a];
            const int n = axes[a].points;
            GridAxis z = axes[a];
            z.lo = std::max(outer[a].lo, axes[a].value(std::max(i - 1, 0)));
            z.hi = std::min(outer[a].hi, axes[a].value(std::min(i + 1, n - 1)));
            axes[a] = z;
        }
        shape = unflatten(spec, axes);
        auto next = search(cfg, devices, shape);
        evaluated += next.result.evaluated;
        // The incumbent stays a candidate: zoom windows need not contain it bit-exactly.
        if (next.result.found && next.result.objective < current.result.objective) {
            current = std::move(next);
        } else {
            // Keep the incumbent but continue zooming around the new window's best.
            if (!next.result.found) break;
            current.best_index = next.best_index;
        }
    }
    current.result.evaluated = evaluated;
    return current.result;
}

GridSpec default_grid(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                      int points, bool free_weights, double eta_log10_min, double eta_log10_max,
                      double min_batch) {
    GridSpec s;
    const double window = cfg.latency_budget - upload_time(cfg);
    for (const auto& d : devices) {
        const double b_max = window / (cfg.sense_sample_time + cfg.cycles_per_sample / d.max_frequency);
        s.batch.push_back({min_batch, std::max(min_batch, b_max), points, false});
        s.power.push_back({0.1 * d.max_sense_power, d.max_sense_power, points, false});
        s.frequency.push_back({0.1 * d.max_frequency, d.max_frequency, points, false});
    }
    s.eta = {std::pow(10.0, eta_log10_min), std::pow(10.0, eta_log10_max), points, true};
    if (free_weights)
        for (std::size_t k = 0; k + 1 < devices.size(); ++k) s.weights.push_back({0.0, 1.0, points, false});
    return s;
}

}  // namespace iscc
