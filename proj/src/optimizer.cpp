#include "iscc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "iscc/bounds.hpp"
#include "iscc/model_core.hpp"

namespace iscc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double rel(double g, double scale) { return scale > 0.0 ? std::abs(g) / scale : 0.0; }

double sum_of(const PerDevice& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_sizes(std::size_t k, std::initializer_list<const PerDevice*> vs) {
    for (const auto* v : vs)
        if (v->size() != k) throw ShapeError("per-device vector length does not match K");
}

double round_objective(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                       const PerDevice& alpha, const PerDevice& batch, const PerDevice& power,
                       double eta) {
    double sum = cfg.channel_noise_var > 0.0 ? cfg.channel_noise_var / eta : 0.0;
    for (std::size_t k = 0; k < devices.size(); ++k) {
        if (alpha[k] == 0.0) continue;
        sum += alpha[k] * alpha[k] / batch[k] * sample_error_bracket(cfg, devices[k], power[k]);
    }
    return sum;
}

// Per-device data of the batch-size subproblem with (P, f, eta) fixed.
// b*(alpha) = min(b_cap, (E - q alpha^2) / c); the reduced cost
// alpha^2 M / b*(alpha) is convex in alpha with a kink where both constraints bind.
struct BatchCurve {
    bool active = false;
    double a = 0.0;       // seconds per sample
    double c = 0.0;       // joules per sample
    double b_cap = 0.0;   // latency-limited batch
    double b_min = 0.0;
    double q = 0.0;       // upload energy per unit alpha^2
    double m = 0.0;       // per-sample error bracket
    double e = 0.0;       // energy budget
    double alpha_max = 0.0;
    double alpha_kink = 0.0;

    double alpha_at(double b) const { return std::sqrt(std::max(0.0, e - c * b) / q); }

    double batch(double alpha) const {
        if (alpha <= alpha_kink) return b_cap;
        return std::clamp((e - q * alpha * alpha) / c, b_min, b_cap);
    }
    // Marginal cost on the energy-limited branch, parametrized by the batch:
    // d/dalpha [alpha^2 M / b] with b = (E - q alpha^2) / c.
    double energy_slope(double b) const {
        const double al = alpha_at(b);
        return 2.0 * al * m / b + 2.0 * q * al * al * al * m / (b * b * c);
    }

    // Weight (and batch) whose marginal cost equals the price p.
    WeightAndBatch at_price(double p, int iters) const {
        if (!active || p <= 0.0) return {};
        if (m == 0.0) return {alpha_max, b_min};
        const double left = p * b_cap / (2.0 * m);
        if (left <= alpha_kink) return {left, b_cap};
        const double b_top = alpha_kink > 0.0 ? b_cap : std::min(b_cap, e / c);
        if (p <= energy_slope(b_top)) return {alpha_kink, b_top};
        if (p >= energy_slope(b_min)) return {alpha_max, b_min};
        double lo = b_min, hi = b_top;
        for (int i = 0; i < iters; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            (energy_slope(mid) > p ? lo : hi) = mid;
        }
        const double b = 0.5 * (lo + hi);
        return {std::min(alpha_max, alpha_at(b)), b};
    }
};

std::vector<BatchCurve> batch_curves(const SystemConfig& cfg,
                                     const std::vector<DeviceConfig>& devices,
                                     const PerDevice& power, const PerDevice& freq, double eta,
                                     double min_batch) {
    const double window = cfg.latency_budget - upload_time(cfg);
    std::vector<BatchCurve> out(devices.size());
    for (std::size_t k = 0; k < devices.size(); ++k) {
        const auto& d = devices[k];
        const double f = freq[k];
        if (!(power[k] > 0.0) || !(f > 0.0))
            throw DomainError("sense power and frequency must be positive");
        auto& cv = out[k];
        cv.a = cfg.sense_sample_time + cfg.cycles_per_sample / f;
        cv.b_cap = window / cv.a;
        cv.c = power[k] * cfg.sense_sample_time + d.cpu_constant * cfg.cycles_per_sample * f * f;
        cv.b_min = min_batch;
        cv.q = eta * cfg.grad_dim * cfg.symbol_time / d.channel_power_gain;
        cv.m = sample_error_bracket(cfg, d, power[k]);
        cv.e = d.energy_budget;
        if (!(cv.b_cap >= min_batch)) continue;
        const double margin = cv.e - cv.c * min_batch;
        cv.active = margin > 0.0;
        if (!cv.active) continue;
        cv.alpha_max = std::sqrt(margin / cv.q);
        cv.alpha_kink = std::min(cv.alpha_max, cv.alpha_at(cv.b_cap));
    }
    return out;
}

struct BatchSolve {
    PerDevice alpha, batch;
    double price = 0.0;
    int iterations = 0;
};

// Price search on sum(alpha) = 1 over independent convex per-device costs.
BatchSolve solve_batches(const std::vector<BatchCurve>& curves, const SolverOptions& opts,
                         const std::optional<DualState>& warm) {
    const auto n = curves.size();
    double cap = 0.0, p_top = 0.0, m_total = 0.0;
    for (const auto& cv : curves) {
        if (!cv.active) continue;
        cap += cv.alpha_max;
        m_total += cv.m;
        p_top = std::max(p_top, cv.energy_slope(cv.b_min));
    }
    if (cap < 1.0)
        throw InfeasibleError("batch-size subproblem infeasible: weights can reach at most " +
                              std::to_string(cap));

    BatchSolve res;
    res.alpha.assign(n, 0.0);
    res.batch.assign(n, 0.0);
    const int iters = opts.max_iters;
    if (m_total == 0.0) {
        // Flat objective: any feasible split is optimal.
        for (std::size_t k = 0; k < n; ++k) res.alpha[k] = curves[k].alpha_max / cap;
    } else {
        auto total = [&](double p) {
            double s = 0.0;
            for (const auto& cv : curves) s += cv.at_price(p, iters).alpha;
            return s;
        };
        double hi = (warm && warm->mu < 0.0) ? std::min(-warm->mu, p_top) : p_top;
        while (total(hi) < 1.0 && hi < p_top) hi = std::min(2.0 * hi, p_top);
        double lo = hi;
        int guard = 0;
        while (total(lo) >= 1.0 && guard++ < 4000) { hi = lo; lo *= 0.5; }
        for (int i = 0; i < iters && hi > lo * (1.0 + 4.0 * std::numeric_limits<double>::epsilon()); ++i) {
            ++res.iterations;
            const double mid = std::sqrt(lo * hi);
            (total(mid) < 1.0 ? lo : hi) = mid;
        }
        res.price = hi;
        for (std::size_t k = 0; k < n; ++k) res.alpha[k] = curves[k].at_price(hi, iters).alpha;
        const double s = sum_of(res.alpha);
        for (auto& a : res.alpha) a /= s;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (!curves[k].active || res.alpha[k] == 0.0) {
            res.alpha[k] = 0.0;
            continue;
        }
        res.batch[k] = curves[k].batch(res.alpha[k]);
    }
    return res;
}

}  // namespace

std::vector<std::string> SolverOptions::violations() const {
    std::vector<std::string> v;
    if (max_iters <= 0) v.push_back("solver.max_iters must be positive");
    if (!(tol > 0.0)) v.push_back("solver.tol must be positive");
    if (!(alt_tol > 0.0)) v.push_back("solver.alt_tol must be positive");
    if (alt_max_iters <= 0) v.push_back("solver.alt_max_iters must be positive");
    if (!(lambda_floor > 0.0)) v.push_back("solver.lambda_floor must be positive");
    if (!(min_batch > 0.0)) v.push_back("solver.min_batch must be positive");
    if (init_retries <= 0) v.push_back("solver.init_retries must be positive");
    if (!(eta_log10_min < eta_log10_max)) v.push_back("solver.eta_log10_min must be below eta_log10_max");
    if (restarts <= 0) v.push_back("solver.restarts must be positive");
    if (!(power_floor_fraction > 0.0 && power_floor_fraction <= 1.0))
        v.push_back("solver.power_floor_fraction must lie in (0, 1]");
    if (!(eta_floor_fraction > 0.0 && eta_floor_fraction <= 1.0))
        v.push_back("solver.eta_floor_fraction must lie in (0, 1]");
    return v;
}

double KktReport::max_residual() const noexcept {
    return std::max({stationarity, complementarity, primal, dual_sign});
}

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

FeasibilityResult check_feasibility(const SystemConfig& cfg,
                                    const std::vector<DeviceConfig>& devices,
                                    const PerDevice& sense_powers, const PerDevice& frequencies,
                                    double eta, double min_batch) {
    check_sizes(devices.size(), {&sense_powers, &frequencies});
    if (!(eta > 0.0)) throw DomainError("check_feasibility: eta must be positive");
    FeasibilityResult r;
    r.alpha_max.assign(devices.size(), 0.0);
    for (std::size_t k = 0; k < devices.size(); ++k) {
        const auto& d = devices[k];
        const double lat = sensing_time(min_batch, cfg) +
                           compute_time(min_batch, frequencies[k], cfg) + upload_time(cfg);
        if (lat > cfg.latency_budget) {
            r.latency_blocked.push_back(static_cast<int>(k));
            continue;
        }
        const double margin = d.energy_budget -
                              sensing_energy(sense_powers[k], min_batch, cfg) -
                              compute_energy(min_batch, frequencies[k], d, cfg);
        r.alpha_max[k] = std::sqrt(d.channel_power_gain * std::max(0.0, margin) /
                                   (eta * cfg.grad_dim * cfg.symbol_time));
    }
    r.max_alpha_sum = sum_of(r.alpha_max);
    r.feasible = r.max_alpha_sum >= 1.0;
    return r;
}

// ---------------------------------------------------------------------------
// Batch-size subproblem
// ---------------------------------------------------------------------------

P3Intermediates p3_intermediates(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                                 const PerDevice& sense_powers, const PerDevice& frequencies,
                                 const DualState& duals) {
    const auto n = devices.size();
    check_sizes(n, {&sense_powers, &frequencies, &duals.gamma, &duals.lambda});
    P3Intermediates out{PerDevice(n), PerDevice(n)};
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        const double f = frequencies[k];
        out.j[k] = duals.gamma[k] * (cfg.sense_sample_time + cfg.cycles_per_sample / f) +
                   duals.lambda[k] * (sense_powers[k] * cfg.sense_sample_time +
                                      d.cpu_constant * cfg.cycles_per_sample * f * f);
        out.m[k] = sample_error_bracket(cfg, d, sense_powers[k]);
    }
    return out;
}

WeightAndBatch weight_batch_closed_form(const SystemConfig& cfg, const DeviceConfig& device, double j,
                             double m, double mu, double lambda, double eta,
                             double lambda_floor) {
    if (!(j > 0.0)) throw DomainError("weight_batch_closed_form: J must be positive");
    const double lam = std::max(lambda, lambda_floor);
    const double coef = device.channel_power_gain / (2.0 * lam * eta * cfg.grad_dim * cfg.symbol_time);
    WeightAndBatch out;
    out.alpha = std::max(0.0, (-mu - 2.0 * std::sqrt(j * m)) * coef);
    out.batch = std::max(0.0, coef * (-mu * std::sqrt(m / j) - 2.0 * m));
    return out;
}

P3Result solve_p3(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& sense_powers, const PerDevice& frequencies, double eta,
                  const SolverOptions& opts, const std::optional<DualState>& warm) {
    const auto n = devices.size();
    check_sizes(n, {&sense_powers, &frequencies});
    if (!(eta > 0.0)) throw DomainError("solve_p3: eta must be positive");
    const auto curves = batch_curves(cfg, devices, sense_powers, frequencies, eta, opts.min_batch);
    auto sol = solve_batches(curves, opts, warm);

    P3Result res;
    res.alpha = std::move(sol.alpha);
    res.batch = std::move(sol.batch);
    res.iterations = sol.iterations;
    const double price = sol.price;
    auto& du = res.duals;
    du.mu = -price;
    du.gamma.assign(n, 0.0);
    du.lambda.assign(n, 0.0);
    du.phi.assign(n, 0.0);
    du.psi.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& cv = curves[k];
        const double a = res.alpha[k], b = res.batch[k];
        if (a == 0.0) continue;
        const bool lat_tight = b >= cv.b_cap * (1.0 - 1e-12);
        const bool en_tight = cv.e - cv.c * b - cv.q * a * a <= 1e-9 * cv.e;
        if (en_tight) du.lambda[k] = std::max(0.0, (price - 2.0 * a * cv.m / b) / (2.0 * cv.q * a));
        if (lat_tight)
            du.gamma[k] = std::max(0.0, (a * a * cv.m / (b * b) - du.lambda[k] * cv.c) / cv.a);
    }
    res.objective = round_objective(cfg, devices, res.alpha, res.batch, sense_powers, eta);
    res.kkt = p3_kkt(cfg, devices, sense_powers, frequencies, eta, res.alpha, res.batch, du,
                     opts.min_batch);
    return res;
}

KktReport p3_kkt(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                 const PerDevice& sense_powers, const PerDevice& frequencies, double eta,
                 const PerDevice& alpha, const PerDevice& batch, const DualState& duals,
                 double min_batch) {
    const auto n = devices.size();
    check_sizes(n, {&sense_powers, &frequencies, &alpha, &batch, &duals.gamma, &duals.lambda});
    KktReport r;
    r.primal = std::abs(sum_of(alpha) - 1.0);
    const double t_u = upload_time(cfg);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        const double a = alpha[k], b = batch[k], p = sense_powers[k], f = frequencies[k];
        const double gamma = duals.gamma[k], lambda = duals.lambda[k];
        r.dual_sign = std::max({r.dual_sign, -gamma, -lambda});
        if (a == 0.0 && b == 0.0) continue;

        const double sec_per = cfg.sense_sample_time + cfg.cycles_per_sample / f;
        const double j_per = p * cfg.sense_sample_time + d.cpu_constant * cfg.cycles_per_sample * f * f;
        const double q = eta * cfg.grad_dim * cfg.symbol_time / d.channel_power_gain;
        const double m = sample_error_bracket(cfg, d, p);
        const double lat = b * sec_per + t_u;
        const double en = b * j_per + q * a * a;

        r.primal = std::max({r.primal, (lat - cfg.latency_budget) / cfg.latency_budget,
                             (en - d.energy_budget) / d.energy_budget, (min_batch - b) / min_batch});

        // d/db: -alpha^2 M / b^2 + J (a lower-bound multiplier absorbs any surplus at b_min).
        const double cost_b = a * a * m / (b * b);
        const double j = gamma * sec_per + lambda * j_per;
        const double g_b = j - cost_b;
        const bool at_min = b <= min_batch * (1.0 + 1e-9);
        const double sb = std::max(cost_b, j);
        r.stationarity = std::max(r.stationarity, at_min ? rel(std::min(0.0, g_b), sb) : rel(g_b, sb));

        // d/dalpha: 2 alpha M / b + mu + 2 lambda q alpha.
        const double g_a = 2.0 * a * m / b + duals.mu + 2.0 * lambda * q * a;
        r.stationarity = std::max(r.stationarity, rel(g_a, std::max(2.0 * a * m / b, std::abs(duals.mu))));

        if (gamma > 0.0)
            r.complementarity = std::max(r.complementarity, std::abs(lat - cfg.latency_budget) / cfg.latency_budget);
        if (lambda > 0.0)
            r.complementarity = std::max(r.complementarity, std::abs(en - d.energy_budget) / d.energy_budget);
    }
    if (!(r.dual_sign > 0.0)) r.dual_sign = 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Resource subproblem
// ---------------------------------------------------------------------------

double closed_form_power(const SystemConfig& cfg, double alpha, double batch, double psi) {
    if (!(psi > 0.0) || !(batch > 0.0)) throw DomainError("closed_form_power: psi and batch must be positive");
    return alpha * cfg.hessian_bound * std::sqrt(cfg.sense_noise_var) /
           (batch * std::sqrt(psi * cfg.sense_sample_time));
}

double closed_form_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& alpha, const PerDevice& psi) {
    check_sizes(devices.size(), {&alpha, &psi});
    double s = 0.0;
    for (std::size_t k = 0; k < devices.size(); ++k)
        s += psi[k] * alpha[k] * alpha[k] * cfg.grad_dim * cfg.symbol_time / devices[k].channel_power_gain;
    if (!(s > 0.0)) throw DomainError("closed_form_eta: no active energy multiplier");
    return std::sqrt(cfg.channel_noise_var / s);
}

double latency_tight_frequency(const SystemConfig& cfg, double batch, int device) {
    const double room = cfg.latency_budget - upload_time(cfg) - sensing_time(batch, cfg);
    if (!(room > 0.0))
        throw InfeasibleError("sensing and upload alone exhaust the latency budget for batch " +
                                  std::to_string(batch),
                              device);
    return batch * cfg.cycles_per_sample / room;
}

P4Result solve_p4(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                  const PerDevice& alpha, const PerDevice& batch, const SolverOptions& opts,
                  const std::optional<DualState>& /*warm: the 1-D search needs no start point*/) {
    const auto n = devices.size();
    check_sizes(n, {&alpha, &batch});
    P4Result res;
    res.sense_powers.assign(n, 0.0);
    res.frequencies.assign(n, 0.0);

    struct Row {
        bool active = false;
        double s = 0.0;        // b tau_s
        double e_left = 0.0;   // energy left after computing
        double w = 0.0;        // alpha^2 A^2 delta_s^2 / b
        double qp = 0.0;       // alpha^2 N tau_u / H
        double pmax = 0.0;
        double floor = 0.0;
        double power(double eta) const {
            if (w == 0.0) return floor;
            return std::min(pmax, (e_left - eta * qp) / s);
        }
    };
    std::vector<Row> rows(n);
    double eta_max = kInf;
    int limiting = -1;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        auto& row = rows[k];
        row.pmax = d.max_sense_power;
        if (alpha[k] == 0.0) {
            res.sense_powers[k] = d.max_sense_power;
            res.frequencies[k] = d.max_frequency;
            continue;
        }
        if (!(batch[k] > 0.0)) throw DomainError("solve_p4: positive weight on an empty batch");
        const int idx = static_cast<int>(k);
        double f = latency_tight_frequency(cfg, batch[k], idx);
        if (f > d.max_frequency * (1.0 + 1e-12))
            throw InfeasibleError("device " + std::to_string(k) + " needs " + std::to_string(f) +
                                      " Hz to meet the latency budget, above its maximum",
                                  idx);
        f = std::min(f, d.max_frequency);
        res.frequencies[k] = f;
        row.active = true;
        row.s = batch[k] * cfg.sense_sample_time;
        row.e_left = d.energy_budget - compute_energy(batch[k], f, d, cfg);
        row.w = alpha[k] * alpha[k] * cfg.hessian_bound * cfg.hessian_bound * cfg.sense_noise_var / batch[k];
        row.qp = alpha[k] * alpha[k] * cfg.grad_dim * cfg.symbol_time / d.channel_power_gain;
        row.floor = opts.power_floor_fraction * d.max_sense_power;
        const double cap = row.w == 0.0 ? (row.e_left - row.floor * row.s) / row.qp : row.e_left / row.qp;
        if (cap < eta_max) { eta_max = cap; limiting = idx; }
    }
    if (!(eta_max > 0.0))
        throw InfeasibleError("no energy left for upload on device " + std::to_string(limiting), limiting);

    const double noise = cfg.channel_noise_var;
    auto slope = [&](double eta) {
        double g = -noise / (eta * eta);
        for (const auto& row : rows) {
            if (!row.active || row.w == 0.0) continue;
            const double p = (row.e_left - eta * row.qp) / row.s;
            if (p < row.pmax) g += row.w * row.qp / (row.s * p * p);
        }
        return g;
    };

    double eta;
    if (noise == 0.0) {
        eta = opts.eta_floor_fraction * eta_max;
    } else {
        double hi = eta_max * (1.0 - 1e-12);
        if (slope(hi) <= 0.0) {
            eta = hi;
        } else {
            double lo = hi;
            for (int guard = 0; slope(lo) > 0.0 && guard < 200; ++guard) { hi = lo; lo *= 1e-3; }
            for (int i = 0; i < opts.max_iters && hi > lo * (1.0 + 4.0 * std::numeric_limits<double>::epsilon()); ++i) {
                const double mid = std::sqrt(lo * hi);
                (slope(mid) < 0.0 ? lo : hi) = mid;
            }
            eta = std::sqrt(lo * hi);
        }
    }
    res.eta = eta;

    auto& du = res.duals;
    du.gamma.assign(n, 0.0);
    du.lambda.assign(n, 0.0);
    du.phi.assign(n, 0.0);
    du.psi.assign(n, 0.0);
    std::vector<std::size_t> boundary;  // energy-tight devices whose power sits on a box bound
    double used = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& row = rows[k];
        if (!row.active) continue;
        const double p = row.power(eta);
        res.sense_powers[k] = p;
        const double surplus = row.e_left - eta * row.qp - p * row.s;
        const bool tight = surplus <= 1e-9 * devices[k].energy_budget;
        if (row.w > 0.0 && p < row.pmax * (1.0 - 1e-12)) {
            du.psi[k] = row.w / (p * p * row.s);
            used += du.psi[k] * row.qp;
        } else if (tight) {
            boundary.push_back(k);
        }
    }
    // Whatever eta-stationarity still needs is carried by devices pinned at a power bound.
    double rest = noise > 0.0 ? noise / (eta * eta) - used : 0.0;
    for (auto k : boundary) {
        if (rest <= 0.0) break;
        const auto& row = rows[k];
        double psi = rest / row.qp;
        if (row.w > 0.0) psi = std::min(psi, row.w / (row.pmax * row.pmax * row.s));
        du.psi[k] = psi;
        rest -= psi * row.qp;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (!rows[k].active) continue;
        const double f = res.frequencies[k];
        du.phi[k] = 2.0 * du.psi[k] * devices[k].cpu_constant * f * f * f;
        if (rows[k].w > 0.0 && res.sense_powers[k] < rows[k].pmax && du.psi[k] < opts.lambda_floor)
            res.warnings.push_back("energy multiplier of device " + std::to_string(k) +
                                   " underflows; floored in closed-form checks");
    }
    res.objective = round_objective(cfg, devices, alpha, batch, res.sense_powers, eta);
    res.kkt = p4_kkt(cfg, devices, alpha, batch, res.sense_powers, res.frequencies, eta, du, opts);
    return res;
}

KktReport p4_kkt(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                 const PerDevice& alpha, const PerDevice& batch, const PerDevice& sense_powers,
                 const PerDevice& frequencies, double eta, const DualState& duals,
                 const SolverOptions& opts) {
    const auto n = devices.size();
    check_sizes(n, {&alpha, &batch, &sense_powers, &frequencies, &duals.phi, &duals.psi});
    KktReport r;
    const double t_u = upload_time(cfg);
    const double a2 = cfg.hessian_bound * cfg.hessian_bound;
    double eta_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        const double phi = duals.phi[k], psi = duals.psi[k];
        r.dual_sign = std::max({r.dual_sign, -phi, -psi});
        if (alpha[k] == 0.0) continue;
        const double a = alpha[k], b = batch[k], p = sense_powers[k], f = frequencies[k];
        const double qp = a * a * cfg.grad_dim * cfg.symbol_time / d.channel_power_gain;
        const double lat = sensing_time(b, cfg) + compute_time(b, f, cfg) + t_u;
        const double en = sensing_energy(p, b, cfg) + compute_energy(b, f, d, cfg) + eta * qp;
        r.primal = std::max({r.primal, (lat - cfg.latency_budget) / cfg.latency_budget,
                             (en - d.energy_budget) / d.energy_budget,
                             (p - d.max_sense_power) / d.max_sense_power,
                             (f - d.max_frequency) / d.max_frequency});

        // d/dP: -alpha^2 A^2 delta_s^2 / (b P^2) + psi b tau_s, with box multipliers on [floor, P^max].
        const double pull = a * a * a2 * cfg.sense_noise_var / (b * p * p);
        const double push = psi * b * cfg.sense_sample_time;
        const double g_p = push - pull;
        const double sp = std::max(pull, push);
        if (p >= d.max_sense_power * (1.0 - 1e-12))
            r.stationarity = std::max(r.stationarity, rel(std::max(0.0, g_p), sp));
        else if (p <= opts.power_floor_fraction * d.max_sense_power * (1.0 + 1e-12))
            r.stationarity = std::max(r.stationarity, rel(std::min(0.0, g_p), sp));
        else
            r.stationarity = std::max(r.stationarity, rel(g_p, sp));

        // d/df: -phi b C / f^2 + 2 psi Omega b C f.
        const double lat_pull = phi * b * cfg.cycles_per_sample / (f * f);
        const double en_push = 2.0 * psi * d.cpu_constant * b * cfg.cycles_per_sample * f;
        const double g_f = en_push - lat_pull;
        const double sf = std::max(lat_pull, en_push);
        if (f >= d.max_frequency * (1.0 - 1e-12))
            r.stationarity = std::max(r.stationarity, rel(std::max(0.0, g_f), sf));
        else
            r.stationarity = std::max(r.stationarity, rel(g_f, sf));

        eta_sum += psi * qp;
        if (phi > 0.0)
            r.complementarity = std::max(r.complementarity, std::abs(lat - cfg.latency_budget) / cfg.latency_budget);
        if (psi > 0.0)
            r.complementarity = std::max(r.complementarity, std::abs(en - d.energy_budget) / d.energy_budget);
    }
    if (cfg.channel_noise_var > 0.0) {
        const double pull = cfg.channel_noise_var / (eta * eta);
        r.stationarity = std::max(r.stationarity, rel(eta_sum - pull, std::max(pull, eta_sum)));
    }
    if (!(r.dual_sign > 0.0)) r.dual_sign = 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Fixed receive magnitude
// ---------------------------------------------------------------------------

namespace {

// Golden-section search for a unimodal function; stops once the bracket is
// `rel_tol` of its magnitude (the minimizer of a smooth function is only
// determined to about sqrt(eps) anyway).
template <class F>
double golden_min(F f, double lo, double hi, double rel_tol = 1e-10) {
    constexpr double r = 0.6180339887498949;
    double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < 200 && hi - lo > rel_tol * (std::abs(lo) + std::abs(hi)); ++i) {
        if (f1 <= f2) {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - r * (hi - lo); f1 = f(x1);
        } else {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + r * (hi - lo); f2 = f(x2);
        }
    }
    return f1 <= f2 ? x1 : x2;
}

// One device at fixed eta. Sensing energy s = P b is the free variable in place
// of P; compute energy at the latency-tight frequency is kappa b^3 / (window - b tau_s)^2.
struct EtaDevice {
    double m0 = 0.0;  // sigma^2 + A^2 clutter
    double w0 = 0.0;  // A^2 delta_s^2
    double tau_s = 0.0, kappa = 0.0, window = 0.0, cycles = 0.0;
    double b_cap = 0.0, b_min = 0.0;
    double q = 0.0, e = 0.0, pmax = 0.0, floor = 0.0, fmax = 0.0;
    double alpha_max = 0.0;
    bool active = false;

    double compute(double b) const {
        const double r = window - b * tau_s;
        return kappa * b * b * b / (r * r);
    }
    // Energy needed beyond computing when sensing does not matter (floor power).
    double reserve(double b) const { return compute(b) + (w0 == 0.0 ? tau_s * floor * b : 0.0); }
    double sensing(double b, double left) const {
        return w0 == 0.0 ? floor * b : std::min(pmax * b, (left - compute(b)) / tau_s);
    }
    double cost_rate(double b, double left) const {
        if (w0 == 0.0) return m0 / b;
        const double s = sensing(b, left);
        return s > 0.0 ? m0 / b + w0 / s : kInf;
    }
    double best_batch(double left) const {
        if (left - reserve(b_min) <= 0.0) return b_min;
        double hi = b_cap;
        if (left - reserve(b_cap) < 0.0) {
            double lo = b_min;
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (lo + hi);
                if (mid <= lo || mid >= hi) break;
                (left - reserve(mid) >= 0.0 ? lo : hi) = mid;
            }
            hi = lo;
        }
        if (w0 == 0.0) return hi;  // cost m0 / b: take the largest batch
        return golden_min([&](double b) { return cost_rate(b, left); }, b_min, hi);
    }
    // alpha^2 times the best per-sample rate with the energy left after upload.
    double cost(double alpha) const {
        const double left = e - q * alpha * alpha;
        if (left - reserve(b_min) <= 0.0) return w0 == 0.0 && left - reserve(b_min) == 0.0 ? alpha * alpha * m0 / b_min : kInf;
        return alpha * alpha * cost_rate(best_batch(left), left);
    }
    double alpha_at_price(double p) const {
        if (!active) return 0.0;
        return golden_min([&](double a) { return cost(a) - p * a; }, 0.0, alpha_max);
    }
};

}  // namespace

FixedEtaResult solve_fixed_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                               double eta, const SolverOptions& opts) {
    if (!(eta > 0.0)) throw DomainError("solve_fixed_eta: eta must be positive");
    const auto n = devices.size();
    const double window = cfg.latency_budget - upload_time(cfg);
    const double a2 = cfg.hessian_bound * cfg.hessian_bound;
    std::vector<EtaDevice> dev(n);
    double cap = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        auto& x = dev[k];
        x.m0 = cfg.grad_var_bound + a2 * d.clutter_var;
        x.w0 = a2 * cfg.sense_noise_var;
        x.tau_s = cfg.sense_sample_time;
        x.cycles = cfg.cycles_per_sample;
        x.kappa = d.cpu_constant * std::pow(cfg.cycles_per_sample, 3);
        x.window = window;
        x.b_cap = window / (cfg.sense_sample_time + cfg.cycles_per_sample / d.max_frequency);
        x.b_min = opts.min_batch;
        x.q = eta * cfg.grad_dim * cfg.symbol_time / d.channel_power_gain;
        x.e = d.energy_budget;
        x.pmax = d.max_sense_power;
        x.floor = opts.power_floor_fraction * d.max_sense_power;
        x.fmax = d.max_frequency;
        const double margin = x.e - x.reserve(x.b_min);
        x.active = x.b_cap >= x.b_min && margin > 0.0;
        if (x.active) x.alpha_max = std::sqrt(margin / x.q);
        cap += x.alpha_max;
    }
    if (cap < 1.0)
        throw InfeasibleError("fixed-eta problem infeasible: weights can reach at most " +
                              std::to_string(cap));

    FixedEtaResult res;
    res.alpha.assign(n, 0.0);
    auto total = [&](double p) {
        double s = 0.0;
        for (const auto& x : dev) s += x.alpha_at_price(p);
        return s;
    };
    double scale = 0.0;
    for (const auto& x : dev)
        if (x.active) scale = std::max(scale, x.m0 + x.w0 / x.pmax);
    if (scale == 0.0) {
        for (std::size_t k = 0; k < n; ++k) res.alpha[k] = dev[k].alpha_max / cap;
    } else {
        double lo = scale, hi = scale;
        for (int g = 0; g < 400 && total(hi) < 1.0; ++g) hi *= 4.0;
        for (int g = 0; g < 400 && total(lo) >= 1.0; ++g) lo *= 0.25;
        for (int i = 0; i < opts.max_iters && hi > lo * (1.0 + 1e-12); ++i) {
            const double mid = std::sqrt(lo * hi);
            (total(mid) < 1.0 ? lo : hi) = mid;
        }
        for (std::size_t k = 0; k < n; ++k) res.alpha[k] = dev[k].alpha_at_price(hi);
        const double s = sum_of(res.alpha);
        for (auto& a : res.alpha) a /= s;
    }

    res.batch.assign(n, 0.0);
    res.sense_powers.resize(n);
    res.frequencies.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& x = dev[k];
        res.sense_powers[k] = x.pmax;
        res.frequencies[k] = x.fmax;
        if (res.alpha[k] == 0.0) continue;
        const double left = x.e - x.q * res.alpha[k] * res.alpha[k];
        const double b = x.best_batch(left);
        res.batch[k] = b;
        res.sense_powers[k] = std::min(x.pmax, x.sensing(b, left) / b);
        res.frequencies[k] = std::min(x.fmax, b * x.cycles / (window - b * x.tau_s));
    }
    res.objective = round_objective(cfg, devices, res.alpha, res.batch, res.sense_powers, eta);
    return res;
}

double max_feasible_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                        double min_batch) {
    const double window = cfg.latency_budget - upload_time(cfg);
    const double room = window - min_batch * cfg.sense_sample_time;
    double root_sum = 0.0;
    for (const auto& d : devices) {
        if (!(room > 0.0)) break;
        const double f = min_batch * cfg.cycles_per_sample / room;
        if (f > d.max_frequency) continue;
        const double margin = d.energy_budget - compute_energy(min_batch, f, d, cfg);
        if (margin <= 0.0) continue;
        root_sum += std::sqrt(margin * d.channel_power_gain / (cfg.grad_dim * cfg.symbol_time));
    }
    return root_sum * root_sum;
}

EtaSearchResult search_eta(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                           const SolverOptions& opts) {
    const double top = max_feasible_eta(cfg, devices, opts.min_batch) * (1.0 - 1e-6);
    if (!(top > 0.0)) throw InfeasibleError("no receive magnitude admits a feasible allocation");
    EtaSearchResult out;
    out.best.objective = kInf;
    auto value = [&](double log_eta) {
        ++out.evaluations;
        const double eta = std::exp(log_eta);
        try {
            auto r = solve_fixed_eta(cfg, devices, eta, opts);
            if (r.objective < out.best.objective) {
                out.best = std::move(r);
                out.eta = eta;
            }
            return out.best.objective == kInf ? kInf : r.objective;
        } catch (const InfeasibleError&) {
            return kInf;
        }
    };
    const int n = std::max(3, opts.eta_scan_points);
    const double hi = std::log(top), lo = hi - std::log(1e8);
    std::vector<double> grid(n), vals(n);
    for (int i = 0; i < n; ++i) {
        grid[i] = lo + (hi - lo) * i / (n - 1);
        vals[i] = value(grid[i]);
    }
    const int i = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    if (vals[i] == kInf) throw InfeasibleError("no receive magnitude admits a feasible allocation");
    golden_min(value, grid[std::max(i - 1, 0)], grid[std::min(i + 1, n - 1)], 1e-11);
    return out;
}

// ---------------------------------------------------------------------------
// Alternation
// ---------------------------------------------------------------------------

namespace {

RoundAllocation make_allocation(const PerDevice& alpha, const PerDevice& batch,
                                const PerDevice& power, const PerDevice& freq, double eta) {
    RoundAllocation a;
    a.batch_fractions = alpha;
    a.batch_sizes = batch;
    a.total_batch = sum_of(batch);
    a.sense_powers = power;
    a.frequencies = freq;
    a.receive_magnitude_sq = eta;
    return a;
}

struct Run {
    PerDevice alpha, batch, power, freq;
    double eta = 0.0;
    double objective = kInf;
    std::vector<double> trace;
    DualState duals;
    KktReport k3, k4;
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

Run alternate(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
              const SolverOptions& opts, PerDevice power, PerDevice freq, double eta) {
    Run run;
    std::optional<DualState> warm;
    double prev = kInf;
    for (int it = 0; it < opts.alt_max_iters; ++it) {
        run.iterations = it + 1;
        auto p3 = solve_p3(cfg, devices, power, freq, eta, opts, warm);
        run.trace.push_back(p3.objective);
        auto p4 = solve_p4(cfg, devices, p3.alpha, p3.batch, opts);
        run.trace.push_back(p4.objective);

        run.alpha = std::move(p3.alpha);
        run.batch = std::move(p3.batch);
        power = run.power = std::move(p4.sense_powers);
        freq = run.freq = std::move(p4.frequencies);
        eta = run.eta = p4.eta;
        run.objective = p4.objective;
        run.k3 = p3.kkt;
        run.k4 = p4.kkt;
        run.duals = p3.duals;
        run.duals.phi = std::move(p4.duals.phi);
        run.duals.psi = std::move(p4.duals.psi);
        run.warnings = std::move(p4.warnings);
        warm = run.duals;

        if (std::abs(prev - run.objective) <= opts.alt_tol * std::abs(run.objective)) {
            run.converged = true;
            break;
        }
        prev = run.objective;
    }
    return run;
}

}  // namespace

Algorithm1Result run_algorithm1(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                                const SolverOptions& opts, Rng& rng) {
    validate(cfg, devices);
    if (auto v = opts.violations(); !v.empty()) throw ValidationError(std::move(v));
    const auto n = devices.size();
    // Every device takes part in the round, so each must afford b_min samples.
    const double window = cfg.latency_budget - upload_time(cfg);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& d = devices[k];
        const double fastest = opts.min_batch * (cfg.sense_sample_time + cfg.cycles_per_sample / d.max_frequency);
        if (!(d.energy_budget > 0.0))
            throw InfeasibleError("device " + std::to_string(k) + " has no energy budget", static_cast<int>(k));
        if (fastest > window)
            throw InfeasibleError("device " + std::to_string(k) + " cannot process the minimum batch in time",
                                  static_cast<int>(k));
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Run best;
    int attempts = 0;
    bool any = false;
    auto keep = [&](Run run) {
        const bool better = (run.converged && !best.converged) ||
                            (run.converged == best.converged && run.objective < best.objective);
        if (better) best = std::move(run);
    };
    if (opts.eta_search) {
        // Start at the best fixed-eta point along eta; the block alternation alone
        // stalls wherever the initial frequency capped the batch size.
        try {
            auto es = search_eta(cfg, devices, opts);
            Run run = alternate(cfg, devices, opts, es.best.sense_powers, es.best.frequencies, es.eta);
            run.trace.insert(run.trace.begin(), es.best.objective);
            any = true;
            keep(std::move(run));
        } catch (const InfeasibleError&) {
            // fall back to random starts
        }
    }
    for (int r = 0; r < opts.restarts; ++r) {
        PerDevice power(n), freq(n);
        double eta = 0.0;
        bool found = false;
        for (int i = 0; i < opts.init_retries && !found; ++i) {
            ++attempts;
            for (std::size_t k = 0; k < n; ++k) {
                power[k] = devices[k].max_sense_power * (1.0 - 0.9 * unit(rng));
                freq[k] = devices[k].max_frequency * (1.0 - 0.9 * unit(rng));
            }
            eta = std::pow(10.0, opts.eta_log10_min + (opts.eta_log10_max - opts.eta_log10_min) * unit(rng));
            found = check_feasibility(cfg, devices, power, freq, eta, opts.min_batch).feasible;
        }
        if (!found) continue;
        any = true;
        keep(alternate(cfg, devices, opts, std::move(power), std::move(freq), eta));
    }
    if (!any)
        throw InfeasibleError("no feasible initialization found after " + std::to_string(attempts) +
                              " attempts");

    Algorithm1Result out;
    out.continuous = make_allocation(best.alpha, best.batch, best.power, best.freq, best.eta);
    out.objective = best.objective;
    out.rounded = round_batches(out.continuous, cfg, devices);
    out.rounded_objective = objective_p2(cfg, devices, out.rounded);
    out.trace = std::move(best.trace);
    out.duals = std::move(best.duals);
    out.p3_kkt = best.k3;
    out.p4_kkt = best.k4;
    out.iterations = best.iterations;
    out.init_attempts = attempts;
    out.converged = best.converged;
    out.warnings = std::move(best.warnings);

    // The weights are free in the subproblem; report when they drift from b_k / b.
    double lo = kInf, hi = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (best.alpha[k] == 0.0) continue;
        const double ratio = best.batch[k] / best.alpha[k];
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
    }
    if (hi > 0.0 && hi > 1.05 * lo)
        out.warnings.push_back("aggregation weights differ from b_k/b by up to " +
                               std::to_string(100.0 * (hi / lo - 1.0)) + "%");

    if (!out.converged)
        throw ConvergenceError("alternation did not settle within " +
                                   std::to_string(opts.alt_max_iters) + " iterations",
                               std::move(out));
    if (!out.p3_kkt.ok(opts.tol) || !out.p4_kkt.ok(opts.tol))
        throw ConvergenceError("KKT residual above tolerance (batch " +
                                   std::to_string(out.p3_kkt.max_residual()) + ", resources " +
                                   std::to_string(out.p4_kkt.max_residual()) + ")",
                               std::move(out));
    return out;
}

RoundAllocation round_batches(const RoundAllocation& alloc, const SystemConfig& cfg,
                              const std::vector<DeviceConfig>& devices) {
    const auto n = alloc.size();
    if (devices.size() != n) throw ShapeError("round_batches: K mismatch");
    RoundAllocation out = alloc;
    auto fits = [&](std::size_t k, double b) {
        RoundAllocation trial = out;
        trial.batch_sizes[k] = b;
        return round_latency(static_cast<int>(k), trial, cfg) <= cfg.latency_budget &&
               round_energy(static_cast<int>(k), trial, devices, cfg) <= devices[k].energy_budget;
    };
    for (std::size_t k = 0; k < n; ++k) {
        const double b = alloc.batch_sizes[k];
        if (alloc.batch_fractions[k] == 0.0 || b == 0.0) {
            out.batch_sizes[k] = 0.0;
            out.batch_fractions[k] = 0.0;
            continue;
        }
        double r = std::round(b);
        if (r > b && !fits(k, r)) r = std::floor(b);
        out.batch_sizes[k] = r;
        if (r == 0.0) out.batch_fractions[k] = 0.0;
    }
    const double s = sum_of(out.batch_fractions);
    if (s > 0.0 && s != 1.0)
        for (auto& a : out.batch_fractions) a /= s;
    out.total_batch = sum_of(out.batch_sizes);
    return out;
}

}  // namespace iscc
