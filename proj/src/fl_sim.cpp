#include "iscc/fl_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iscc/bounds.hpp"

namespace iscc {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double sq_norm(std::span<const double> a) { return dot(a, a); }

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) { return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

// 1 / (1 + exp(z))
double sigmoid_neg(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

Task Task::linear_probe(std::vector<double> mean, std::vector<double> stddev, double gain) {
    Task t;
    t.kind = TaskKind::kLinearProbe;
    t.mean = std::move(mean);
    t.stddev = std::move(stddev);
    t.gain = gain;
    return t;
}

Task Task::logistic(std::vector<double> mean, std::vector<double> stddev, double l2) {
    Task t;
    t.kind = TaskKind::kLogistic;
    t.mean = std::move(mean);
    t.stddev = std::move(stddev);
    t.l2 = l2;
    return t;
}

std::vector<std::string> Task::violations() const {
    std::vector<std::string> v;
    if (mean.empty()) v.push_back("task.mean must not be empty");
    if (stddev.size() != mean.size()) v.push_back("task.stddev must have the same length as task.mean");
    for (double s : stddev)
        if (!(s >= 0.0) || !std::isfinite(s)) {
            v.push_back("task.stddev entries must be finite and >= 0");
            break;
        }
    if (!std::isfinite(gain)) v.push_back("task.gain must be finite");
    if (!(l2 >= 0.0)) v.push_back("task.l2 must be >= 0");
    if (kind == TaskKind::kLogistic && eval_samples < 1) v.push_back("task.eval_samples must be >= 1");
    return v;
}

TruthSample Task::sample(Rng& rng) const {
    NormalDist normal(0.0, 1.0);
    TruthSample s;
    s.x.resize(mean.size());
    double y = 1.0;
    if (kind == TaskKind::kLogistic) {
        y = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? -1.0 : 1.0;
        s.label = y;
    }
    for (std::size_t j = 0; j < mean.size(); ++j) s.x[j] = y * mean[j] + stddev[j] * normal(rng);
    return s;
}

double Task::loss(std::span<const double> w, std::span<const double> x, double label) const {
    if (kind == TaskKind::kLinearProbe) return gain * dot(w, x) + 0.5 * sq_norm(w);
    return softplus_neg(label * dot(w, x)) + 0.5 * l2 * sq_norm(w);
}

void Task::add_gradient(std::span<const double> w, std::span<const double> x, double label,
                        std::span<double> out) const {
    if (kind == TaskKind::kLinearProbe) {
        for (std::size_t j = 0; j < w.size(); ++j) out[j] += gain * x[j] + w[j];
        return;
    }
    const double c = -label * sigmoid_neg(label * dot(w, x));
    for (std::size_t j = 0; j < w.size(); ++j) out[j] += c * x[j] + l2 * w[j];
}

double Task::smoothness() const {
    if (kind == TaskKind::kLinearProbe) return 1.0;
    // Hessian <= E[x x'] / 4 + l2 I and |E[x x']| <= |mean|^2 + max s^2.
    const double smax = stddev.empty() ? 0.0 : *std::max_element(stddev.begin(), stddev.end());
    return (sq_norm(mean) + smax * smax) / 4.0 + l2;
}

double Task::clean_gradient_variance() const {
    if (kind == TaskKind::kLinearProbe) return gain * gain * sq_norm(stddev);
    // |grad| <= |x| for logistic (without l2): E|x|^2 bounds the variance.
    return sq_norm(mean) + sq_norm(stddev);
}

std::vector<TruthSample> Task::eval_set() const {
    if (eval_cache_) return *eval_cache_;
    Rng rng = make_stream(eval_seed, {static_cast<std::uint64_t>(StreamTag::kEval)});
    std::vector<TruthSample> out;
    out.reserve(static_cast<std::size_t>(eval_samples));
    for (int i = 0; i < eval_samples; ++i) out.push_back(sample(rng));
    return out;
}

void Task::cache_eval_set() {
    eval_cache_.reset();
    if (kind == TaskKind::kLogistic) eval_cache_ = std::make_shared<const std::vector<TruthSample>>(eval_set());
}

const std::vector<TruthSample>& Task::eval_samples_ref(std::vector<TruthSample>& scratch) const {
    if (eval_cache_) return *eval_cache_;
    scratch = eval_set();
    return scratch;
}

std::vector<double> Task::population_gradient(std::span<const double> w) const {
    std::vector<double> g(w.size(), 0.0);
    if (kind == TaskKind::kLinearProbe) {
        for (std::size_t j = 0; j < w.size(); ++j) g[j] = gain * mean[j] + w[j];
        return g;
    }
    std::vector<TruthSample> scratch;
    const auto& set = eval_samples_ref(scratch);
    for (const auto& s : set) add_gradient(w, s.x, s.label, g);
    for (auto& v : g) v /= static_cast<double>(set.size());
    return g;
}

double Task::population_loss(std::span<const double> w) const {
    if (kind == TaskKind::kLinearProbe) return gain * dot(w, mean) + 0.5 * sq_norm(w);
    std::vector<TruthSample> scratch;
    const auto& set = eval_samples_ref(scratch);
    double sum = 0.0;
    for (const auto& s : set) sum += loss(w, s.x, s.label);
    return sum / static_cast<double>(set.size());
}

double Task::test_accuracy(std::span<const double> w) const {
    if (kind == TaskKind::kLinearProbe) return 0.0;
    // y w.x ~ N(w.mean, sum w_j^2 s_j^2)
    double spread = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) spread += w[j] * w[j] * stddev[j] * stddev[j];
    const double margin = dot(w, mean);
    if (spread == 0.0) return margin > 0.0 ? 1.0 : (margin < 0.0 ? 0.0 : 0.5);
    return 0.5 * std::erfc(-margin / std::sqrt(2.0 * spread));
}

double Task::optimal_loss() const {
    if (kind == TaskKind::kLinearProbe) return -0.5 * gain * gain * sq_norm(mean);
    return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Rounds
// ---------------------------------------------------------------------------

std::vector<std::string> TrainingSchedule::violations() const {
    std::vector<std::string> v;
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        v.push_back("schedule.learning_rate must be > 0");
    if (total_rounds < 0) v.push_back("schedule.total_rounds must be >= 0");
    if (!(oscillation_threshold > 0.0)) v.push_back("schedule.oscillation_threshold must be > 0");
    if (divergence_window < 2) v.push_back("schedule.divergence_window must be >= 2");
    if (final_window < 1) v.push_back("schedule.final_window must be >= 1");
    return v;
}

std::vector<double> local_gradient(const ModelState& model, std::span<const SenseSample> batch,
                                   const Task& task) {
    if (batch.empty()) throw DomainError("local_gradient: empty batch");
    std::vector<double> g(model.weights.size(), 0.0);
    for (const auto& s : batch) {
        if (s.observed.size() != model.weights.size())
            throw ShapeError("local_gradient: sample length does not match the model");
        task.add_gradient(model.weights, s.observed, s.label, g);
    }
    for (auto& v : g) v /= static_cast<double>(batch.size());
    return g;
}

RoundGradient sample_round_gradient(const ModelState& model, const SystemConfig& cfg,
                                    const std::vector<DeviceConfig>& devices,
                                    const RoundAllocation& alloc, const Task& task,
                                    std::uint64_t seed) {
    const auto n = devices.size();
    if (alloc.size() != n || alloc.batch_fractions.size() != n || alloc.sense_powers.size() != n)
        throw ShapeError("sample_round_gradient: allocation does not match the device list");
    const auto dim = model.weights.size();
    std::vector<std::vector<double>> grads(n, std::vector<double>(dim, 0.0));
    RoundGradient out;
    out.clean.assign(dim, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double weight = alloc.batch_fractions[k];
        const auto b = static_cast<int>(std::llround(alloc.batch_sizes[k]));
        if (weight == 0.0) continue;
        if (b <= 0) throw DomainError("device " + std::to_string(k) + " has weight but no samples");
        Rng truth_rng = make_stream(seed, {k, static_cast<std::uint64_t>(StreamTag::kTruth)});
        Rng sense_rng = make_stream(seed, {k, static_cast<std::uint64_t>(StreamTag::kSensing)});
        auto batch = sense_batch(devices[k], cfg, alloc.sense_powers[k], b,
                                 [&](Rng&) { return task.sample(truth_rng); }, sense_rng);
        grads[k] = local_gradient(model, batch, task);
        std::vector<double> clean(dim, 0.0);
        for (const auto& s : batch) task.add_gradient(model.weights, s.truth, s.label, clean);
        for (std::size_t j = 0; j < dim; ++j) out.clean[j] += weight * clean[j] / b;
    }
    Rng channel_rng = make_stream(seed, {static_cast<std::uint64_t>(StreamTag::kChannel)});
    out.aggregated = aircomp_aggregate_weighted(grads, alloc.batch_fractions,
                                                alloc.receive_magnitude_sq, cfg, channel_rng);
    return out;
}

RoundOutcome run_round(const ModelState& model, const SystemConfig& cfg,
                       const std::vector<DeviceConfig>& devices, const RoundAllocation& alloc,
                       const Task& task, const TrainingSchedule& sched, Rng& rng) {
    const auto rg = sample_round_gradient(model, cfg, devices, alloc, task, rng());
    RoundOutcome out;
    out.model.round = model.round + 1;
    out.model.weights = model.weights;
    for (std::size_t j = 0; j < out.model.weights.size(); ++j)
        out.model.weights[j] -= sched.learning_rate * rg.aggregated[j];
    if (!all_finite(out.model.weights))
        throw DivergenceError("non-finite weights after round " + std::to_string(model.round),
                              model.round);

    auto& m = out.metrics;
    m.round = model.round;
    const auto reference = sched.error_reference == ErrorReference::kPaired
                               ? rg.clean
                               : task.population_gradient(model.weights);
    for (std::size_t j = 0; j < reference.size(); ++j) {
        const double d = rg.aggregated[j] - reference[j];
        m.grad_error_sq += d * d;
    }
    m.train_loss = task.population_loss(out.model.weights);
    m.test_accuracy = task.test_accuracy(out.model.weights);
    const auto report = check_constraints(alloc, devices, cfg, 1e-9);
    m.latency = report.latency;
    m.energy = report.energy;
    m.violated_constraints = report.violations;
    return out;
}

TrainingResult run_training(const SystemConfig& cfg, const std::vector<DeviceConfig>& devices,
                            const Task& task, const TrainingSchedule& sched, std::uint64_t seed) {
    auto v = validation_errors(cfg, devices);
    auto tv = task.violations();
    auto sv = sched.violations();
    v.insert(v.end(), tv.begin(), tv.end());
    v.insert(v.end(), sv.begin(), sv.end());
    if (task.dim() != cfg.grad_dim)
        v.push_back("task dimension " + std::to_string(task.dim()) + " != system.grad_dim " +
                    std::to_string(cfg.grad_dim));
    if (!v.empty()) throw ValidationError(std::move(v));

    Task cached = task;
    cached.cache_eval_set();
    TrainingResult res;
    res.final_model.weights.assign(static_cast<std::size_t>(task.dim()), 0.0);
    if (sched.policy == AllocationPolicy::kOptimize) {
        Rng init = make_stream(seed, {static_cast<std::uint64_t>(StreamTag::kInit)});
        res.allocation = run_algorithm1(cfg, devices, sched.solver, init).rounded;
    } else {
        res.allocation = sched.allocation;
    }
    if (sched.total_rounds == 0) return res;

    ModelState model = res.final_model;
    for (int t = 0; t < sched.total_rounds; ++t) {
        Rng rng = make_stream(seed, {static_cast<std::uint64_t>(StreamTag::kRound),
                                     static_cast<std::uint64_t>(t)});
        try {
            auto step = run_round(model, cfg, devices, res.allocation, cached, sched, rng);
            model = std::move(step.model);
            res.rounds.push_back(std::move(step.metrics));
        } catch (const DivergenceError& e) {
            if (!sched.tolerate_divergence) throw;
            res.diverged = true;
            res.diverged_round = e.round();
            res.divergence_reason = "non-finite weights";
            break;
        }
    }
    res.final_model = model;

    const int fw = std::min<int>(sched.final_window, static_cast<int>(res.rounds.size()));
    if (!res.diverged && fw >= 1) {
        const auto end = static_cast<int>(res.rounds.size());
        for (int i = end - fw; i < end; ++i) {
            res.final_accuracy += res.rounds[i].test_accuracy / fw;
            res.final_loss += res.rounds[i].train_loss / fw;
        }
    } else if (res.diverged) {
        res.final_accuracy = res.final_loss = std::numeric_limits<double>::quiet_NaN();
    }

    // Tail oscillation of the training loss.
    const int w = std::min<int>(sched.divergence_window, static_cast<int>(res.rounds.size()));
    if (!res.diverged && w >= 2) {
        double mean = 0.0;
        for (int i = static_cast<int>(res.rounds.size()) - w; i < static_cast<int>(res.rounds.size()); ++i)
            mean += res.rounds[i].train_loss;
        mean /= w;
        double var = 0.0;
        for (int i = static_cast<int>(res.rounds.size()) - w; i < static_cast<int>(res.rounds.size()); ++i)
            var += (res.rounds[i].train_loss - mean) * (res.rounds[i].train_loss - mean);
        var /= (w - 1);
        res.tail_loss_rel_std = mean != 0.0 ? std::sqrt(var) / std::abs(mean) : 0.0;
        if (res.tail_loss_rel_std > sched.oscillation_threshold) {
            res.diverged = true;
            res.divergence_reason = "training loss oscillates in the final rounds";
        }
    }
    return res;
}

GradNormEstimate estimate_grad_sq_norm(const ModelState& model, const Task& task, int n_samples,
                                       Rng& rng) {
    if (n_samples < 1) throw DomainError("estimate_grad_sq_norm: n_samples must be >= 1");
    const auto dim = model.weights.size();
    const auto n = static_cast<std::size_t>(n_samples);
    std::vector<std::vector<double>> g(n, std::vector<double>(dim, 0.0));
    std::vector<double> mean(dim, 0.0);
    for (auto& gi : g) {
        const auto s = task.sample(rng);
        task.add_gradient(model.weights, s.x, s.label, gi);
        for (std::size_t j = 0; j < dim; ++j) mean[j] += gi[j];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    GradNormEstimate out;
    if (n == 1) {
        out.value = sq_norm(mean);
        return out;
    }
    for (auto& gi : g)
        for (std::size_t j = 0; j < dim; ++j) gi[j] -= mean[j];
    const double denom = static_cast<double>(n - 1);

    double trace = 0.0, quad = 0.0, trace_sq = 0.0;
    for (const auto& gi : g) {
        trace += sq_norm(gi);
        const double proj = dot(gi, mean);
        quad += proj * proj;
    }
    trace /= denom;
    quad /= denom;
    // tr(S^2) through the smaller Gram matrix.
    if (dim <= n) {
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = 0; b < dim; ++b) {
                double s = 0.0;
                for (const auto& gi : g) s += gi[a] * gi[b];
                s /= denom;
                trace_sq += s * s;
            }
    } else {
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const double s = dot(g[a], g[b]) / denom;
                trace_sq += s * s;
            }
    }
    const double nd = static_cast<double>(n);
    out.value = sq_norm(mean) - trace / nd;
    out.std_error = std::sqrt(std::max(0.0, 4.0 * quad / nd + 2.0 * trace_sq / (nd * nd)));
    return out;
}

}  // namespace iscc
