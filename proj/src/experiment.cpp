#include "iscc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "iscc/bounds.hpp"
#include "iscc/model_core.hpp"

namespace iscc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON reading with strict key checking
// ---------------------------------------------------------------------------

namespace {

class Section {
public:
    Section(const json& j, std::string name, std::vector<std::string>& errors)
        : j_(j), name_(std::move(name)), errors_(errors) {
        if (!j_.is_object()) errors_.push_back(name_ + " must be an object");
    }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

    template <class T>
    void get(const char* key, T& out) {
        if (!has(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            errors_.push_back(name_ + "." + key + " has the wrong type");
        }
    }

    const json* sub(const char* key) {
        if (!has(key)) return nullptr;
        used_.insert(key);
        return &j_.at(key);
    }

    std::string path(const std::string& key) const { return name_ + "." + key; }

    ~Section() {
        if (!j_.is_object()) return;
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) errors_.push_back("unknown key " + name_ + "." + k);
    }

private:
    const json& j_;
    std::string name_;
    std::vector<std::string>& errors_;
    std::set<std::string> used_;
};

void read_range(Section& s, const char* key, Range& r) {
    std::vector<double> v;
    if (!s.has(key)) return;
    s.get(key, v);
    if (v.size() != 2) throw ValidationError({s.path(key) + " must be [lo, hi]"});
    r = {v[0], v[1]};
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

SystemConfig read_system(const json& j, std::vector<std::string>& err, bool& has_count) {
    SystemConfig c;
    Section s(j, "system", err);
    has_count = s.has("num_devices");
    s.get("num_devices", c.num_devices);
    s.get("grad_dim", c.grad_dim);
    s.get("num_subcarriers", c.num_subcarriers);
    s.get("sense_sample_time", c.sense_sample_time);
    s.get("symbol_time", c.symbol_time);
    s.get("cycles_per_sample", c.cycles_per_sample);
    s.get("latency_budget", c.latency_budget);
    s.get("sense_noise_var", c.sense_noise_var);
    s.get("channel_noise_var", c.channel_noise_var);
    s.get("grad_var_bound", c.grad_var_bound);
    s.get("hessian_bound", c.hessian_bound);
    s.get("smoothness", c.smoothness);
    s.get("total_rounds", c.total_rounds);
    return c;
}

json system_json(const SystemConfig& c) {
    return {{"num_devices", c.num_devices},
            {"grad_dim", c.grad_dim},
            {"num_subcarriers", c.num_subcarriers},
            {"sense_sample_time", c.sense_sample_time},
            {"symbol_time", c.symbol_time},
            {"cycles_per_sample", c.cycles_per_sample},
            {"latency_budget", c.latency_budget},
            {"sense_noise_var", c.sense_noise_var},
            {"channel_noise_var", c.channel_noise_var},
            {"grad_var_bound", c.grad_var_bound},
            {"hessian_bound", c.hessian_bound},
            {"smoothness", c.smoothness},
            {"total_rounds", c.total_rounds}};
}

DeviceConfig read_device(const json& j, int index, std::vector<std::string>& err) {
    DeviceConfig d;
    Section s(j, "devices[" + std::to_string(index) + "]", err);
    s.get("channel_power_gain", d.channel_power_gain);
    s.get("energy_budget", d.energy_budget);
    s.get("cpu_constant", d.cpu_constant);
    s.get("max_frequency", d.max_frequency);
    s.get("max_sense_power", d.max_sense_power);
    s.get("clutter_var", d.clutter_var);
    return d;
}

json device_json(const DeviceConfig& d) {
    return {{"channel_power_gain", d.channel_power_gain},
            {"energy_budget", d.energy_budget},
            {"cpu_constant", d.cpu_constant},
            {"max_frequency", d.max_frequency},
            {"max_sense_power", d.max_sense_power},
            {"clutter_var", d.clutter_var}};
}

DeviceGenerator read_generator(const json& j, std::vector<std::string>& err) {
    DeviceGenerator g;
    Section s(j, "device_generator", err);
    s.get("count", g.count);
    s.get("seed", g.seed);
    read_range(s, "channel_power_gain", g.channel_power_gain);
    read_range(s, "energy_budget", g.energy_budget);
    read_range(s, "cpu_constant", g.cpu_constant);
    read_range(s, "max_frequency", g.max_frequency);
    read_range(s, "max_sense_power", g.max_sense_power);
    s.get("clutter_var", g.clutter_var);
    return g;
}

json generator_json(const DeviceGenerator& g) {
    return {{"count", g.count},
            {"seed", g.seed},
            {"channel_power_gain", range_json(g.channel_power_gain)},
            {"energy_budget", range_json(g.energy_budget)},
            {"cpu_constant", range_json(g.cpu_constant)},
            {"max_frequency", range_json(g.max_frequency)},
            {"max_sense_power", range_json(g.max_sense_power)},
            {"clutter_var", g.clutter_var}};
}

SolverOptions read_solver(const json& j, std::vector<std::string>& err) {
    SolverOptions o;
    Section s(j, "solver", err);
    s.get("max_iters", o.max_iters);
    s.get("tol", o.tol);
    s.get("alt_tol", o.alt_tol);
    s.get("alt_max_iters", o.alt_max_iters);
    s.get("lambda_floor", o.lambda_floor);
    s.get("min_batch", o.min_batch);
    s.get("init_retries", o.init_retries);
    s.get("eta_log10_min", o.eta_log10_min);
    s.get("eta_log10_max", o.eta_log10_max);
    s.get("restarts", o.restarts);
    s.get("eta_search", o.eta_search);
    s.get("eta_scan_points", o.eta_scan_points);
    s.get("power_floor_fraction", o.power_floor_fraction);
    s.get("eta_floor_fraction", o.eta_floor_fraction);
    return o;
}

json solver_json(const SolverOptions& o) {
    return {{"max_iters", o.max_iters},
            {"tol", o.tol},
            {"alt_tol", o.alt_tol},
            {"alt_max_iters", o.alt_max_iters},
            {"lambda_floor", o.lambda_floor},
            {"min_batch", o.min_batch},
            {"init_retries", o.init_retries},
            {"eta_log10_min", o.eta_log10_min},
            {"eta_log10_max", o.eta_log10_max},
            {"restarts", o.restarts},
            {"eta_search", o.eta_search},
            {"eta_scan_points", o.eta_scan_points},
            {"power_floor_fraction", o.power_floor_fraction},
            {"eta_floor_fraction", o.eta_floor_fraction}};
}

Task read_task(const json& j, std::vector<std::string>& err) {
    Task t;
    Section s(j, "task", err);
    std::string kind = "linear-probe";
    s.get("kind", kind);
    if (kind == "linear-probe") t.kind = TaskKind::kLinearProbe;
    else if (kind == "logistic") t.kind = TaskKind::kLogistic;
    else err.push_back("task.kind must be linear-probe or logistic");
    s.get("mean", t.mean);
    s.get("stddev", t.stddev);
    s.get("gain", t.gain);
    s.get("l2", t.l2);
    s.get("eval_samples", t.eval_samples);
    s.get("eval_seed", t.eval_seed);
    return t;
}

json task_json(const Task& t) {
    return {{"kind", t.kind == TaskKind::kLogistic ? "logistic" : "linear-probe"},
            {"mean", t.mean},
            {"stddev", t.stddev},
            {"gain", t.gain},
            {"l2", t.l2},
            {"eval_samples", t.eval_samples},
            {"eval_seed", t.eval_seed}};
}

RoundAllocation read_allocation(const json& j, std::vector<std::string>& err) {
    Section s(j, "schedule.allocation", err);
    std::vector<double> b, alpha, p, f;
    double eta = 0.0;
    s.get("batch_sizes", b);
    s.get("sense_powers", p);
    s.get("frequencies", f);
    s.get("eta", eta);
    auto out = RoundAllocation::from_batches(b, p, f, eta);
    if (s.has("batch_fractions")) {
        s.get("batch_fractions", alpha);
        out.batch_fractions = alpha;
    }
    return out;
}

json allocation_json(const RoundAllocation& a) {
    json j = {{"batch_sizes", a.batch_sizes},
              {"sense_powers", a.sense_powers},
              {"frequencies", a.frequencies},
              {"eta", a.receive_magnitude_sq}};
    // Fractions are written only when they differ from b_k / b, so editing the
    // batch sizes alone keeps the two consistent.
    const auto tied = RoundAllocation::from_batches(a.batch_sizes, a.sense_powers, a.frequencies,
                                                    a.receive_magnitude_sq);
    if (tied.batch_fractions != a.batch_fractions) j["batch_fractions"] = a.batch_fractions;
    return j;
}

ScheduleSpec read_schedule(const json& j, std::vector<std::string>& err) {
    ScheduleSpec sc;
    Section s(j, "schedule", err);
    if (s.has("learning_rate")) {
        const json* lr = s.sub("learning_rate");
        if (lr->is_number()) sc.learning_rate = lr->get<double>();
        else if (!lr->is_null()) err.push_back("schedule.learning_rate must be a number or null");
    }
    std::string policy = "fixed";
    s.get("policy", policy);
    if (policy == "fixed") sc.policy = AllocationPolicy::kFixed;
    else if (policy == "optimize") sc.policy = AllocationPolicy::kOptimize;
    else err.push_back("schedule.policy must be fixed or optimize");
    if (const json* a = s.sub("allocation")) sc.allocation = read_allocation(*a, err);
    std::string ref = "paired";
    s.get("error_reference", ref);
    if (ref == "paired") sc.error_reference = ErrorReference::kPaired;
    else if (ref == "population") sc.error_reference = ErrorReference::kPopulation;
    else err.push_back("schedule.error_reference must be paired or population");
    s.get("tolerate_divergence", sc.tolerate_divergence);
    s.get("oscillation_threshold", sc.oscillation_threshold);
    s.get("divergence_window", sc.divergence_window);
    s.get("final_window", sc.final_window);
    return sc;
}

json schedule_json(const ScheduleSpec& sc) {
    json j = {{"learning_rate", sc.learning_rate ? json(*sc.learning_rate) : json(nullptr)},
              {"policy", sc.policy == AllocationPolicy::kOptimize ? "optimize" : "fixed"},
              {"error_reference",
               sc.error_reference == ErrorReference::kPopulation ? "population" : "paired"},
              {"tolerate_divergence", sc.tolerate_divergence},
              {"oscillation_threshold", sc.oscillation_threshold},
              {"divergence_window", sc.divergence_window},
              {"final_window", sc.final_window}};
    if (sc.allocation.size() > 0) j["allocation"] = allocation_json(sc.allocation);
    return j;
}

VerifySpec read_verify(const json& j, std::vector<std::string>& err) {
    VerifySpec v;
    Section s(j, "verify", err);
    s.get("trials", v.trials);
    s.get("checks", v.checks);
    s.get("tight", v.tight);
    s.get("tight_tolerance", v.tight_tolerance);
    s.get("z_threshold", v.z_threshold);
    if (const json* o = s.sub("simulation_overrides")) {
        if (o->is_object()) v.simulation_overrides = *o;
        else err.push_back("verify.simulation_overrides must be an object");
    }
    s.get("model", v.model);
    return v;
}

json verify_json(const VerifySpec& v) {
    return {{"trials", v.trials},
            {"checks", v.checks},
            {"tight", v.tight},
            {"tight_tolerance", v.tight_tolerance},
            {"z_threshold", v.z_threshold},
            {"simulation_overrides", v.simulation_overrides},
            {"model", v.model}};
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

void set_path_at(json& node, const std::vector<std::string>& parts, std::size_t i,
                 const json& value, const std::string& full) {
    if (i == parts.size()) {
        node = value;
        return;
    }
    const auto& key = parts[i];
    if (key == "*") {
        if (!node.is_array() || node.empty())
            throw ValidationError({"path " + full + ": '*' must address a nonempty list"});
        for (auto& el : node) set_path_at(el, parts, i + 1, value, full);
        return;
    }
    if (node.is_array()) {
        std::size_t idx = 0;
        const auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
        if (ec != std::errc{} || p != key.data() + key.size() || idx >= node.size())
            throw ValidationError({"path " + full + ": bad list index '" + key + "'"});
        set_path_at(node[idx], parts, i + 1, value, full);
        return;
    }
    if (!node.is_object() || !node.contains(key))
        throw ValidationError({"path " + full + " does not name an existing field"});
    set_path_at(node[key], parts, i + 1, value, full);
}

}  // namespace

void set_path(json& doc, const std::string& path, const json& value) {
    if (path.empty()) throw ValidationError({"empty path"});
    set_path_at(doc, split(path, '.'), 0, value, path);
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

std::vector<DeviceConfig> DeviceGenerator::generate() const {
    Rng rng = make_stream(seed, {static_cast<std::uint64_t>(StreamTag::kDevices)});
    auto draw = [&](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
    std::vector<DeviceConfig> out;
    for (int k = 0; k < count; ++k) {
        DeviceConfig d;
        d.max_frequency = draw(max_frequency);
        d.max_sense_power = draw(max_sense_power);
        d.cpu_constant = draw(cpu_constant);
        d.channel_power_gain = draw(channel_power_gain);
        d.energy_budget = draw(energy_budget);
        d.clutter_var = clutter_var;
        out.push_back(d);
    }
    return out;
}

std::vector<DeviceConfig> ExperimentConfig::resolved_devices() const {
    return device_generator ? device_generator->generate() : devices;
}

double ExperimentConfig::learning_rate() const {
    return schedule.learning_rate ? *schedule.learning_rate : bound_learning_rate(system);
}

TrainingSchedule ExperimentConfig::training_schedule() const {
    TrainingSchedule s;
    s.learning_rate = learning_rate();
    s.total_rounds = system.total_rounds;
    s.policy = schedule.policy;
    s.allocation = schedule.allocation;
    s.solver = solver;
    s.error_reference = schedule.error_reference;
    s.tolerate_divergence = schedule.tolerate_divergence;
    s.oscillation_threshold = schedule.oscillation_threshold;
    s.divergence_window = schedule.divergence_window;
    s.final_window = schedule.final_window;
    return s;
}

std::vector<std::string> ExperimentConfig::violations() const {
    std::vector<std::string> v;
    auto add = [&](std::vector<std::string> more) { v.insert(v.end(), more.begin(), more.end()); };
    if (device_generator) {
        const auto& g = *device_generator;
        if (g.count < 1) v.push_back("device_generator.count must be >= 1");
        for (const Range* r : {&g.channel_power_gain, &g.energy_budget, &g.cpu_constant,
                               &g.max_frequency, &g.max_sense_power})
            if (!(r->lo <= r->hi)) {
                v.push_back("device_generator ranges must satisfy lo <= hi");
                break;
            }
        if (!devices.empty()) v.push_back("give either devices or device_generator, not both");
    }
    if (v.empty()) add(validation_errors(system, resolved_devices()));
    add(solver.violations());
    if (has_task) {
        add(task.violations());
        if (task.dim() != system.grad_dim)
            v.push_back("task dimension must equal system.grad_dim");
    }
    add(training_schedule().violations());
    if (schedule.allocation.size() > 0) {
        add(schedule.allocation.consistency_errors(1e-9));
        if (static_cast<int>(schedule.allocation.size()) != system.num_devices)
            v.push_back("schedule.allocation must have one entry per device");
    }
    if (seeds.empty()) v.push_back("seeds must not be empty");
    if (output.format != "csv" && output.format != "json")
        v.push_back("output.format must be csv or json");
    if (sweep && sweep->values.empty()) v.push_back("sweep.values must not be empty");
    if (verify.trials < 2) v.push_back("verify.trials must be >= 2");
    for (const auto& c : verify.checks)
        if (c != "unbiased" && c != "variance" && c != "degradation")
            v.push_back("unknown verify check '" + c + "'");
    if (has_task && !verify.model.empty() && static_cast<int>(verify.model.size()) != task.dim())
        v.push_back("verify.model must have task dimension");
    return v;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["system"] = system_json(c.system);
    if (c.device_generator) {
        j["device_generator"] = generator_json(*c.device_generator);
    } else {
        j["devices"] = json::array();
        for (const auto& d : c.devices) j["devices"].push_back(device_json(d));
    }
    j["solver"] = solver_json(c.solver);
    if (c.has_task) j["task"] = task_json(c.task);
    j["schedule"] = schedule_json(c.schedule);
    if (c.sweep) j["sweep"] = {{"path", c.sweep->path}, {"values", c.sweep->values}};
    j["seeds"] = c.seeds;
    j["output"] = {{"dir", c.output.dir}, {"format", c.output.format}};
    j["verify"] = verify_json(c.verify);
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    std::vector<std::string> err;
    {
        Section root(j, "config", err);
        if (!j.is_object()) throw ValidationError(err);
        bool has_count = false;
        if (const json* s = root.sub("system")) c.system = read_system(*s, err, has_count);
        if (const json* d = root.sub("devices")) {
            if (!d->is_array()) err.push_back("devices must be a list");
            else
                for (std::size_t i = 0; i < d->size(); ++i)
                    c.devices.push_back(read_device((*d)[i], static_cast<int>(i), err));
        }
        if (const json* g = root.sub("device_generator")) c.device_generator = read_generator(*g, err);
        if (!has_count)
            c.system.num_devices = c.device_generator ? c.device_generator->count
                                                      : static_cast<int>(c.devices.size());
        if (const json* s = root.sub("solver")) c.solver = read_solver(*s, err);
        if (const json* t = root.sub("task")) {
            c.task = read_task(*t, err);
            c.has_task = true;
        }
        if (const json* s = root.sub("schedule")) c.schedule = read_schedule(*s, err);
        if (const json* s = root.sub("sweep")) {
            SweepSpec sw;
            Section ss(*s, "sweep", err);
            ss.get("path", sw.path);
            ss.get("values", sw.values);
            c.sweep = sw;
        }
        root.get("seeds", c.seeds);
        if (const json* o = root.sub("output")) {
            Section os(*o, "output", err);
            os.get("dir", c.output.dir);
            os.get("format", c.output.format);
        }
        if (const json* v = root.sub("verify")) c.verify = read_verify(*v, err);
    }
    if (!err.empty()) throw ValidationError(err);
    auto v = c.violations();
    if (c.sweep && v.empty()) {
        json probe = to_json(c);
        try {
            set_path(probe, c.sweep->path, c.sweep->values.front());
        } catch (const ValidationError& e) {
            v.insert(v.end(), e.violations().begin(), e.violations().end());
        }
    }
    if (v.empty()) {
        json probe = to_json(c);
        for (const auto& [path, value] : c.verify.simulation_overrides.items()) {
            try {
                set_path(probe, path, value);
            } catch (const ValidationError& e) {
                v.insert(v.end(), e.violations().begin(), e.violations().end());
            }
        }
    }
    if (!v.empty()) throw ValidationError(v);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError({"cannot open config " + path});
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ValidationError({"config " + path + " is not valid JSON: " + e.what()});
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

json cell_json(const std::string& s) {
    if (s.empty()) return "";
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc{} && p == s.data() + s.size() && std::isfinite(v)) return v;
    return s;
}

}  // namespace

void Table::write_csv(std::ostream& os) const {
    for (const auto& c : comments) os << "# " << c << '\n';
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << csv_field(header[i]);
    os << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_field(row[i]);
        os << '\n';
    }
}

void Table::write_json(std::ostream& os) const {
    json out = {{"comments", comments}, {"rows", json::array()}};
    for (const auto& row : rows) {
        json r = json::object();
        for (std::size_t i = 0; i < header.size() && i < row.size(); ++i) r[header[i]] = cell_json(row[i]);
        out["rows"].push_back(std::move(r));
    }
    os << out.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    jobs = std::clamp(jobs, 1, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

namespace {

json allocation_report(const RoundAllocation& a, const SystemConfig& cfg,
                       const std::vector<DeviceConfig>& devices) {
    const auto rep = check_constraints(a, devices, cfg, 0.0);
    return {{"batch_sizes", a.batch_sizes},
            {"batch_fractions", a.batch_fractions},
            {"total_batch", a.total_batch},
            {"sense_powers", a.sense_powers},
            {"frequencies", a.frequencies},
            {"eta", a.receive_magnitude_sq},
            {"latency", rep.latency},
            {"energy", rep.energy},
            {"latency_slack", rep.latency_slack},
            {"energy_slack", rep.energy_slack},
            {"alpha_sum", rep.alpha_sum},
            {"violations", rep.violations}};
}

json kkt_json(const KktReport& k) {
    return {{"stationarity", k.stationarity},
            {"complementarity", k.complementarity},
            {"primal", k.primal},
            {"dual_sign", k.dual_sign}};
}

}  // namespace

json optimize_report(const ExperimentConfig& cfg, const Algorithm1Result& r) {
    const auto devices = cfg.resolved_devices();
    json j;
    j["objective"] = r.objective;
    j["rounded_objective"] = r.rounded_objective;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    j["init_attempts"] = r.init_attempts;
    j["seed"] = cfg.seeds.front();
    if (r.continuous.size() > 0) j["allocation"] = allocation_report(r.continuous, cfg.system, devices);
    if (r.rounded.size() > 0) j["rounded_allocation"] = allocation_report(r.rounded, cfg.system, devices);
    j["trace"] = r.trace;
    j["kkt"] = {{"batch_subproblem", kkt_json(r.p3_kkt)}, {"resource_subproblem", kkt_json(r.p4_kkt)}};
    j["duals"] = {{"mu", r.duals.mu},
                  {"gamma", r.duals.gamma},
                  {"lambda", r.duals.lambda},
                  {"phi", r.duals.phi},
                  {"psi", r.duals.psi}};
    j["warnings"] = r.warnings;
    return j;
}

// ---------------------------------------------------------------------------
// simulate / sweep
// ---------------------------------------------------------------------------

namespace {

/// Config with devices resolved and the allocation fixed (solved once when
/// the policy asks for optimization).
struct Prepared {
    ExperimentConfig cfg;
    std::vector<DeviceConfig> devices;
    TrainingSchedule schedule;
    std::optional<Algorithm1Result> solve;
};

Prepared prepare(const ExperimentConfig& cfg) {
    if (!cfg.has_task) throw ValidationError({"a task section is required for training"});
    Prepared p{cfg, cfg.resolved_devices(), cfg.training_schedule(), std::nullopt};
    if (cfg.schedule.policy == AllocationPolicy::kOptimize) {
        Rng init = make_stream(cfg.seeds.front(), {static_cast<std::uint64_t>(StreamTag::kInit)});
        p.solve = run_algorithm1(cfg.system, p.devices, cfg.solver, init);
        p.schedule.allocation = p.solve->rounded;
    } else if (cfg.schedule.allocation.size() == 0) {
        throw ValidationError({"schedule.allocation is required for the fixed policy"});
    }
    p.schedule.policy = AllocationPolicy::kFixed;
    return p;
}

std::string flag(bool b) { return b ? "1" : "0"; }

std::string value_label(const json& v) {
    if (v.is_number()) return format_number(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace

Table simulate_table(const ExperimentConfig& cfg, int jobs) {
    const auto prep = prepare(cfg);
    const int k_dev = static_cast<int>(prep.devices.size());
    const auto& seeds = cfg.seeds;

    std::vector<TrainingResult> runs(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), jobs, [&](int i) {
        runs[static_cast<std::size_t>(i)] =
            run_training(cfg.system, prep.devices, cfg.task, prep.schedule, seeds[static_cast<std::size_t>(i)]);
    });

    Table t;
    t.comments = {
        "one row per round and seed; train_loss and test_accuracy after the round's update",
        "grad_error_sq: squared distance of the aggregated gradient from the " +
            std::string(cfg.schedule.error_reference == ErrorReference::kPaired
                            ? "clean gradient of the same truth samples"
                            : "population gradient"),
        "diverged: 1 for every row of a run flagged as diverging or oscillating",
        "latency_k / energy_k: per-device round latency [s] and energy [J]",
        "learning_rate=" + format_number(prep.schedule.learning_rate) +
            " rounds=" + std::to_string(cfg.system.total_rounds)};
    if (prep.solve) t.comments.push_back("allocation from the optimizer, objective=" +
                                         format_number(prep.solve->rounded_objective));
    t.header = {"round", "seed", "train_loss", "test_accuracy", "grad_error_sq", "diverged"};
    for (int k = 0; k < k_dev; ++k) t.header.push_back("latency_" + std::to_string(k));
    for (int k = 0; k < k_dev; ++k) t.header.push_back("energy_" + std::to_string(k));
    t.header.push_back("violated");

    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const auto& run = runs[i];
        for (const auto& m : run.rounds) {
            std::vector<std::string> row{std::to_string(m.round), std::to_string(seeds[i]),
                                         format_number(m.train_loss), format_number(m.test_accuracy),
                                         format_number(m.grad_error_sq), flag(run.diverged)};
            for (double x : m.latency) row.push_back(format_number(x));
            for (double x : m.energy) row.push_back(format_number(x));
            std::string violated;
            for (const auto& v : m.violated_constraints) violated += (violated.empty() ? "" : "; ") + v;
            row.push_back(violated);
            t.rows.push_back(std::move(row));
        }
        if (run.diverged_round >= 0) {
            std::vector<std::string> row{std::to_string(run.diverged_round), std::to_string(seeds[i]),
                                         "nan", "nan", "nan", "1"};
            for (int k = 0; k < 2 * k_dev; ++k) row.push_back("nan");
            row.push_back(run.divergence_reason);
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

Table sweep_table(const ExperimentConfig& cfg, int jobs) {
    if (!cfg.sweep) throw ValidationError({"sweep section is required"});
    auto values = cfg.sweep->values;
    if (std::all_of(values.begin(), values.end(), [](const json& v) { return v.is_number(); }))
        std::stable_sort(values.begin(), values.end(),
                         [](const json& a, const json& b) { return a.get<double>() < b.get<double>(); });

    const std::string& path = cfg.sweep->path;
    const bool network = path.rfind("system.", 0) == 0 || path.rfind("devices", 0) == 0 ||
                         path.rfind("device_generator", 0) == 0 || path.rfind("solver", 0) == 0;

    // One prepared config per axis value; the optimizer reruns only when the
    // axis changes the network or solver settings.
    const auto n_val = values.size();
    std::vector<std::optional<Prepared>> preps(n_val);
    std::vector<std::string> prep_errors(n_val);
    std::optional<Prepared> base;
    std::string base_error;
    if (!network && cfg.schedule.policy == AllocationPolicy::kOptimize) {
        try {
            base = prepare(cfg);
        } catch (const Error& e) {
            base_error = e.what();
        }
    }
    parallel_for(static_cast<int>(n_val), jobs, [&](int i) {
        const auto u = static_cast<std::size_t>(i);
        try {
            json doc = to_json(cfg);
            set_path(doc, path, values[u]);
            doc.erase("sweep");
            auto point = config_from_json(doc);
            if (base) {
                Prepared p{point, point.resolved_devices(), point.training_schedule(), base->solve};
                p.schedule.policy = AllocationPolicy::kFixed;
                p.schedule.allocation = base->schedule.allocation;
                preps[u] = std::move(p);
            } else if (!base_error.empty()) {
                prep_errors[u] = base_error;
            } else {
                preps[u] = prepare(point);
            }
        } catch (const Error& e) {
            prep_errors[u] = e.what();
        }
    });

    const auto n_seed = cfg.seeds.size();
    struct Cell {
        std::optional<TrainingResult> run;
        std::string error;
    };
    std::vector<Cell> cells(n_val * n_seed);
    parallel_for(static_cast<int>(cells.size()), jobs, [&](int c) {
        const auto u = static_cast<std::size_t>(c) / n_seed;
        const auto s = static_cast<std::size_t>(c) % n_seed;
        auto& cell = cells[static_cast<std::size_t>(c)];
        if (!preps[u]) {
            cell.error = prep_errors[u];
            return;
        }
        const auto& p = *preps[u];
        try {
            cell.run = run_training(p.cfg.system, p.devices, p.cfg.task, p.schedule, cfg.seeds[s]);
        } catch (const Error& e) {
            cell.error = e.what();
        }
    });

    Table t;
    t.comments = {"sweep over " + path + "; one row per axis value and seed, final-round metrics",
                  "objective: noise objective of the allocation used (continuous optimizer value when optimized)",
                  "final_loss / final_accuracy: means over the last schedule.final_window rounds",
                  "diverged: non-finite weights or an oscillating training loss in the final rounds"};
    t.header = {"value", "seed", "rounds", "train_loss", "test_accuracy", "grad_error_sq",
                "final_loss", "final_accuracy", "diverged", "tail_loss_rel_std", "objective",
                "rounded_objective", "error"};
    for (std::size_t u = 0; u < n_val; ++u) {
        for (std::size_t s = 0; s < n_seed; ++s) {
            const auto& cell = cells[u * n_seed + s];
            std::vector<std::string> row{value_label(values[u]), std::to_string(cfg.seeds[s])};
            if (!cell.run) {
                for (int i = 0; i < 10; ++i) row.push_back("");
                row.push_back(cell.error);
                t.rows.push_back(std::move(row));
                continue;
            }
            const auto& run = *cell.run;
            const auto& p = *preps[u];
            const double obj = p.solve ? p.solve->objective
                                       : objective_p2(p.cfg.system, p.devices, p.schedule.allocation);
            const double robj = p.solve ? p.solve->rounded_objective : obj;
            const bool any = !run.rounds.empty();
            const auto& last = any ? run.rounds.back() : RoundMetrics{};
            row.push_back(std::to_string(run.rounds.size()));
            row.push_back(any ? format_number(last.train_loss) : "");
            row.push_back(any ? format_number(last.test_accuracy) : "");
            row.push_back(any ? format_number(last.grad_error_sq) : "");
            row.push_back(any ? format_number(run.final_loss) : "");
            row.push_back(any ? format_number(run.final_accuracy) : "");
            row.push_back(flag(run.diverged));
            row.push_back(format_number(run.tail_loss_rel_std));
            row.push_back(format_number(obj));
            row.push_back(format_number(robj));
            row.push_back(run.divergence_reason);
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// verify-bounds
// ---------------------------------------------------------------------------

namespace {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

std::vector<BoundCheck> verify_bounds(const ExperimentConfig& cfg, int jobs) {
    if (!cfg.has_task) throw ValidationError({"a task section is required for verify-bounds"});
    const auto devices = cfg.resolved_devices();
    RoundAllocation alloc = cfg.schedule.allocation;
    if (cfg.schedule.policy == AllocationPolicy::kOptimize) {
        Rng init = make_stream(cfg.seeds.front(), {static_cast<std::uint64_t>(StreamTag::kInit)});
        alloc = run_algorithm1(cfg.system, devices, cfg.solver, init).rounded;
    }
    if (alloc.size() == 0) throw ValidationError({"schedule.allocation is required for verify-bounds"});

    // The simulated world may differ from the configured one (fault injection).
    json doc = to_json(cfg);
    for (const auto& [path, value] : cfg.verify.simulation_overrides.items()) set_path(doc, path, value);
    const auto world = config_from_json(doc);
    const auto world_devices = world.resolved_devices();

    ModelState model;
    model.weights = cfg.verify.model.empty() ? std::vector<double>(static_cast<std::size_t>(cfg.task.dim()), 0.0)
                                             : cfg.verify.model;
    const auto dim = model.weights.size();
    Task task = world.task;
    task.cache_eval_set();
    const auto g_pop = task.population_gradient(model.weights);
    const double lr = bound_learning_rate(cfg.system);
    const double loss0 = task.population_loss(model.weights);

    const auto& checks = cfg.verify.checks;
    auto wants = [&](const char* c) { return std::find(checks.begin(), checks.end(), c) != checks.end(); };
    const bool need_decrease = wants("degradation");

    const int n = cfg.verify.trials;
    std::vector<double> diff(static_cast<std::size_t>(n) * dim), err_sq(n), decrease(n);
    const int chunks = std::min(n, 64);
    parallel_for(chunks, jobs, [&](int c) {
        for (int i = c; i < n; i += chunks) {
            Rng r = make_stream(cfg.seeds.front(), {static_cast<std::uint64_t>(StreamTag::kRound),
                                                    static_cast<std::uint64_t>(i)});
            const auto rg = sample_round_gradient(model, world.system, world_devices, alloc, task, r());
            double e = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                diff[static_cast<std::size_t>(i) * dim + j] = rg.aggregated[j] - rg.clean[j];
                const double d = rg.aggregated[j] - g_pop[j];
                e += d * d;
            }
            err_sq[i] = e;
            if (need_decrease) {
                auto w = model.weights;
                for (std::size_t j = 0; j < dim; ++j) w[j] -= lr * rg.aggregated[j];
                decrease[i] = loss0 - task.population_loss(w);
            }
        }
    });

    std::vector<BoundCheck> out;
    const double z = cfg.verify.z_threshold;
    BoundInputs in{cfg.system, devices, alloc, 0.0, 0.0};
    for (const auto& name : checks) {
        BoundCheck c;
        c.name = name;
        if (name == "unbiased") {
            // Per-coordinate z-scores of the mean error against the paired clean
            // gradient, Bonferroni-adjusted across coordinates.
            const double p_two = 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), z));
            const double z_adj = boost::math::quantile(
                boost::math::complement(boost::math::normal(), p_two / (2.0 * static_cast<double>(dim))));
            double worst = 0.0, worst_mean = 0.0, worst_se = 0.0;
            std::vector<double> col(n);
            for (std::size_t j = 0; j < dim; ++j) {
                for (int i = 0; i < n; ++i) col[i] = diff[static_cast<std::size_t>(i) * dim + j];
                const auto ms = mean_se(col);
                const double score = ms.se > 0.0 ? std::abs(ms.mean) / ms.se : (ms.mean == 0.0 ? 0.0 : INFINITY);
                if (score >= worst) {
                    worst = score;
                    worst_mean = ms.mean;
                    worst_se = ms.se;
                }
            }
            c.empirical = worst_mean;
            c.reference = 0.0;
            c.std_error = worst_se;
            c.margin = z_adj - worst;
            c.pass = worst <= z_adj;
            c.detail = "max |z| = " + format_number(worst) + " over " + std::to_string(dim) +
                       " coordinates, threshold " + format_number(z_adj);
        } else if (name == "variance") {
            const auto ms = mean_se(err_sq);
            const double bound = variance_bound(in);
            c.empirical = ms.mean;
            c.reference = bound;
            c.std_error = ms.se;
            if (cfg.verify.tight) {
                const double ratio = ms.mean / bound;
                c.margin = cfg.verify.tight_tolerance - std::abs(ratio - 1.0);
                c.detail = "empirical / bound = " + format_number(ratio);
            } else {
                c.margin = bound + z * ms.se - ms.mean;
                c.detail = "empirical <= bound + " + format_number(z) + " SE";
            }
            c.pass = c.margin >= 0.0;
        } else if (name == "degradation") {
            in.true_grad_sq_norm = std::inner_product(g_pop.begin(), g_pop.end(), g_pop.begin(), 0.0);
            const double lb = per_round_degradation_lb(in, cfg.learning_rate());
            const auto ms = mean_se(decrease);
            c.empirical = ms.mean;
            c.reference = lb;
            c.std_error = ms.se;
            c.margin = ms.mean - (lb - z * ms.se);
            c.pass = c.margin >= 0.0;
            c.detail = "mean loss decrease >= bound - " + format_number(z) + " SE";
        }
        out.push_back(c);
    }
    return out;
}

Table verify_table(const std::vector<BoundCheck>& checks) {
    Table t;
    t.comments = {"margin > 0 means the check passes; std_error is the Monte-Carlo standard error"};
    t.header = {"check", "empirical", "reference", "margin", "std_error", "verdict", "detail"};
    for (const auto& c : checks)
        t.rows.push_back({c.name, format_number(c.empirical), format_number(c.reference),
                          format_number(c.margin), format_number(c.std_error), c.pass ? "pass" : "fail",
                          c.detail});
    return t;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

ExperimentConfig load_with(const std::string& path, const RunOptions& opts) {
    auto cfg = load_config(path);
    if (opts.seed_override) cfg.seeds = {*opts.seed_override};
    if (opts.out_dir) cfg.output.dir = *opts.out_dir;
    if (opts.format) {
        if (*opts.format != "csv" && *opts.format != "json")
            throw ValidationError({"--format must be csv or json"});
        cfg.output.format = *opts.format;
    }
    return cfg;
}

std::filesystem::path output_file(const ExperimentConfig& cfg, const std::string& stem,
                                  const std::string& ext) {
    std::filesystem::create_directories(cfg.output.dir);
    return std::filesystem::path(cfg.output.dir) / (stem + "." + ext);
}

void write_table(const Table& t, const ExperimentConfig& cfg, const std::string& stem, std::ostream& log) {
    const auto file = output_file(cfg, stem, cfg.output.format);
    std::ofstream os(file, std::ios::binary);
    if (cfg.output.format == "json") t.write_json(os);
    else t.write_csv(os);
    if (!os) throw std::runtime_error("failed to write " + file.string());
    log << "wrote " << file.string() << " (" << t.rows.size() << " rows)\n";
}

template <class Fn>
int guarded(std::ostream& log, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        log << "invalid configuration:\n";
        for (const auto& v : e.violations()) log << "  - " << v << '\n';
        return exit_code::kValidation;
    } catch (const InfeasibleError& e) {
        log << "infeasible: " << e.what() << '\n';
        return exit_code::kInfeasible;
    } catch (const ConvergenceError& e) {
        log << "solver did not converge: " << e.what() << '\n';
        return exit_code::kNonConvergence;
    } catch (const DomainError& e) {
        log << "invalid input: " << e.what() << '\n';
        return exit_code::kValidation;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return exit_code::kIo;
    }
}

}  // namespace

int cmd_optimize(const std::string& config_path, const RunOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load_with(config_path, opts);
        const auto devices = cfg.resolved_devices();
        Rng init = make_stream(cfg.seeds.front(), {static_cast<std::uint64_t>(StreamTag::kInit)});
        int code = exit_code::kOk;
        Algorithm1Result result;
        try {
            result = run_algorithm1(cfg.system, devices, cfg.solver, init);
        } catch (const ConvergenceError& e) {
            log << "solver did not converge: " << e.what() << '\n';
            result = e.partial();
            code = exit_code::kNonConvergence;
        }
        const auto file = output_file(cfg, "optimize", "json");
        std::ofstream os(file, std::ios::binary);
        os << optimize_report(cfg, result).dump(2) << '\n';
        if (!os) throw std::runtime_error("failed to write " + file.string());
        log << "objective " << format_number(result.objective) << " (rounded "
            << format_number(result.rounded_objective) << "), wrote " << file.string() << '\n';
        for (const auto& w : result.warnings) log << "warning: " << w << '\n';
        return code;
    });
}

int cmd_simulate(const std::string& config_path, const RunOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load_with(config_path, opts);
        write_table(simulate_table(cfg, opts.jobs), cfg, "simulate", log);
        return exit_code::kOk;
    });
}

int cmd_verify_bounds(const std::string& config_path, const RunOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load_with(config_path, opts);
        const auto checks = verify_bounds(cfg, opts.jobs);
        write_table(verify_table(checks), cfg, "verify", log);
        int code = exit_code::kOk;
        for (const auto& c : checks) {
            log << c.name << ": " << (c.pass ? "pass" : "FAIL") << " (" << c.detail << ")\n";
            if (!c.pass) code = exit_code::kBoundCheck;
        }
        return code;
    });
}

int cmd_sweep(const std::string& config_path, const RunOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = load_with(config_path, opts);
        write_table(sweep_table(cfg, opts.jobs), cfg, "sweep", log);
        return exit_code::kOk;
    });
}

}  // namespace iscc
