#include "knsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <system_error>
#include <thread>

#include <json.hpp>

namespace knsim {

namespace {

// Seed streams.
constexpr std::uint64_t kStreamSweep = 1;
constexpr std::uint64_t kStreamIteration = 2;
constexpr std::uint64_t kStreamAgent = 3;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void require(bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

std::string profile_name(const WorkloadProfile& p) {
    return p.id >= 1 ? roman_numeral(p.id) : std::string("custom");
}

void trace_header(TraceSink trace, const std::string& test, int conc, int index) {
    if (!trace.out) return;
    nlohmann::json h = {{"test", test}, {"conc", conc}, {"index", index}};
    *trace.out << h.dump() << '\n';
}

LoadTestReport run_one(const ExperimentConfig& cfg, SimConfig sim, std::uint64_t seed,
                       const ConcurrencySetting& setting, std::ostream* trace) {
    sim.rng_seed = seed;
    SimEnv env(sim);
    env.set_trace(trace);
    return env.run_load_test(setting, cfg.demand(), cfg.rate_rps, cfg.duration_ms);
}

}  // namespace

std::vector<int> SweepSpec::levels() const {
    std::vector<int> out;
    for (int c = start; c <= end; c += step) out.push_back(c);
    return out;
}

void ExperimentConfig::validate() const {
    require(sweep.start >= 1, "harness.sweep_start", "must be >= 1");
    require(sweep.end <= 1000, "harness.sweep_end", "must be <= 1000");
    require(sweep.end >= sweep.start, "harness.sweep_end", "must be >= sweep_start");
    require(sweep.step >= 1, "harness.sweep_step", "must be >= 1");
    require(sweep.repetitions >= 1, "harness.repetitions", "must be >= 1");
    require(iterations >= 1, "harness.iterations", "must be >= 1");
    require(last_k >= 1, "harness.last_k", "must be >= 1");
    require(rate_rps > 0.0 && std::isfinite(rate_rps), "harness.rate_rps", "must be positive");
    require(duration_ms > 0, "harness.duration_ms", "must be positive");
    require(default_target >= 1, "harness.default_target", "must be >= 1");
    require(default_target_percentage > 0.0 && default_target_percentage <= 1.0,
            "harness.default_target_percentage", "must lie in (0, 1]");
    require(threads >= 0, "harness.threads", "must be >= 0");
    require(output.format == "csv" || output.format == "json", "output.format", "must be csv or json");
    require(profile.bloat_mb >= 0.0 && profile.prime_n >= 0.0 && profile.sleep_ms >= 0.0, "workload",
            "profile parameters must be non-negative");
    require(rc.tolerance >= 0.0 && rc.tolerance < 1.0, "agent.tolerance", "must lie in [0, 1)");
    require(hp.conc_max <= 1000, "agent.conc_max", "must be <= 1000");
    try {
        sim.validate();
    } catch (const SimError& e) {
        throw ConfigError("simenv", e.what());
    }
    try {
        hp.validate();
    } catch (const AgentError& e) {
        throw ConfigError("agent", e.what());
    }
}

void apply_fast(ExperimentConfig& cfg) {
    cfg.rate_rps = 100.0;
    cfg.duration_ms = 3000;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index);
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw CorrelationError("pearson: series lengths differ");
    if (xs.size() < 2) throw CorrelationError("pearson: need at least two points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw CorrelationError("pearson: zero variance, correlation undefined");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

SweepReport baseline_sweep(const ExperimentConfig& cfg, TraceSink trace) {
    cfg.validate();
    const auto levels = cfg.sweep.levels();
    const int reps = cfg.sweep.repetitions;
    const std::size_t n_tasks = levels.size() * static_cast<std::size_t>(reps);
    std::vector<LoadTestReport> results(n_tasks);

    auto run_task = [&](std::size_t t, std::ostream* out) {
        const int conc = levels[t / reps];
        const int rep = static_cast<int>(t % reps);
        const ConcurrencySetting setting{conc, conc};
        results[t] = run_one(cfg, cfg.sim, derive_seed(cfg.seed, kStreamSweep, rep), setting, out);
    };

    if (trace.out) {
        for (std::size_t t = 0; t < n_tasks; ++t) {
            trace_header(trace, "sweep", levels[t / reps], static_cast<int>(t % reps));
            run_task(t, trace.out);
        }
    } else {
        unsigned n_threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                             : std::max(1u, std::thread::hardware_concurrency());
        n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_tasks));
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        auto worker = [&] {
            for (;;) {
                const std::size_t t = next.fetch_add(1);
                if (t >= n_tasks) return;
                try {
                    run_task(t, nullptr);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                    next.store(n_tasks);
                    return;
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            for (unsigned i = 1; i < n_threads; ++i) pool.emplace_back(worker);
            worker();
        }
        if (failure) std::rethrow_exception(failure);
    }

    SweepReport report;
    report.profile = profile_name(cfg.profile);
    for (std::size_t li = 0; li < levels.size(); ++li) {
        SweepLevel level;
        level.reps.assign(results.begin() + li * reps, results.begin() + (li + 1) * reps);
        LevelSummary& m = level.mean;
        m.conc = levels[li];
        for (const auto& r : level.reps) {
            m.throughput_rps += r.throughput_rps;
            m.mean_latency_ms += r.mean_latency_ms;
            m.p95_latency_ms += r.p95_latency_ms;
            m.success_ratio += r.success_ratio;
            m.issued += static_cast<double>(r.issued);
            m.succeeded += static_cast<double>(r.succeeded);
            m.failed += static_cast<double>(r.failed);
            m.avg_cpu_util += r.resources.avg_cpu_util;
            m.avg_mem_util += r.resources.avg_mem_util;
        }
        const double n = static_cast<double>(reps);
        for (double* f : {&m.throughput_rps, &m.mean_latency_ms, &m.p95_latency_ms, &m.success_ratio,
                          &m.issued, &m.succeeded, &m.failed, &m.avg_cpu_util, &m.avg_mem_util})
            *f /= n;
        report.levels.push_back(std::move(level));
    }

    // Strict comparisons keep the lowest level on ties.
    const LevelSummary* best_thr = &report.levels.front().mean;
    const LevelSummary* best_mean = best_thr;
    const LevelSummary* best_p95 = best_thr;
    for (const auto& l : report.levels) {
        if (l.mean.throughput_rps > best_thr->throughput_rps) best_thr = &l.mean;
        if (l.mean.mean_latency_ms < best_mean->mean_latency_ms) best_mean = &l.mean;
        if (l.mean.p95_latency_ms < best_p95->p95_latency_ms) best_p95 = &l.mean;
    }
    report.best_by = {best_thr->conc, best_mean->conc, best_p95->conc};

    std::vector<double> thr, mean_lat, p95_lat;
    for (const auto& l : report.levels) {
        thr.push_back(l.mean.throughput_rps);
        mean_lat.push_back(l.mean.mean_latency_ms);
        p95_lat.push_back(l.mean.p95_latency_ms);
    }
    try {
        report.r_throughput_mean_latency = pearson(thr, mean_lat);
    } catch (const CorrelationError&) {
    }
    try {
        report.r_throughput_p95_latency = pearson(thr, p95_lat);
    } catch (const CorrelationError&) {
    }
    return report;
}

int modal_conc(const std::vector<TrainRow>& rows, int k) {
    if (rows.empty() || k < 1) return 0;
    const std::size_t from = rows.size() > static_cast<std::size_t>(k) ? rows.size() - k : 0;
    std::map<int, int> counts;
    for (std::size_t i = from; i < rows.size(); ++i) ++counts[rows[i].conc];
    int best = 0, best_count = -1;
    for (const auto& [conc, count] : counts) {
        if (count > best_count) {
            best = conc;
            best_count = count;
        }
    }
    return best;
}

std::vector<double> running_average(const std::vector<double>& xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    double avg = 0.0;
    for (std::size_t n = 0; n < xs.size(); ++n) {
        avg += (xs[n] - avg) / static_cast<double>(n + 1);
        out.push_back(avg);
    }
    return out;
}

TrainReport train(const ExperimentConfig& cfg, std::stop_token stop, TraceSink trace) {
    cfg.validate();
    QLearningAgent agent(cfg.hp, cfg.rc, derive_seed(cfg.seed, kStreamAgent, 0));
    const Hyperparams& hp = agent.hyperparams();

    TrainReport report;
    report.profile = profile_name(cfg.profile);
    report.last_k = cfg.last_k;

    int conc = hp.starting_concurrency();
    ResourceSnapshot snap;
    for (int i = 0; i < cfg.iterations; ++i) {
        if (stop.stop_requested()) {
            report.aborted = true;
            break;
        }
        const AgentState s = discretize(conc, snap.avg_cpu_util, snap.avg_mem_util, hp);
        const double eps = epsilon_at(i, hp);
        const Action a = agent.act(s, i);
        const int next_conc = conc + a.delta;

        trace_header(trace, "train", next_conc, i);
        const ConcurrencySetting setting{next_conc, next_conc};
        const LoadTestReport r =
            run_one(cfg, cfg.sim, derive_seed(cfg.seed, kStreamIteration, i), setting, trace.out);

        const AgentState s_next = discretize(next_conc, r.resources.avg_cpu_util, r.resources.avg_mem_util, hp);
        const double rew = agent.learn(s, a, r.throughput_rps, s_next);

        TrainRow row;
        row.iteration = i;
        row.state_conc = conc;
        row.action = a.delta;
        row.conc = next_conc;
        row.throughput_rps = r.throughput_rps;
        row.reward = rew;
        row.epsilon = eps;
        row.ref_value = agent.reward_config().ref_value.value_or(0.0);
        row.avg_cpu_util = r.resources.avg_cpu_util;
        row.avg_mem_util = r.resources.avg_mem_util;
        report.rows.push_back(row);

        conc = next_conc;
        snap = r.resources;
    }
    report.qtable = agent.table();
    report.modal_conc_last_k = modal_conc(report.rows, cfg.last_k);
    return report;
}

ComparisonReport compare_default(const ExperimentConfig& cfg, std::stop_token stop, TraceSink trace) {
    cfg.validate();
    ComparisonReport report;
    report.profile = profile_name(cfg.profile);
    report.rl = train(cfg, stop, trace);

    SimConfig sim = cfg.sim;
    sim.target_percentage = cfg.default_target_percentage;
    const ConcurrencySetting setting{0, cfg.default_target};
    const std::size_t n = report.rl.rows.size();
    for (std::size_t i = 0; i < n; ++i) {
        report.rl_throughput.push_back(report.rl.rows[i].throughput_rps);
        trace_header(trace, "default", 0, static_cast<int>(i));
        const auto r = run_one(cfg, sim, derive_seed(cfg.seed, kStreamIteration, i), setting, trace.out);
        report.default_throughput.push_back(r.throughput_rps);
    }
    report.rl_running_avg = running_average(report.rl_throughput);
    report.default_running_avg = running_average(report.default_throughput);
    if (n > 0) {
        report.rl_final_avg = report.rl_running_avg.back();
        report.default_final_avg = report.default_running_avg.back();
    }
    return report;
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ExportFormat parse_format(const std::string& name) {
    if (name == "csv") return ExportFormat::Csv;
    if (name == "json") return ExportFormat::Json;
    throw ConfigError("output.format", "must be csv or json, got '" + name + "'");
}

namespace {

using nlohmann::json;

json num(double v) { return std::isfinite(v) ? json::parse(format_number(v)) : json(nullptr); }

json optional_num(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

json to_json(const LoadTestReport& r) {
    return {{"throughput_rps", num(r.throughput_rps)},
            {"mean_latency_ms", num(r.mean_latency_ms)},
            {"p95_latency_ms", num(r.p95_latency_ms)},
            {"min_latency_ms", num(r.min_latency_ms)},
            {"max_latency_ms", num(r.max_latency_ms)},
            {"success_ratio", num(r.success_ratio)},
            {"issued", r.issued},
            {"succeeded", r.succeeded},
            {"failed", r.failed},
            {"rejected_memory", r.rejected_memory},
            {"timed_out", r.timed_out},
            {"activator_buffered", r.activator_buffered},
            {"first_latency_ms", num(r.first_latency_ms)},
            {"span_ms", num(r.span_ms)},
            {"peak_pods", r.peak_pods},
            {"peak_in_flight_per_pod", r.peak_in_flight_per_pod},
            {"avg_cpu_util", num(r.resources.avg_cpu_util)},
            {"avg_mem_util", num(r.resources.avg_mem_util)}};
}

json to_json(const LevelSummary& m) {
    return {{"conc", m.conc},
            {"throughput_rps", num(m.throughput_rps)},
            {"mean_latency_ms", num(m.mean_latency_ms)},
            {"p95_latency_ms", num(m.p95_latency_ms)},
            {"success_ratio", num(m.success_ratio)},
            {"issued", num(m.issued)},
            {"succeeded", num(m.succeeded)},
            {"failed", num(m.failed)},
            {"avg_cpu_util", num(m.avg_cpu_util)},
            {"avg_mem_util", num(m.avg_mem_util)}};
}

json to_json(const TrainRow& r) {
    return {{"iteration", r.iteration},         {"state_conc", r.state_conc},
            {"action", r.action},               {"conc", r.conc},
            {"throughput_rps", num(r.throughput_rps)}, {"reward", num(r.reward)},
            {"epsilon", num(r.epsilon)},        {"ref_value", num(r.ref_value)},
            {"avg_cpu_util", num(r.avg_cpu_util)}, {"avg_mem_util", num(r.avg_mem_util)}};
}

json train_json(const TrainReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    return {{"profile", r.profile},
            {"iterations", r.rows.size()},
            {"last_k", r.last_k},
            {"modal_conc_last_k", r.modal_conc_last_k},
            {"aborted", r.aborted},
            {"qtable_entries", r.qtable.size()},
            {"rows", rows}};
}

template <class Report>
void atomic_export(const Report& r, ExportFormat f, const std::filesystem::path& path) {
    std::ostringstream body;
    write_report(r, f, body);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ExportError("cannot write " + tmp.string());
        out << body.str();
        out.flush();
        if (!out) throw ExportError("cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ExportError("cannot replace " + path.string());
    }
}

}  // namespace

void write_report(const SweepReport& r, ExportFormat f, std::ostream& out) {
    if (f == ExportFormat::Csv) {
        out << "conc,throughput_rps,mean_latency_ms,p95_latency_ms,success_ratio,issued,succeeded,failed,"
               "avg_cpu_util,avg_mem_util\n";
        for (const auto& l : r.levels) {
            const auto& m = l.mean;
            out << m.conc << ',' << format_number(m.throughput_rps) << ',' << format_number(m.mean_latency_ms)
                << ',' << format_number(m.p95_latency_ms) << ',' << format_number(m.success_ratio) << ','
                << format_number(m.issued) << ',' << format_number(m.succeeded) << ','
                << format_number(m.failed) << ',' << format_number(m.avg_cpu_util) << ','
                << format_number(m.avg_mem_util) << '\n';
        }
        return;
    }
    json levels = json::array();
    for (const auto& l : r.levels) {
        json entry = to_json(l.mean);
        json reps = json::array();
        for (const auto& rep : l.reps) reps.push_back(to_json(rep));
        entry["reps"] = reps;
        levels.push_back(entry);
    }
    json doc = {{"profile", r.profile},
                {"best_by",
                 {{"throughput", r.best_by.throughput},
                  {"mean_latency", r.best_by.mean_latency},
                  {"p95_latency", r.best_by.p95_latency}}},
                {"r_throughput_mean_latency", optional_num(r.r_throughput_mean_latency)},
                {"r_throughput_p95_latency", optional_num(r.r_throughput_p95_latency)},
                {"levels", levels}};
    out << doc.dump(2) << '\n';
}

void write_report(const TrainReport& r, ExportFormat f, std::ostream& out) {
    if (f == ExportFormat::Csv) {
        out << "iteration,state_conc,action,conc,throughput_rps,reward,epsilon,ref_value,avg_cpu_util,"
               "avg_mem_util\n";
        for (const auto& row : r.rows) {
            out << row.iteration << ',' << row.state_conc << ',' << row.action << ',' << row.conc << ','
                << format_number(row.throughput_rps) << ',' << format_number(row.reward) << ','
                << format_number(row.epsilon) << ',' << format_number(row.ref_value) << ','
                << format_number(row.avg_cpu_util) << ',' << format_number(row.avg_mem_util) << '\n';
        }
        return;
    }
    out << train_json(r).dump(2) << '\n';
}

void write_report(const ComparisonReport& r, ExportFormat f, std::ostream& out) {
    const std::size_t n = r.rl_throughput.size();
    if (f == ExportFormat::Csv) {
        out << "iteration,rl_throughput_rps,default_throughput_rps,rl_running_avg,default_running_avg\n";
        for (std::size_t i = 0; i < n; ++i) {
            out << i << ',' << format_number(r.rl_throughput[i]) << ','
                << format_number(r.default_throughput[i]) << ',' << format_number(r.rl_running_avg[i]) << ','
                << format_number(r.default_running_avg[i]) << '\n';
        }
        return;
    }
    json series = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        series.push_back({{"iteration", i},
                          {"rl_throughput_rps", num(r.rl_throughput[i])},
                          {"default_throughput_rps", num(r.default_throughput[i])},
                          {"rl_running_avg", num(r.rl_running_avg[i])},
                          {"default_running_avg", num(r.default_running_avg[i])}});
    }
    json doc = {{"profile", r.profile},
                {"rl_final_avg", num(r.rl_final_avg)},
                {"default_final_avg", num(r.default_final_avg)},
                {"rl_modal_conc_last_k", r.rl.modal_conc_last_k},
                {"series", series}};
    out << doc.dump(2) << '\n';
}

void export_report(const SweepReport& r, ExportFormat f, const std::filesystem::path& path) {
    atomic_export(r, f, path);
}

void export_report(const TrainReport& r, ExportFormat f, const std::filesystem::path& path) {
    atomic_export(r, f, path);
}

void export_report(const ComparisonReport& r, ExportFormat f, const std::filesystem::path& path) {
    atomic_export(r, f, path);
}

}  // namespace knsim
