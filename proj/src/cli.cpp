#include "knsim/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "knsim/config.hpp"
#include "knsim/harness.hpp"

namespace knsim {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    bool fast = false;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string format;
    std::string trace_path;
    std::string profile;
};

void add_run_options(CLI::App* sub, Options& o) {
    sub->add_option("-c,--config", o.config_path, "Config file (default: $KNSIM_CONFIG)")
        ->envname("KNSIM_CONFIG");
    sub->add_option("-s,--set", o.overrides, "Override a config key, e.g. simenv.max_pods=10")
        ->type_name("KEY=VALUE")
        ->take_all();
    sub->add_flag("--fast", o.fast, "Desk-scale load (100 RPS for 3 s)");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("-p,--profile", o.profile, "Builtin workload, Roman numeral or 1..17");
    sub->add_option("-o,--out", o.out_dir, "Output directory");
    sub->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--trace", o.trace_path, "Write the event trace of every load test to this file");
}

ExperimentConfig resolve(const Options& o) {
    ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (o.fast) apply_fast(cfg);
    if (!o.profile.empty()) apply_override(cfg, "workload.profile=" + o.profile);
    for (const auto& kv : o.overrides) apply_override(cfg, kv);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out_dir.empty()) cfg.output.dir = o.out_dir;
    if (!o.format.empty()) cfg.output.format = o.format;
    cfg.validate();
    return cfg;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? format_number(*v) : "na"; }

void write_text_atomic(const fs::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ExportError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw ExportError("cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw ExportError("cannot replace " + path.string());
    }
}

class Session {
public:
    explicit Session(const Options& o) : cfg_(resolve(o)), format_(parse_format(cfg_.output.format)) {
        if (!o.trace_path.empty()) {
            trace_file_.open(o.trace_path, std::ios::binary | std::ios::trunc);
            if (!trace_file_) throw ExportError("cannot write trace file " + o.trace_path);
            trace_.out = &trace_file_;
        }
    }

    const ExperimentConfig& cfg() const { return cfg_; }
    TraceSink trace() const { return trace_; }

    fs::path report_path(const std::string& stem) const {
        return fs::path(cfg_.output.dir) / (stem + (format_ == ExportFormat::Csv ? ".csv" : ".json"));
    }

    fs::path qtable_path() const {
        return cfg_.output.qtable.empty() ? fs::path(cfg_.output.dir) / "qtable.txt" : fs::path(cfg_.output.qtable);
    }

    void prepare_dir() const {
        std::error_code ec;
        fs::create_directories(cfg_.output.dir, ec);
        if (ec) throw ExportError("cannot create output directory " + cfg_.output.dir + ": " + ec.message());
        write_text_atomic(fs::path(cfg_.output.dir) / "config.toml", dump_config(cfg_));
    }

    ExportFormat format() const { return format_; }

private:
    ExperimentConfig cfg_;
    ExportFormat format_;
    std::ofstream trace_file_;
    TraceSink trace_;
};

int run_sweep(const Options& o, std::ostream& out) {
    Session s(o);
    const auto report = baseline_sweep(s.cfg(), s.trace());
    s.prepare_dir();
    const auto path = s.report_path("sweep");
    export_report(report, s.format(), path);
    out << "sweep profile=" << report.profile << " levels=" << report.levels.size()
        << " repetitions=" << s.cfg().sweep.repetitions << " best_throughput=" << report.best_by.throughput
        << " best_mean_latency=" << report.best_by.mean_latency
        << " best_p95_latency=" << report.best_by.p95_latency
        << " r_mean=" << fmt_opt(report.r_throughput_mean_latency)
        << " r_p95=" << fmt_opt(report.r_throughput_p95_latency) << " out=" << path.string() << '\n';
    return kExitOk;
}

int run_train(const Options& o, std::ostream& out) {
    Session s(o);
    const auto report = train(s.cfg(), {}, s.trace());
    s.prepare_dir();
    const auto path = s.report_path("train");
    export_report(report, s.format(), path);
    save_qtable(report.qtable, s.qtable_path());
    const double ref = report.rows.empty() ? 0.0 : report.rows.back().ref_value;
    out << "train profile=" << report.profile << " iterations=" << report.rows.size()
        << " modal_conc=" << report.modal_conc_last_k << " last_k=" << report.last_k
        << " ref_value=" << format_number(ref) << " qtable_entries=" << report.qtable.size()
        << " out=" << path.string() << '\n';
    return kExitOk;
}

int run_compare(const Options& o, std::ostream& out) {
    Session s(o);
    const auto report = compare_default(s.cfg(), {}, s.trace());
    s.prepare_dir();
    const auto path = s.report_path("compare");
    export_report(report, s.format(), path);
    export_report(report.rl, s.format(), s.report_path("train"));
    save_qtable(report.rl.qtable, s.qtable_path());
    out << "compare profile=" << report.profile << " iterations=" << report.rl_throughput.size()
        << " rl_avg_rps=" << format_number(report.rl_final_avg)
        << " default_avg_rps=" << format_number(report.default_final_avg)
        << " rl_modal_conc=" << report.rl.modal_conc_last_k << " out=" << path.string() << '\n';
    return kExitOk;
}

int run_profiles(std::ostream& out) {
    char line[96];
    std::snprintf(line, sizeof line, "%-6s %4s %9s %8s %9s\n", "name", "id", "bloat_mb", "prime_n", "sleep_ms");
    out << line;
    for (const auto& p : builtin_profiles()) {
        std::snprintf(line, sizeof line, "%-6s %4d %9g %8g %9g\n", roman_numeral(p.id).c_str(), p.id, p.bloat_mb,
                      p.prime_n, p.sleep_ms);
        out << line;
    }
    return kExitOk;
}

}  // namespace

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knative-style autoscaler simulator with a Q-learning concurrency agent", "knsim"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    Options opts;
    auto* sweep = app.add_subcommand("sweep", "Baseline concurrency-limit sweep");
    auto* trn = app.add_subcommand("train", "Train the Q-learning agent");
    auto* cmp = app.add_subcommand("compare", "Q-learning agent against the default autoscaling setting");
    auto* prof = app.add_subcommand("profiles", "List the builtin workload profiles");
    for (auto* sub : {sweep, trn, cmp}) add_run_options(sub, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sweep->parsed()) return run_sweep(opts, out);
        if (trn->parsed()) return run_train(opts, out);
        if (cmp->parsed()) return run_compare(opts, out);
        if (prof->parsed()) return run_profiles(out);
    } catch (const ConfigError& e) {
        err << "knsim: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "knsim: error: " << e.what() << '\n';
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace knsim
