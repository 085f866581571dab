#include "knsim/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace knsim {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool is_bare_key(std::string_view k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

// Splits off a trailing # comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && quoted) {
            ++i;
        } else if (s[i] == '"') {
            quoted = !quoted;
        } else if (s[i] == '#' && !quoted) {
            return s.substr(0, i);
        }
    }
    return s;
}

std::string unquote(const std::string& key, std::string_view v) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"')
        throw ConfigError(key, "expected a double-quoted string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        char c = v[i];
        if (c == '"') throw ConfigError(key, "unescaped quote in string");
        if (c == '\\') {
            if (i + 2 >= v.size()) throw ConfigError(key, "dangling escape in string");
            switch (v[++i]) {
                case '\\': c = '\\'; break;
                case '"': c = '"'; break;
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                default: throw ConfigError(key, "unsupported escape in string");
            }
        }
        out.push_back(c);
    }
    return out;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out.push_back(c);
        }
    }
    return out + "\"";
}

template <class T>
T parse_number(const std::string& key, std::string_view v) {
    T out{};
    const auto* first = v.data();
    const auto* last = v.data() + v.size();
    if (!v.empty() && v.front() == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || first == last)
        throw ConfigError(key, "expected a number, got '" + std::string(v) + "'");
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(out)) throw ConfigError(key, "must be finite");
    }
    return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key, "expected true or false, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

struct Binding {
    std::function<void(ExperimentConfig&, const std::string& key, std::string_view raw)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Binding bind_double(T ExperimentConfig::*group, double T::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*group.*field = parse_number<double>(k, v);
            },
            [=](const ExperimentConfig& c) { return fmt_double(c.*group.*field); }};
}

template <class T>
Binding bind_int(T ExperimentConfig::*group, int T::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*group.*field = parse_number<int>(k, v);
            },
            [=](const ExperimentConfig& c) { return std::to_string(c.*group.*field); }};
}

template <class T>
Binding bind_bool(T ExperimentConfig::*group, bool T::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*group.*field = parse_bool(k, v);
            },
            [=](const ExperimentConfig& c) { return std::string(c.*group.*field ? "true" : "false"); }};
}

template <class T>
Binding bind_string(T ExperimentConfig::*group, std::string T::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*group.*field = unquote(k, v);
            },
            [=](const ExperimentConfig& c) { return quote(c.*group.*field); }};
}

Binding bind_top_double(double ExperimentConfig::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*field = parse_number<double>(k, v);
            },
            [=](const ExperimentConfig& c) { return fmt_double(c.*field); }};
}

template <class I>
Binding bind_top_int(I ExperimentConfig::*field) {
    return {[=](ExperimentConfig& c, const std::string& k, std::string_view v) {
                c.*field = parse_number<I>(k, v);
            },
            [=](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

const std::map<std::string, Binding>& registry() {
    static const std::map<std::string, Binding> reg = [] {
        std::map<std::string, Binding> r;
        using E = ExperimentConfig;

        r["workload.profile"] = {[](E& c, const std::string& k, std::string_view v) {
                                     const std::string id = unquote(k, v);
                                     try {
                                         c.profile = builtin_profile(id);
                                     } catch (const std::invalid_argument&) {
                                         throw ConfigError(k, "unknown builtin profile '" + id + "'");
                                     }
                                 },
                                 [](const E& c) {
                                     return quote(c.profile.id >= 1 ? roman_numeral(c.profile.id) : "");
                                 }};
        auto workload_field = [](double WorkloadProfile::*f) -> Binding {
            return {[=](E& c, const std::string& k, std::string_view v) {
                        const double x = parse_number<double>(k, v);
                        if (c.profile.*f != x) {
                            c.profile.*f = x;
                            c.profile.id = 0;
                        }
                    },
                    [=](const E& c) { return fmt_double(c.profile.*f); }};
        };
        r["workload.bloat_mb"] = workload_field(&WorkloadProfile::bloat_mb);
        r["workload.prime_n"] = workload_field(&WorkloadProfile::prime_n);
        r["workload.sleep_ms"] = workload_field(&WorkloadProfile::sleep_ms);

        r["calibration.cpu_base_ms"] = bind_double(&E::calib, &CalibrationConstants::cpu_base_ms);
        r["calibration.cpu_ms_per_unit_prime"] =
            bind_double(&E::calib, &CalibrationConstants::cpu_ms_per_unit_prime);
        r["calibration.cpu_ms_per_mb_bloat"] = bind_double(&E::calib, &CalibrationConstants::cpu_ms_per_mb_bloat);
        r["calibration.mem_overhead_mb"] = bind_double(&E::calib, &CalibrationConstants::mem_overhead_mb);

        r["simenv.pod_cpu_cores"] = bind_double(&E::sim, &SimConfig::pod_cpu_cores);
        r["simenv.pod_mem_mb"] = bind_double(&E::sim, &SimConfig::pod_mem_mb);
        r["simenv.pod_idle_mem_mb"] = bind_double(&E::sim, &SimConfig::pod_idle_mem_mb);
        r["simenv.cold_start_ms"] = bind_double(&E::sim, &SimConfig::cold_start_ms);
        r["simenv.max_pods"] = bind_int(&E::sim, &SimConfig::max_pods);
        r["simenv.scale_interval_ms"] = bind_double(&E::sim, &SimConfig::scale_interval_ms);
        r["simenv.target_percentage"] = bind_double(&E::sim, &SimConfig::target_percentage);
        r["simenv.scale_to_zero"] = bind_bool(&E::sim, &SimConfig::scale_to_zero);
        r["simenv.request_timeout_ms"] = bind_double(&E::sim, &SimConfig::request_timeout_ms);
        r["simenv.cpu_jitter"] = bind_double(&E::sim, &SimConfig::cpu_jitter);
        r["simenv.poisson_arrivals"] = bind_bool(&E::sim, &SimConfig::poisson_arrivals);
        r["simenv.memory_backoff"] = bind_bool(&E::sim, &SimConfig::memory_backoff);
        r["simenv.check_invariants"] = bind_bool(&E::sim, &SimConfig::check_invariants);

        r["agent.alpha"] = bind_double(&E::hp, &Hyperparams::alpha);
        r["agent.gamma"] = bind_double(&E::hp, &Hyperparams::gamma);
        r["agent.epsilon_start"] = bind_double(&E::hp, &Hyperparams::epsilon_start);
        r["agent.epsilon_decay"] = bind_double(&E::hp, &Hyperparams::epsilon_decay);
        r["agent.epsilon_min"] = bind_double(&E::hp, &Hyperparams::epsilon_min);
        r["agent.exploration_start_iter"] = bind_int(&E::hp, &Hyperparams::exploration_start_iter);
        r["agent.n_bins"] = bind_int(&E::hp, &Hyperparams::n_bins);
        r["agent.conc_min"] = bind_int(&E::hp, &Hyperparams::conc_min);
        r["agent.conc_max"] = bind_int(&E::hp, &Hyperparams::conc_max);
        r["agent.start_conc"] = bind_int(&E::hp, &Hyperparams::start_conc);
        r["agent.tolerance"] = bind_double(&E::rc, &RewardConfig::tolerance);
        r["agent.ref_value"] = {[](E& c, const std::string& k, std::string_view v) {
                                    const double x = parse_number<double>(k, v);
                                    if (x < 0.0) throw ConfigError(k, "must be >= 0 (0 = unset)");
                                    c.rc.ref_value = x > 0.0 ? std::optional<double>(x) : std::nullopt;
                                },
                                [](const E& c) { return fmt_double(c.rc.ref_value.value_or(0.0)); }};

        r["harness.rate_rps"] = bind_top_double(&E::rate_rps);
        r["harness.duration_ms"] = bind_top_int(&E::duration_ms);
        r["harness.sweep_start"] = bind_int(&E::sweep, &SweepSpec::start);
        r["harness.sweep_end"] = bind_int(&E::sweep, &SweepSpec::end);
        r["harness.sweep_step"] = bind_int(&E::sweep, &SweepSpec::step);
        r["harness.repetitions"] = bind_int(&E::sweep, &SweepSpec::repetitions);
        r["harness.iterations"] = bind_top_int(&E::iterations);
        r["harness.last_k"] = bind_top_int(&E::last_k);
        r["harness.default_target"] = bind_top_int(&E::default_target);
        r["harness.default_target_percentage"] = bind_top_double(&E::default_target_percentage);
        r["harness.seed"] = bind_top_int(&E::seed);
        r["harness.threads"] = bind_top_int(&E::threads);

        r["output.dir"] = bind_string(&E::output, &OutputSpec::dir);
        r["output.format"] = bind_string(&E::output, &OutputSpec::format);
        r["output.qtable"] = bind_string(&E::output, &OutputSpec::qtable);
        return r;
    }();
    return reg;
}

const Binding& lookup(const std::string& key) {
    const auto& reg = registry();
    auto it = reg.find(key);
    if (it == reg.end()) throw ConfigError(key, "unknown config key");
    return it->second;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(std::string_view text, const std::string& origin) {
    std::vector<ConfigEntry> out;
    std::map<std::string, int> seen;
    std::string section;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        const auto where = origin + ":" + std::to_string(lineno);

        const auto line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("", where + ": malformed section header");
            const auto name = trim(line.substr(1, line.size() - 2));
            if (!is_bare_key(name)) throw ConfigError("", where + ": malformed section name");
            section = std::string(name);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("", where + ": expected key = value");
        const auto k = trim(line.substr(0, eq));
        const auto v = trim(line.substr(eq + 1));
        if (!is_bare_key(k)) throw ConfigError(std::string(k), where + ": malformed key");
        if (section.empty()) throw ConfigError(std::string(k), where + ": key outside any [section]");
        if (v.empty()) throw ConfigError(section + "." + std::string(k), where + ": missing value");
        std::string key = section + "." + std::string(k);
        if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
            throw ConfigError(key, where + ": duplicate key (first set on line " + std::to_string(it->second) + ")");
        out.push_back({std::move(key), std::string(v), lineno});
    }
    return out;
}

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    lookup(key).set(cfg, key, trim(value));
}

void apply_entries(ExperimentConfig& cfg, const std::vector<ConfigEntry>& entries) {
    for (const auto& e : entries) lookup(e.key);
    for (const auto& e : entries)
        if (e.key == "workload.profile") set_value(cfg, e.key, e.value);
    for (const auto& e : entries)
        if (e.key != "workload.profile") set_value(cfg, e.key, e.value);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("", "cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    ExperimentConfig cfg;
    apply_entries(cfg, parse_config_text(text.str(), path.string()));
    return cfg;
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError(std::string(assignment), "override must have the form key=value");
    const std::string key(trim(assignment.substr(0, eq)));
    std::string value(trim(assignment.substr(eq + 1)));
    const auto& b = lookup(key);
    // Shell users rarely quote strings; accept bare text for string keys.
    const bool string_key = key == "workload.profile" || key.rfind("output.", 0) == 0;
    if (string_key && (value.empty() || value.front() != '"')) value = quote(value);
    b.set(cfg, key, value);
}

std::string get_value(const ExperimentConfig& cfg, const std::string& key) { return lookup(key).get(cfg); }

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : registry()) k.push_back(name);
        return k;
    }();
    return keys;
}

std::string dump_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    std::string section;
    for (const auto& key : config_keys()) {
        if (key == "workload.profile" && cfg.profile.id < 1) continue;
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << '\n';
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << get_value(cfg, key) << '\n';
    }
    return out.str();
}

}  // namespace knsim
