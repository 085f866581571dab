#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <vector>

#include "knsim/agent.hpp"
#include "knsim/simenv.hpp"
#include "knsim/workload.hpp"

namespace knsim {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct SweepSpec {
    int start = 10;
    int end = 310;
    int step = 20;
    int repetitions = 10;

    std::vector<int> levels() const;
};

struct OutputSpec {
    std::string dir = "knsim-out";
    std::string format = "csv";  // csv | json
    std::string qtable;          // snapshot path; empty means <dir>/qtable.txt
};

struct ExperimentConfig {
    WorkloadProfile profile = builtin_profile("X");
    CalibrationConstants calib;
    SimConfig sim;
    Hyperparams hp;
    RewardConfig rc;
    double rate_rps = 500.0;
    std::int64_t duration_ms = 30000;
    SweepSpec sweep;
    int iterations = 600;
    int last_k = 100;
    // Default arm of the comparison: soft target only, no hard limit.
    int default_target = 100;
    double default_target_percentage = 0.7;
    std::uint64_t seed = 42;
    int threads = 0;  // 0 = hardware concurrency
    OutputSpec output;

    void validate() const;
    ServiceDemand demand() const { return service_demand(profile, calib); }
};

/// Desk-scale load: 100 RPS for 3 s.
void apply_fast(ExperimentConfig& cfg);

/// splitmix64 over (master, stream, index); independent per-test seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

class CorrelationError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct LevelSummary {
    int conc = 0;
    double throughput_rps = 0.0;
    double mean_latency_ms = 0.0;
    double p95_latency_ms = 0.0;
    double success_ratio = 0.0;
    double issued = 0.0;
    double succeeded = 0.0;
    double failed = 0.0;
    double avg_cpu_util = 0.0;
    double avg_mem_util = 0.0;

    bool operator==(const LevelSummary&) const = default;
};

struct SweepLevel {
    LevelSummary mean;
    std::vector<LoadTestReport> reps;

    bool operator==(const SweepLevel&) const = default;
};

struct BestBy {
    int throughput = 0;
    int mean_latency = 0;
    int p95_latency = 0;

    bool operator==(const BestBy&) const = default;
};

struct SweepReport {
    std::string profile;
    std::vector<SweepLevel> levels;
    BestBy best_by;
    // Empty when a series has zero variance.
    std::optional<double> r_throughput_mean_latency;
    std::optional<double> r_throughput_p95_latency;

    bool operator==(const SweepReport&) const = default;
};

struct TrainRow {
    int iteration = 0;
    int state_conc = 0;  // concurrency observed before acting
    int action = 0;
    int conc = 0;        // concurrency the load test ran with
    double throughput_rps = 0.0;
    double reward = 0.0;
    double epsilon = 0.0;
    double ref_value = 0.0;
    double avg_cpu_util = 0.0;
    double avg_mem_util = 0.0;

    bool operator==(const TrainRow&) const = default;
};

struct TrainReport {
    std::string profile;
    std::vector<TrainRow> rows;
    QTable qtable;
    int last_k = 0;
    int modal_conc_last_k = 0;
    bool aborted = false;

    bool operator==(const TrainReport&) const = default;
};

struct ComparisonReport {
    std::string profile;
    TrainReport rl;
    std::vector<double> rl_throughput;
    std::vector<double> default_throughput;
    std::vector<double> rl_running_avg;
    std::vector<double> default_running_avg;
    double rl_final_avg = 0.0;
    double default_final_avg = 0.0;

    bool operator==(const ComparisonReport&) const = default;
};

/// Trace sink for load tests: one header line per test, then the simulator's events.
struct TraceSink {
    std::ostream* out = nullptr;
};

SweepReport baseline_sweep(const ExperimentConfig& cfg, TraceSink trace = {});

TrainReport train(const ExperimentConfig& cfg, std::stop_token stop = {}, TraceSink trace = {});

ComparisonReport compare_default(const ExperimentConfig& cfg, std::stop_token stop = {},
                                 TraceSink trace = {});

/// Most frequent concurrency over the last k rows; ties go to the smaller level.
int modal_conc(const std::vector<TrainRow>& rows, int k);

/// Running mean via avg_n = avg_{n-1} + (x_n - avg_{n-1}) / (n + 1), zero-based n.
std::vector<double> running_average(const std::vector<double>& xs);

enum class ExportFormat { Csv, Json };

ExportFormat parse_format(const std::string& name);

void write_report(const SweepReport& r, ExportFormat f, std::ostream& out);
void write_report(const TrainReport& r, ExportFormat f, std::ostream& out);
void write_report(const ComparisonReport& r, ExportFormat f, std::ostream& out);

/// Writes to a sibling temp file and renames it over `path` on success.
void export_report(const SweepReport& r, ExportFormat f, const std::filesystem::path& path);
void export_report(const TrainReport& r, ExportFormat f, const std::filesystem::path& path);
void export_report(const ComparisonReport& r, ExportFormat f, const std::filesystem::path& path);

class ExportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Six significant digits, "%.6g".
std::string format_number(double v);

}  // namespace knsim
