#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "knsim/workload.hpp"

namespace knsim {

class SimError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SimConfig {
    double pod_cpu_cores = 1.0;
    double pod_mem_mb = 7168.0;
    double pod_idle_mem_mb = 64.0;  // resident footprint of an idle user-container
    double cold_start_ms = 2000.0;
    int max_pods = 20;
    double scale_interval_ms = 2000.0;
    double target_percentage = 1.0;
    bool scale_to_zero = true;
    double request_timeout_ms = 30000.0;  // 0 disables the timeout
    // Per-request CPU demand is stretched by a factor drawn from [1, 1 + cpu_jitter).
    double cpu_jitter = 0.1;
    bool poisson_arrivals = false;
    // A pod that rejects a request for memory takes no further requests until
    // one of its in-flight requests finishes.
    bool memory_backoff = true;
    // Re-checks admission, memory and clock invariants after every event.
    bool check_invariants = false;
    std::uint64_t rng_seed = 1;

    void validate() const;
};

// Hard admission limit enforced by the queue-proxy and the soft per-pod level
// the autoscaler sizes the deployment for. limit == 0 means unlimited.
struct ConcurrencySetting {
    int limit = 0;
    int target = 100;
};

struct ResourceSnapshot {
    double avg_cpu_util = 0.0;
    double avg_mem_util = 0.0;

    bool operator==(const ResourceSnapshot&) const = default;
};

struct LoadTestReport {
    double throughput_rps = 0.0;
    double mean_latency_ms = 0.0;
    double p95_latency_ms = 0.0;
    double min_latency_ms = 0.0;
    double max_latency_ms = 0.0;
    double success_ratio = 0.0;
    std::int64_t issued = 0;
    std::int64_t succeeded = 0;
    std::int64_t failed = 0;
    std::int64_t rejected_memory = 0;
    std::int64_t timed_out = 0;
    // Requests that arrived while no pod was ready and had to wait in the activator.
    std::int64_t activator_buffered = 0;
    // Latency of the first issued request, or -1 if it failed.
    double first_latency_ms = -1.0;
    // Measurement span: from the first request until the last response, at least the attack duration.
    double span_ms = 0.0;
    int peak_pods = 0;
    int peak_in_flight_per_pod = 0;
    ResourceSnapshot resources;

    bool operator==(const LoadTestReport&) const = default;
};

enum class PodPhase { Starting, Ready, Terminating, Gone };

struct PodState {
    PodPhase phase = PodPhase::Starting;
    std::int64_t ready_at_us = 0;
    int in_flight = 0;
    double mem_used_mb = 0.0;

    // Processor sharing bookkeeping: attained service per request (virtual
    // time, in CPU microseconds) and the finish tags of requests still
    // computing, keyed by (tag, request index).
    double virtual_us = 0.0;
    std::int64_t virtual_at_us = 0;
    std::uint64_t epoch = 0;
    bool memory_blocked = false;
    std::set<std::pair<double, std::int64_t>> computing;
};

/// Pods the autoscaler wants for an observed concurrency, clamped to [min_pods, max_pods].
int desired_pods(double observed_concurrency, int target, double target_percentage, int min_pods,
                 int max_pods);

/// Single-owner discrete-event model of one Knative revision: activator buffer,
/// queue-proxy admission, processor-sharing CPU and a periodic pod autoscaler.
class SimEnv {
public:
    explicit SimEnv(SimConfig config);
    const SimConfig& config() const { return config_; }

    /// Clock to zero, buffers emptied, pods scaled to zero (or one warm pod), RNG reseeded.
    void reset();

    /// Limit mode: the hard limit is also the autoscaler's per-pod target.
    LoadTestReport run_load_test(int concurrency_limit, const ServiceDemand& demand, double rate_rps,
                                 std::int64_t duration_ms);

    LoadTestReport run_load_test(const ConcurrencySetting& setting, const ServiceDemand& demand,
                                 double rate_rps, std::int64_t duration_ms);

    /// Time-weighted utilisation over the last finished test window.
    ResourceSnapshot resource_snapshot() const { return last_snapshot_; }

    std::int64_t clock_us() const { return clock_us_; }
    const std::vector<PodState>& pods() const { return pods_; }
    int live_pods() const;
    int ready_pods() const;

    // Line-delimited JSON event trace; nullptr disables.
    void set_trace(std::ostream* trace) { trace_ = trace; }

private:
    class Run;

    SimConfig config_;
    std::int64_t clock_us_ = 0;
    std::mt19937_64 rng_;
    std::vector<PodState> pods_;
    ResourceSnapshot last_snapshot_;
    std::ostream* trace_ = nullptr;
};

}  // namespace knsim
