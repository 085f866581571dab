#include "knsim/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <ostream>
#include <queue>
#include <string>

namespace knsim {

namespace {

std::int64_t to_us(double ms) { return static_cast<std::int64_t>(std::llround(ms * 1000.0)); }

enum class RequestState : std::uint8_t { Buffered, Computing, Waiting, Done, Failed };

struct Request {
    std::int64_t arrival_us = 0;
    double cpu_us = 0.0;
    double tag = 0.0;
    int pod = -1;
    RequestState state = RequestState::Buffered;
};

enum class EventKind : std::uint8_t { Arrival, PodReady, CpuDone, WaitDone, Timeout, Tick };

const char* event_name(EventKind kind) {
    switch (kind) {
        case EventKind::Arrival: return "arrival";
        case EventKind::PodReady: return "pod_ready";
        case EventKind::CpuDone: return "cpu_done";
        case EventKind::WaitDone: return "wait_done";
        case EventKind::Timeout: return "timeout";
        case EventKind::Tick: return "autoscale";
    }
    return "?";
}

struct Event {
    std::int64_t time_us;
    std::uint64_t seq;
    EventKind kind;
    std::int64_t subject;  // request or pod index
    std::uint64_t epoch;

    bool operator>(const Event& other) const {
        return time_us != other.time_us ? time_us > other.time_us : seq > other.seq;
    }
};

// Slack for comparing processor-sharing finish tags after integer-microsecond rounding.
constexpr double kTagSlackUs = 1e-3;
constexpr double kMemSlackMb = 1e-9;

}  // namespace

void SimConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw SimError(std::string("invalid simenv config: ") + what);
    };
    require(pod_cpu_cores > 0.0, "pod_cpu_cores must be > 0");
    require(pod_mem_mb > 0.0, "pod_mem_mb must be > 0");
    require(pod_idle_mem_mb >= 0.0 && pod_idle_mem_mb < pod_mem_mb,
            "pod_idle_mem_mb must be in [0, pod_mem_mb)");
    require(cold_start_ms >= 0.0, "cold_start_ms must be >= 0");
    require(max_pods >= 1, "max_pods must be >= 1");
    require(scale_interval_ms > 0.0, "scale_interval_ms must be > 0");
    require(target_percentage > 0.0 && target_percentage <= 1.0,
            "target_percentage must be in (0, 1]");
    require(request_timeout_ms >= 0.0, "request_timeout_ms must be >= 0");
    require(cpu_jitter >= 0.0, "cpu_jitter must be >= 0");
}

int desired_pods(double observed_concurrency, int target, double target_percentage, int min_pods,
                 int max_pods) {
    const double per_pod = static_cast<double>(target) * target_percentage;
    const double raw = std::ceil(std::max(0.0, observed_concurrency) / per_pod - 1e-9);
    const double clamped = std::clamp(raw, static_cast<double>(min_pods), static_cast<double>(max_pods));
    return static_cast<int>(clamped);
}

class SimEnv::Run {
public:
    Run(SimEnv& env, const ConcurrencySetting& setting, const ServiceDemand& demand, double rate_rps,
        std::int64_t duration_ms)
        : env_(env),
          cfg_(env.config_),
          pods_(env.pods_),
          setting_(setting),
          demand_(demand),
          rate_rps_(rate_rps),
          start_us_(env.clock_us_),
          attack_end_us_(env.clock_us_ + duration_ms * 1000),
          wait_us_(to_us(demand.wait_ms)),
          timeout_us_(to_us(cfg_.request_timeout_ms)),
          acc_at_us_(env.clock_us_) {
        if (!cfg_.poisson_arrivals) {
            planned_ = std::max<std::int64_t>(
                1, std::llround(rate_rps * static_cast<double>(duration_ms) / 1000.0));
        }
        for (std::size_t i = 0; i < pods_.size(); ++i) {
            if (pods_[i].phase == PodPhase::Starting) {
                push(std::max(pods_[i].ready_at_us, start_us_), EventKind::PodReady,
                     static_cast<std::int64_t>(i));
            }
        }
    }

    LoadTestReport execute() {
        push(start_us_, EventKind::Arrival, 0);
        push(start_us_ + to_us(cfg_.scale_interval_ms), EventKind::Tick, 0);

        while (!(arrivals_done_ && resolved_ == static_cast<std::int64_t>(requests_.size()))) {
            const Event ev = events_.top();
            events_.pop();
            if (cfg_.check_invariants && ev.time_us < env_.clock_us_) {
                throw std::logic_error("event scheduled in the past");
            }
            integrate(ev.time_us);
            env_.clock_us_ = ev.time_us;
            if (env_.trace_ != nullptr) trace(ev);
            handle(ev);
            if (cfg_.check_invariants) check_invariants();
        }

        const std::int64_t window_end = std::max(attack_end_us_, last_response_us_);
        integrate(window_end);
        env_.clock_us_ = std::max(env_.clock_us_, window_end);
        return report(window_end);
    }

private:
    void push(std::int64_t t, EventKind kind, std::int64_t subject, std::uint64_t epoch = 0) {
        events_.push(Event{t, seq_++, kind, subject, epoch});
    }

    void handle(const Event& ev) {
        switch (ev.kind) {
            case EventKind::Arrival: on_arrival(); break;
            case EventKind::PodReady: on_pod_ready(static_cast<std::size_t>(ev.subject)); break;
            case EventKind::CpuDone: on_cpu_done(static_cast<std::size_t>(ev.subject), ev.epoch); break;
            case EventKind::WaitDone: {
                auto& req = requests_[static_cast<std::size_t>(ev.subject)];
                if (req.state == RequestState::Waiting) complete(ev.subject);
                break;
            }
            case EventKind::Timeout: {
                const auto state = requests_[static_cast<std::size_t>(ev.subject)].state;
                if (state != RequestState::Done && state != RequestState::Failed) {
                    ++timed_out_;
                    fail(ev.subject);
                }
                break;
            }
            case EventKind::Tick: on_tick(); break;
        }
    }

    void on_arrival() {
        const auto now = env_.clock_us_;
        Request req;
        req.arrival_us = now;
        req.cpu_us = demand_.cpu_ms * 1000.0 * (1.0 + cfg_.cpu_jitter * unit_(env_.rng_));
        const auto index = static_cast<std::int64_t>(requests_.size());
        requests_.push_back(req);
        buffer_.push_back(index);
        ++buffered_live_;

        if (env_.ready_pods() == 0) ++activator_buffered_;
        if (env_.live_pods() == 0) {
            // Activator pokes the autoscaler immediately on scale-from-zero.
            const int want = desired_pods(static_cast<double>(buffered_live_), setting_.target,
                                          cfg_.target_percentage, 1, cfg_.max_pods);
            scale_to(want);
        }
        if (timeout_us_ > 0) push(now + timeout_us_, EventKind::Timeout, index);
        dispatch();
        schedule_next_arrival(now);
    }

    void schedule_next_arrival(std::int64_t now) {
        if (cfg_.poisson_arrivals) {
            const double gap_us = exp_(env_.rng_) * 1e6 / rate_rps_;
            const auto next = now + std::max<std::int64_t>(1, std::llround(gap_us));
            if (next < attack_end_us_) {
                push(next, EventKind::Arrival, 0);
            } else {
                arrivals_done_ = true;
            }
            return;
        }
        const auto issued = static_cast<std::int64_t>(requests_.size());
        if (issued >= planned_) {
            arrivals_done_ = true;
            return;
        }
        const auto offset =
            static_cast<std::int64_t>(std::floor(static_cast<double>(issued) * 1e6 / rate_rps_));
        push(start_us_ + offset, EventKind::Arrival, 0);
    }

    void on_pod_ready(std::size_t index) {
        auto& pod = pods_[index];
        if (pod.phase != PodPhase::Starting) return;
        pod.phase = PodPhase::Ready;
        pod.mem_used_mb = cfg_.pod_idle_mem_mb;
        pod.virtual_at_us = env_.clock_us_;
        dispatch();
    }

    void on_tick() {
        const auto observed = static_cast<double>(in_flight_total_ + buffered_live_);
        const int floor_pods = cfg_.scale_to_zero ? 0 : 1;
        scale_to(desired_pods(observed, setting_.target, cfg_.target_percentage, floor_pods,
                              cfg_.max_pods));
        push(env_.clock_us_ + to_us(cfg_.scale_interval_ms), EventKind::Tick, 0);
    }

    void scale_to(int want) {
        int live = env_.live_pods();
        const auto now = env_.clock_us_;
        while (live < want) {
            PodState pod;
            pod.phase = PodPhase::Starting;
            pod.ready_at_us = now + to_us(cfg_.cold_start_ms);
            pods_.push_back(std::move(pod));
            push(pods_.back().ready_at_us, EventKind::PodReady,
                 static_cast<std::int64_t>(pods_.size() - 1));
            ++live;
        }
        // Shed in order: pods still starting (newest first), idle ready pods, then
        // drain the least-loaded busy pods.
        for (auto i = pods_.size(); live > want && i-- > 0;) {
            if (pods_[i].phase == PodPhase::Starting) {
                pods_[i].phase = PodPhase::Gone;
                --live;
            }
        }
        for (auto i = pods_.size(); live > want && i-- > 0;) {
            if (pods_[i].phase == PodPhase::Ready && pods_[i].in_flight == 0) {
                retire(i);
                --live;
            }
        }
        while (live > want) {
            std::size_t pick = pods_.size();
            for (std::size_t i = 0; i < pods_.size(); ++i) {
                if (pods_[i].phase == PodPhase::Ready &&
                    (pick == pods_.size() || pods_[i].in_flight < pods_[pick].in_flight)) {
                    pick = i;
                }
            }
            pods_[pick].phase = PodPhase::Terminating;
            --live;
        }
        peak_pods_ = std::max(peak_pods_, env_.live_pods());
    }

    void retire(std::size_t index) {
        auto& pod = pods_[index];
        pod.phase = PodPhase::Gone;
        pod.mem_used_mb = 0.0;
        pod.computing.clear();
    }

    bool has_slot(const PodState& pod) const {
        return pod.phase == PodPhase::Ready && !pod.memory_blocked && (setting_.limit == 0 || pod.in_flight < setting_.limit);
    }

    void dispatch() {
        while (buffered_live_ > 0) {
            std::size_t pick = pods_.size();
            for (std::size_t i = 0; i < pods_.size(); ++i) {
                if (has_slot(pods_[i]) &&
                    (pick == pods_.size() || pods_[i].in_flight < pods_[pick].in_flight)) {
                    pick = i;
                }
            }
            if (pick == pods_.size()) return;
            while (requests_[static_cast<std::size_t>(buffer_.front())].state != RequestState::Buffered) {
                buffer_.pop_front();
            }
            const auto index = buffer_.front();
            buffer_.pop_front();
            --buffered_live_;
            admit(index, pick);
        }
    }

    void admit(std::int64_t index, std::size_t pod_index) {
        auto& req = requests_[static_cast<std::size_t>(index)];
        auto& pod = pods_[pod_index];
        if (pod.mem_used_mb + demand_.mem_mb > cfg_.pod_mem_mb + kMemSlackMb) {
            ++rejected_memory_;
            req.state = RequestState::Failed;
            resolve();
            if (cfg_.memory_backoff && pod.in_flight > 0) pod.memory_blocked = true;
            return;
        }
        req.pod = static_cast<int>(pod_index);
        ++pod.in_flight;
        pod.mem_used_mb += demand_.mem_mb;
        ++in_flight_total_;
        peak_in_flight_ = std::max(peak_in_flight_, pod.in_flight);
        if (req.cpu_us > 0.0) {
            advance(pod);
            req.state = RequestState::Computing;
            req.tag = pod.virtual_us + req.cpu_us;
            pod.computing.emplace(req.tag, index);
            reschedule(pod_index);
        } else {
            start_wait(index);
        }
    }

    double share_rate(const PodState& pod) const {
        const double n = static_cast<double>(pod.computing.size());
        return std::min(1.0, cfg_.pod_cpu_cores / n);
    }

    void advance(PodState& pod) {
        const auto now = env_.clock_us_;
        if (!pod.computing.empty()) {
            pod.virtual_us += share_rate(pod) * static_cast<double>(now - pod.virtual_at_us);
        }
        pod.virtual_at_us = now;
    }

    void reschedule(std::size_t pod_index) {
        auto& pod = pods_[pod_index];
        ++pod.epoch;
        if (pod.computing.empty()) return;
        const double remaining = pod.computing.begin()->first - pod.virtual_us;
        const double dt = std::max(0.0, remaining / share_rate(pod));
        push(env_.clock_us_ + static_cast<std::int64_t>(std::ceil(dt - kTagSlackUs)), EventKind::CpuDone,
             static_cast<std::int64_t>(pod_index), pod.epoch);
    }

    void on_cpu_done(std::size_t pod_index, std::uint64_t epoch) {
        auto& pod = pods_[pod_index];
        if (pod.epoch != epoch || pod.phase == PodPhase::Gone) return;
        advance(pod);
        std::vector<std::int64_t> finished;
        while (!pod.computing.empty() && pod.computing.begin()->first <= pod.virtual_us + kTagSlackUs) {
            finished.push_back(pod.computing.begin()->second);
            pod.computing.erase(pod.computing.begin());
        }
        reschedule(pod_index);
        for (const auto index : finished) start_wait(index);
    }

    void start_wait(std::int64_t index) {
        auto& req = requests_[static_cast<std::size_t>(index)];
        if (wait_us_ > 0) {
            req.state = RequestState::Waiting;
            push(env_.clock_us_ + wait_us_, EventKind::WaitDone, index);
        } else {
            complete(index);
        }
    }

    void complete(std::int64_t index) {
        auto& req = requests_[static_cast<std::size_t>(index)];
        req.state = RequestState::Done;
        const auto latency_us = env_.clock_us_ - req.arrival_us;
        latencies_ms_.push_back(static_cast<double>(latency_us) / 1000.0);
        if (index == 0) first_latency_ms_ = latencies_ms_.back();
        release(req);
        resolve();
        dispatch();
    }

    void fail(std::int64_t index) {
        auto& req = requests_[static_cast<std::size_t>(index)];
        const auto previous = req.state;
        req.state = RequestState::Failed;
        if (previous == RequestState::Buffered) {
            --buffered_live_;
        } else {
            if (previous == RequestState::Computing) {
                auto& pod = pods_[static_cast<std::size_t>(req.pod)];
                advance(pod);
                pod.computing.erase({req.tag, index});
                reschedule(static_cast<std::size_t>(req.pod));
            }
            release(req);
        }
        resolve();
        dispatch();
    }

    void release(const Request& req) {
        auto& pod = pods_[static_cast<std::size_t>(req.pod)];
        --pod.in_flight;
        pod.mem_used_mb -= demand_.mem_mb;
        pod.memory_blocked = false;
        --in_flight_total_;
        if (pod.phase == PodPhase::Terminating && pod.in_flight == 0) {
            retire(static_cast<std::size_t>(req.pod));
        }
    }

    void resolve() {
        ++resolved_;
        last_response_us_ = std::max(last_response_us_, env_.clock_us_);
    }

    void integrate(std::int64_t until) {
        const auto dt = static_cast<double>(until - acc_at_us_);
        if (dt <= 0.0) return;
        for (const auto& pod : pods_) {
            if (pod.phase != PodPhase::Ready && pod.phase != PodPhase::Terminating) continue;
            const double active = static_cast<double>(pod.computing.size());
            busy_area_ += std::min(active, cfg_.pod_cpu_cores) / cfg_.pod_cpu_cores * dt;
            mem_area_ += pod.mem_used_mb / cfg_.pod_mem_mb * dt;
            pod_time_ += dt;
        }
        acc_at_us_ = until;
    }

    void check_invariants() const {
        for (const auto& pod : pods_) {
            if (setting_.limit > 0 && pod.in_flight > setting_.limit) {
                throw std::logic_error("pod exceeds its concurrency limit");
            }
            if (pod.mem_used_mb > cfg_.pod_mem_mb + kMemSlackMb) {
                throw std::logic_error("pod exceeds its memory capacity");
            }
            if (pod.phase == PodPhase::Starting && pod.in_flight != 0) {
                throw std::logic_error("starting pod holds requests");
            }
        }
    }

    void trace(const Event& ev) const {
        *env_.trace_ << R"({"t_us":)" << ev.time_us << R"(,"event":")" << event_name(ev.kind)
                     << R"(","subject":)" << ev.subject << R"(,"buffered":)" << buffered_live_
                     << R"(,"in_flight":)" << in_flight_total_ << R"(,"pods":)" << env_.live_pods()
                     << "}\n";
    }

    LoadTestReport report(std::int64_t window_end) {
        LoadTestReport out;
        out.issued = static_cast<std::int64_t>(requests_.size());
        out.succeeded = static_cast<std::int64_t>(latencies_ms_.size());
        out.failed = out.issued - out.succeeded;
        out.rejected_memory = rejected_memory_;
        out.timed_out = timed_out_;
        out.activator_buffered = activator_buffered_;
        out.first_latency_ms = first_latency_ms_;
        out.span_ms = static_cast<double>(window_end - start_us_) / 1000.0;
        out.throughput_rps = static_cast<double>(out.succeeded) / (out.span_ms / 1000.0);
        out.success_ratio =
            out.issued > 0 ? static_cast<double>(out.succeeded) / static_cast<double>(out.issued) : 0.0;
        out.peak_pods = peak_pods_;
        out.peak_in_flight_per_pod = peak_in_flight_;
        if (!latencies_ms_.empty()) {
            double sum = 0.0;
            for (const double l : latencies_ms_) sum += l;
            out.mean_latency_ms = sum / static_cast<double>(latencies_ms_.size());
            std::sort(latencies_ms_.begin(), latencies_ms_.end());
            const auto rank = static_cast<std::size_t>(
                std::ceil(0.95 * static_cast<double>(latencies_ms_.size())));
            out.p95_latency_ms = latencies_ms_[std::max<std::size_t>(rank, 1) - 1];
            out.min_latency_ms = latencies_ms_.front();
            out.max_latency_ms = latencies_ms_.back();
        }
        if (pod_time_ > 0.0) {
            out.resources.avg_cpu_util = std::clamp(busy_area_ / pod_time_, 0.0, 1.0);
            out.resources.avg_mem_util = std::clamp(mem_area_ / pod_time_, 0.0, 1.0);
        }
        return out;
    }

    SimEnv& env_;
    const SimConfig& cfg_;
    std::vector<PodState>& pods_;
    ConcurrencySetting setting_;
    ServiceDemand demand_;
    double rate_rps_;
    std::int64_t start_us_;
    std::int64_t attack_end_us_;
    std::int64_t wait_us_;
    std::int64_t timeout_us_;

    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::uint64_t seq_ = 0;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::exponential_distribution<double> exp_{1.0};

    std::vector<Request> requests_;
    std::deque<std::int64_t> buffer_;
    std::int64_t buffered_live_ = 0;
    std::int64_t in_flight_total_ = 0;
    std::int64_t planned_ = 0;
    bool arrivals_done_ = false;
    std::int64_t resolved_ = 0;

    std::vector<double> latencies_ms_;
    double first_latency_ms_ = -1.0;
    std::int64_t last_response_us_ = 0;
    std::int64_t rejected_memory_ = 0;
    std::int64_t timed_out_ = 0;
    std::int64_t activator_buffered_ = 0;
    int peak_pods_ = 0;
    int peak_in_flight_ = 0;

    std::int64_t acc_at_us_;
    double busy_area_ = 0.0;
    double mem_area_ = 0.0;
    double pod_time_ = 0.0;
};

SimEnv::SimEnv(SimConfig config) : config_(config) {
    config_.validate();
    reset();
}

void SimEnv::reset() {
    clock_us_ = 0;
    rng_.seed(config_.rng_seed);
    pods_.clear();
    if (!config_.scale_to_zero) {
        PodState warm;
        warm.phase = PodPhase::Ready;
        warm.mem_used_mb = config_.pod_idle_mem_mb;
        pods_.push_back(std::move(warm));
    }
    last_snapshot_ = ResourceSnapshot{};
}

int SimEnv::live_pods() const {
    return static_cast<int>(std::count_if(pods_.begin(), pods_.end(), [](const PodState& p) {
        return p.phase == PodPhase::Starting || p.phase == PodPhase::Ready;
    }));
}

int SimEnv::ready_pods() const {
    return static_cast<int>(std::count_if(pods_.begin(), pods_.end(),
                                          [](const PodState& p) { return p.phase == PodPhase::Ready; }));
}

LoadTestReport SimEnv::run_load_test(int concurrency_limit, const ServiceDemand& demand, double rate_rps,
                                     std::int64_t duration_ms) {
    if (concurrency_limit < 1 || concurrency_limit > 1000) {
        throw SimError("concurrency limit must be in [1, 1000], got " + std::to_string(concurrency_limit));
    }
    return run_load_test(ConcurrencySetting{concurrency_limit, concurrency_limit}, demand, rate_rps,
                         duration_ms);
}

LoadTestReport SimEnv::run_load_test(const ConcurrencySetting& setting, const ServiceDemand& demand,
                                     double rate_rps, std::int64_t duration_ms) {
    if (setting.limit < 0 || setting.limit > 1000) {
        throw SimError("concurrency limit must be in [0, 1000], got " + std::to_string(setting.limit));
    }
    if (setting.target < 1) throw SimError("concurrency target must be >= 1");
    if (!(rate_rps > 0.0) || !std::isfinite(rate_rps)) throw SimError("rate_rps must be positive");
    if (duration_ms <= 0) throw SimError("duration_ms must be positive");
    if (demand.cpu_ms < 0.0 || demand.mem_mb < 0.0 || demand.wait_ms < 0.0) {
        throw SimError("service demand must be non-negative");
    }
    Run run(*this, setting, demand, rate_rps, duration_ms);
    auto report = run.execute();
    last_snapshot_ = report.resources;
    return report;
}

}  // namespace knsim
