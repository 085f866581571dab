#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace knsim {

inline constexpr int kConcStep = 20;

struct Action {
    int delta = 0;

    auto operator<=>(const Action&) const = default;
};

/// Fixed action order; argmax ties resolve to the earliest entry.
inline constexpr std::array<Action, 3> kAllActions = {Action{-kConcStep}, Action{0}, Action{kConcStep}};

struct AgentState {
    int conc = 0;
    int cpu_bin = 0;
    int mem_bin = 0;

    auto operator<=>(const AgentState&) const = default;
};

struct Hyperparams {
    double alpha = 0.5;
    double gamma = 0.9;
    double epsilon_start = 1.0;
    double epsilon_decay = 0.995;
    double epsilon_min = 0.1;
    int exploration_start_iter = 50;
    int n_bins = 10;
    int conc_min = 10;
    int conc_max = 310;
    // 0 picks the grid point nearest the midpoint of [conc_min, conc_max] (upper on ties).
    int start_conc = 0;

    void validate() const;
    bool on_grid(int conc) const;
    int starting_concurrency() const;
};

struct RewardConfig {
    double tolerance = 0.05;
    std::optional<double> ref_value;

    bool operator==(const RewardConfig&) const = default;
};

class AgentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Sparse state-action value store. Absent pairs read as 0.0.
class QTable {
public:
    using Key = std::tuple<int, int, int, int>;  // conc, cpu_bin, mem_bin, delta

    double value(const AgentState& s, Action a) const;
    void set(const AgentState& s, Action a, double v);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::map<Key, double>& entries() const { return entries_; }

    bool operator==(const QTable&) const = default;

private:
    std::map<Key, double> entries_;
};

AgentState discretize(int conc, double cpu, double mem, const Hyperparams& hp);

std::vector<Action> valid_actions(const AgentState& state, const Hyperparams& hp);

double epsilon_at(std::int64_t iteration, const Hyperparams& hp);

/// Epsilon-greedy choice among the valid actions of `state`. One uniform draw
/// decides explore/exploit; exploring draws a second uniform index.
Action select_action(const QTable& q, const AgentState& state, double epsilon, const Hyperparams& hp,
                     std::mt19937_64& rng);

/// Greedy action: first maximum in kAllActions order among valid actions.
Action greedy_action(const QTable& q, const AgentState& state, const Hyperparams& hp);

/// Throughput ratio to the reference value, flattened to 1 strictly inside
/// the tolerance band. Throws AgentError on non-positive input.
double reward(double throughput, const RewardConfig& rc);

RewardConfig update_ref(RewardConfig rc, double throughput);

void q_update(QTable& q, const AgentState& s, Action a, double r, const AgentState& s_next,
              const Hyperparams& hp);

class QTableIoError : public std::runtime_error {
public:
    enum class Kind { MissingFile, Malformed, VersionMismatch, Unwritable };

    QTableIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr int kQTableFormatVersion = 1;

void save_qtable(const QTable& q, const std::filesystem::path& path);
QTable load_qtable(const std::filesystem::path& path);

/// Single-owner Q-learning state machine: table, reward reference and the
/// exploration RNG.
class QLearningAgent {
public:
    QLearningAgent(Hyperparams hp, RewardConfig rc, std::uint64_t seed);

    Action act(const AgentState& state, std::int64_t iteration);

    /// Updates the reference value, scores `throughput` and applies one
    /// Q-update. Returns the reward. Zero throughput scores 0 without
    /// touching the reference.
    double learn(const AgentState& s, Action a, double throughput, const AgentState& s_next);

    const QTable& table() const { return q_; }
    const RewardConfig& reward_config() const { return rc_; }
    const Hyperparams& hyperparams() const { return hp_; }

private:
    Hyperparams hp_;
    RewardConfig rc_;
    QTable q_;
    std::mt19937_64 rng_;
};

}  // namespace knsim
