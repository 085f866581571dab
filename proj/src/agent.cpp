#include "knsim/agent.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

namespace knsim {

void Hyperparams::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw AgentError("alpha must lie in (0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw AgentError("gamma must lie in [0, 1)");
    if (!(epsilon_min >= 0.0 && epsilon_min <= epsilon_start && epsilon_start <= 1.0))
        throw AgentError("epsilon bounds must satisfy 0 <= epsilon_min <= epsilon_start <= 1");
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw AgentError("epsilon_decay must lie in (0, 1]");
    if (exploration_start_iter < 0) throw AgentError("exploration_start_iter must be non-negative");
    if (n_bins < 1) throw AgentError("n_bins must be at least 1");
    if (conc_min < 1) throw AgentError("conc_min must be at least 1");
    if (conc_max < conc_min) throw AgentError("conc_max must not be below conc_min");
    if ((conc_max - conc_min) % kConcStep != 0) throw AgentError("conc_max - conc_min must be a multiple of 20");
    if (start_conc != 0 && !on_grid(start_conc)) throw AgentError("start_conc must be 0 or a grid value");
}

bool Hyperparams::on_grid(int conc) const {
    return conc >= conc_min && conc <= conc_max && (conc - conc_min) % kConcStep == 0;
}

int Hyperparams::starting_concurrency() const {
    if (start_conc != 0) return start_conc;
    const int steps = (conc_max - conc_min) / kConcStep;
    return conc_min + ((steps + 1) / 2) * kConcStep;
}

double QTable::value(const AgentState& s, Action a) const {
    auto it = entries_.find({s.conc, s.cpu_bin, s.mem_bin, a.delta});
    return it == entries_.end() ? 0.0 : it->second;
}

void QTable::set(const AgentState& s, Action a, double v) {
    if (!std::isfinite(v)) throw AgentError("Q-values must be finite");
    entries_[{s.conc, s.cpu_bin, s.mem_bin, a.delta}] = v;
}

namespace {

int to_bin(double x, int n_bins) {
    const int b = static_cast<int>(std::floor(x * n_bins));
    return std::clamp(b, 0, n_bins - 1);
}

}  // namespace

AgentState discretize(int conc, double cpu, double mem, const Hyperparams& hp) {
    if (!hp.on_grid(conc)) throw AgentError("concurrency " + std::to_string(conc) + " is not on the grid");
    if (!(cpu >= 0.0 && cpu <= 1.0)) throw AgentError("cpu utilisation must lie in [0, 1]");
    if (!(mem >= 0.0 && mem <= 1.0)) throw AgentError("memory utilisation must lie in [0, 1]");
    return {conc, to_bin(cpu, hp.n_bins), to_bin(mem, hp.n_bins)};
}

std::vector<Action> valid_actions(const AgentState& state, const Hyperparams& hp) {
    if (!hp.on_grid(state.conc))
        throw AgentError("concurrency " + std::to_string(state.conc) + " is not on the grid");
    std::vector<Action> out;
    for (Action a : kAllActions) {
        const int next = state.conc + a.delta;
        if (next >= hp.conc_min && next <= hp.conc_max) out.push_back(a);
    }
    return out;
}

double epsilon_at(std::int64_t iteration, const Hyperparams& hp) {
    if (iteration < hp.exploration_start_iter) return 1.0;
    const double decayed =
        hp.epsilon_start * std::pow(hp.epsilon_decay, static_cast<double>(iteration - hp.exploration_start_iter));
    return std::max(hp.epsilon_min, decayed);
}

Action greedy_action(const QTable& q, const AgentState& state, const Hyperparams& hp) {
    const auto actions = valid_actions(state, hp);
    Action best = actions.front();
    double best_v = q.value(state, best);
    for (std::size_t i = 1; i < actions.size(); ++i) {
        const double v = q.value(state, actions[i]);
        if (v > best_v) {
            best = actions[i];
            best_v = v;
        }
    }
    return best;
}

Action select_action(const QTable& q, const AgentState& state, double epsilon, const Hyperparams& hp,
                     std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) {
        const auto actions = valid_actions(state, hp);
        std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
        return actions[pick(rng)];
    }
    return greedy_action(q, state, hp);
}

double reward(double throughput, const RewardConfig& rc) {
    if (!(throughput > 0.0)) throw AgentError("reward needs a positive throughput");
    if (!rc.ref_value || !(*rc.ref_value > 0.0)) throw AgentError("reward needs a positive reference value");
    const double ref = *rc.ref_value;
    if (throughput <= ref * (1.0 - rc.tolerance) || throughput >= ref * (1.0 + rc.tolerance))
        return throughput / ref;
    return 1.0;
}

RewardConfig update_ref(RewardConfig rc, double throughput) {
    if (throughput > 0.0 && (!rc.ref_value || throughput > *rc.ref_value)) rc.ref_value = throughput;
    return rc;
}

void q_update(QTable& q, const AgentState& s, Action a, double r, const AgentState& s_next,
              const Hyperparams& hp) {
    double max_next = 0.0;
    bool first = true;
    for (Action b : valid_actions(s_next, hp)) {
        const double v = q.value(s_next, b);
        if (first || v > max_next) max_next = v;
        first = false;
    }
    const double target = r + hp.gamma * max_next;
    q.set(s, a, (1.0 - hp.alpha) * q.value(s, a) + hp.alpha * target);
}

namespace {

constexpr const char* kMagic = "knsim-qtable";

[[noreturn]] void malformed(const std::filesystem::path& path, int line, const std::string& why) {
    throw QTableIoError(QTableIoError::Kind::Malformed,
                        path.string() + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

void save_qtable(const QTable& q, const std::filesystem::path& path) {
    std::ostringstream body;
    body << kMagic << ' ' << kQTableFormatVersion << '\n';
    body << "entries " << q.size() << '\n';
    body << "# conc cpu_bin mem_bin delta value\n";
    char num[64];
    for (const auto& [key, v] : q.entries()) {
        const auto& [conc, cpu, mem, delta] = key;
        std::snprintf(num, sizeof num, "%.17g", v);
        body << conc << ' ' << cpu << ' ' << mem << ' ' << delta << ' ' << num << '\n';
    }
    body << "end\n";

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw QTableIoError(QTableIoError::Kind::Unwritable, "cannot write " + tmp.string());
        out << body.str();
        out.flush();
        if (!out) throw QTableIoError(QTableIoError::Kind::Unwritable, "cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw QTableIoError(QTableIoError::Kind::Unwritable, "cannot replace " + path.string());
    }
}

QTable load_qtable(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw QTableIoError(QTableIoError::Kind::MissingFile, "cannot open " + path.string());

    std::string line;
    int lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.front() != '#') return true;
        }
        return false;
    };

    if (!next_line()) malformed(path, lineno, "empty file");
    {
        std::istringstream hs(line);
        std::string magic;
        int version = 0;
        if (!(hs >> magic >> version) || magic != kMagic) malformed(path, lineno, "bad header");
        if (version != kQTableFormatVersion)
            throw QTableIoError(QTableIoError::Kind::VersionMismatch,
                                path.string() + ": format version " + std::to_string(version) +
                                    ", expected " + std::to_string(kQTableFormatVersion));
    }

    if (!next_line()) malformed(path, lineno, "missing entry count");
    std::size_t expected = 0;
    {
        std::istringstream cs(line);
        std::string word;
        if (!(cs >> word >> expected) || word != "entries") malformed(path, lineno, "bad entry count");
    }

    QTable q;
    std::size_t seen = 0;
    bool ended = false;
    while (next_line()) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream rs(line);
        AgentState s;
        Action a;
        std::string vtext, extra;
        if (!(rs >> s.conc >> s.cpu_bin >> s.mem_bin >> a.delta >> vtext) || (rs >> extra))
            malformed(path, lineno, "bad record");
        if (a.delta != -kConcStep && a.delta != 0 && a.delta != kConcStep)
            malformed(path, lineno, "bad action delta");
        errno = 0;
        char* endp = nullptr;
        const double v = std::strtod(vtext.c_str(), &endp);
        if (errno != 0 || *endp != '\0' || !std::isfinite(v)) malformed(path, lineno, "bad value");
        if (q.entries().count({s.conc, s.cpu_bin, s.mem_bin, a.delta}))
            malformed(path, lineno, "duplicate record");
        q.set(s, a, v);
        ++seen;
    }
    if (!ended) malformed(path, lineno, "missing end marker (truncated file?)");
    if (seen != expected)
        malformed(path, lineno,
                  "entry count mismatch: header says " + std::to_string(expected) + ", found " +
                      std::to_string(seen));
    if (next_line()) malformed(path, lineno, "content after end marker");
    return q;
}

QLearningAgent::QLearningAgent(Hyperparams hp, RewardConfig rc, std::uint64_t seed)
    : hp_(hp), rc_(rc), rng_(seed) {
    hp_.validate();
    if (!(rc_.tolerance >= 0.0 && rc_.tolerance < 1.0)) throw AgentError("tolerance must lie in [0, 1)");
}

Action QLearningAgent::act(const AgentState& state, std::int64_t iteration) {
    return select_action(q_, state, epsilon_at(iteration, hp_), hp_, rng_);
}

double QLearningAgent::learn(const AgentState& s, Action a, double throughput, const AgentState& s_next) {
    rc_ = update_ref(rc_, throughput);
    const double r = throughput > 0.0 ? reward(throughput, rc_) : 0.0;
    q_update(q_, s, a, r, s_next, hp_);
    return r;
}

}  // namespace knsim
