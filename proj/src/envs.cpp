#include "ddt/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace ddt {

// --- reacher --------------------------------------------------------------

std::vector<double> LinearReacher::reset(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x5eed));
    std::uniform_real_distribution<double> start(-1.0, 1.0);
    x_ = start(rng);
    t_ = 0;
    return {x_};
}

StepResult LinearReacher::step(const Action& action) {
    if (done()) {
        throw std::logic_error("reacher: step called on a finished episode");
    }
    if (action.continuous.size() != 1) {
        throw std::invalid_argument("reacher: expects one continuous action value");
    }
    const double a = std::clamp(action.continuous[0], -1.0, 1.0);
    x_ = std::clamp(x_ + kStepSize * a, -kBound, kBound);
    ++t_;
    return {{x_}, -std::abs(x_ - kGoal), done()};
}

Action LinearReacher::expert_action() const {
    return Action::scalar(std::clamp(10.0 * (kGoal - x_), -1.0, 1.0));
}

Action LinearReacher::random_action(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    return Action::scalar(dist(rng));
}

void LinearReacher::set_state(double x, int t) {
    if (std::abs(x) > kBound || t < 0 || t > kHorizon) {
        throw std::invalid_argument("reacher: state out of range");
    }
    x_ = x;
    t_ = t;
}

// --- 2048 -----------------------------------------------------------------

namespace {

// Cell indices of line `line` for a move, ordered from the destination edge.
std::array<int, 4> line_cells(Move move, int line) {
    std::array<int, 4> cells{};
    for (int i = 0; i < 4; ++i) {
        switch (move) {
            case Move::Left: cells[i] = line * 4 + i; break;
            case Move::Right: cells[i] = line * 4 + (3 - i); break;
            case Move::Up: cells[i] = i * 4 + line; break;
            case Move::Down: cells[i] = (3 - i) * 4 + line; break;
        }
    }
    return cells;
}

}  // namespace

MoveOutcome apply_move(const Board& board, Move move) {
    MoveOutcome out;
    out.board = board;
    for (int line = 0; line < 4; ++line) {
        const auto cells = line_cells(move, line);
        std::array<int, 4> packed{};
        int n = 0;
        for (int c : cells) {
            if (board[c] != 0) {
                packed[n++] = board[c];
            }
        }
        std::array<int, 4> merged{};
        int m = 0;
        for (int i = 0; i < n; ++i) {
            if (i + 1 < n && packed[i] == packed[i + 1]) {
                merged[m++] = packed[i] * 2;
                ++out.merges;
                out.largest_created = std::max(out.largest_created, packed[i] * 2);
                ++i;
            } else {
                merged[m++] = packed[i];
            }
        }
        for (int i = 0; i < 4; ++i) {
            out.board[cells[i]] = merged[i];
        }
    }
    out.changed = out.board != board;
    return out;
}

int empty_cells(const Board& board) {
    return static_cast<int>(std::count(board.begin(), board.end(), 0));
}

bool has_legal_move(const Board& board) {
    for (int m = 0; m < 4; ++m) {
        if (apply_move(board, static_cast<Move>(m)).changed) {
            return true;
        }
    }
    return false;
}

Game2048::Game2048(int target_tile, int max_steps) : target_(target_tile), max_steps_(max_steps) {
    if (target_tile < 4 || (target_tile & (target_tile - 1)) != 0) {
        throw std::invalid_argument("g2048: target tile must be a power of two >= 4");
    }
    if (max_steps < 1) {
        throw std::invalid_argument("g2048: max_steps must be >= 1");
    }
}

std::vector<double> Game2048::reset(std::uint64_t seed) {
    rng_.seed(derive_seed(seed, 0x2048));
    board_.fill(0);
    steps_ = 0;
    done_ = false;
    spawn_tile();
    spawn_tile();
    return observation();
}

void Game2048::spawn_tile() {
    std::vector<int> empty;
    for (int i = 0; i < 16; ++i) {
        if (board_[i] == 0) {
            empty.push_back(i);
        }
    }
    if (empty.empty()) {
        return;
    }
    std::uniform_int_distribution<std::size_t> pick(0, empty.size() - 1);
    const int cell = empty[pick(rng_)];
    std::bernoulli_distribution four(0.1);
    board_[cell] = four(rng_) ? 4 : 2;
}

StepResult Game2048::step(const Action& action) {
    if (done_) {
        throw std::logic_error("g2048: step called on a finished episode");
    }
    if (action.discrete < 0 || action.discrete > 3) {
        throw std::invalid_argument("g2048: action index must be 0..3");
    }
    const MoveOutcome outcome = apply_move(board_, static_cast<Move>(action.discrete));
    double reward = 0.0;
    if (outcome.changed) {
        board_ = outcome.board;
        if (outcome.largest_created >= target_) {
            reward = 1.0;
            done_ = true;
        }
        spawn_tile();
    }
    ++steps_;
    if (!done_ && (!has_legal_move(board_) || steps_ >= max_steps_)) {
        done_ = true;
    }
    return {observation(), reward, done_};
}

Action Game2048::expert_action() const {
    int best = -1;
    std::pair<int, int> best_score{-1, -1};
    for (int m = 0; m < 4; ++m) {
        const MoveOutcome o = apply_move(board_, static_cast<Move>(m));
        if (!o.changed) {
            continue;
        }
        const std::pair<int, int> score{o.merges, empty_cells(o.board)};
        if (score > best_score) {
            best_score = score;
            best = m;
        }
    }
    return Action::index(best < 0 ? 0 : best);
}

std::vector<bool> Game2048::legal_actions() const {
    std::vector<bool> legal(4);
    for (int m = 0; m < 4; ++m) {
        legal[static_cast<std::size_t>(m)] = apply_move(board_, static_cast<Move>(m)).changed;
    }
    return legal;
}

Action Game2048::random_action(std::mt19937_64& rng) const {
    std::vector<int> legal;
    const auto mask = legal_actions();
    for (int m = 0; m < 4; ++m) {
        if (mask[static_cast<std::size_t>(m)]) {
            legal.push_back(m);
        }
    }
    if (legal.empty()) {
        return Action::index(0);
    }
    std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
    return Action::index(legal[pick(rng)]);
}

void Game2048::set_board(const Board& board) {
    for (int v : board) {
        if (v != 0 && (v < 2 || (v & (v - 1)) != 0)) {
            throw std::invalid_argument("g2048: tiles must be 0 or powers of two >= 2");
        }
    }
    board_ = board;
    done_ = !has_legal_move(board_);
}

std::vector<double> Game2048::observation() const {
    const double scale = std::log2(static_cast<double>(target_));
    std::vector<double> obs(16);
    for (int i = 0; i < 16; ++i) {
        obs[i] = board_[i] == 0 ? 0.0 : std::log2(static_cast<double>(board_[i])) / scale;
    }
    return obs;
}

std::unique_ptr<Environment> make_environment(const std::string& id) {
    if (id == "reacher") {
        return std::make_unique<LinearReacher>();
    }
    if (id == "g2048" || id == "2048") {
        return std::make_unique<Game2048>();
    }
    throw std::invalid_argument("unknown environment '" + id + "' (expected reacher or g2048)");
}

// --- behaviors ------------------------------------------------------------

Behavior Behavior::parse(const std::string& s) {
    if (s == "random") {
        return random();
    }
    if (s == "expert") {
        return expert();
    }
    if (s.rfind("mix:", 0) == 0) {
        double p = -1.0;
        const char* begin = s.data() + 4;
        const char* end = s.data() + s.size();
        auto res = std::from_chars(begin, end, p);
        if (res.ec == std::errc() && res.ptr == end && p >= 0.0 && p <= 1.0) {
            return mixture(p);
        }
    }
    throw std::invalid_argument("unknown behavior '" + s + "' (expected random, expert or mix:P with P in [0,1])");
}

std::string Behavior::tag() const {
    switch (kind) {
        case Kind::Random: return "random";
        case Kind::Expert: return "expert";
        case Kind::Mixture: {
            char buf[32];
            auto res = std::to_chars(buf, buf + sizeof buf, expert_prob);
            return "mix:" + std::string(buf, res.ptr);
        }
    }
    return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over (seed, stream)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Trajectory gen_episode(Environment& env, const Behavior& behavior, std::uint64_t seed) {
    Trajectory traj;
    traj.env_id = env.id();
    traj.behavior_tag = behavior.tag();
    traj.obs_dim = env.obs_dim();
    traj.action_dim = env.action_dim();
    traj.action_space = env.action_space();

    std::mt19937_64 policy_rng(derive_seed(seed, 1));
    std::mt19937_64 coin_rng(derive_seed(seed, 2));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    std::vector<double> obs = env.reset(seed);
    std::size_t t = 0;
    while (!env.done()) {
        bool use_expert = false;
        switch (behavior.kind) {
            case Behavior::Kind::Random: use_expert = false; break;
            case Behavior::Kind::Expert: use_expert = true; break;
            case Behavior::Kind::Mixture: use_expert = coin(coin_rng) < behavior.expert_prob; break;
        }
        // Both policies draw every step so Mixture(1) and Mixture(0) replay
        // Expert and Random exactly.
        const Action random = env.random_action(policy_rng);
        const Action action = use_expert ? env.expert_action() : random;
        const StepResult res = env.step(action);

        traj.observations.insert(traj.observations.end(), obs.begin(), obs.end());
        if (traj.action_space == ActionSpace::Discrete) {
            traj.action_ids.push_back(action.discrete);
        } else {
            traj.actions.insert(traj.actions.end(), action.continuous.begin(), action.continuous.end());
        }
        traj.rewards.push_back(res.reward);
        traj.timesteps.push_back(t++);
        obs = res.obs;
    }
    traj.rtgs = compute_rtgs(traj.rewards);
    return traj;
}

Dataset gen_dataset(Environment& env, const Behavior& behavior, std::size_t episodes, std::uint64_t seed) {
    Dataset data;
    data.reserve(episodes);
    for (std::size_t i = 0; i < episodes; ++i) {
        data.push_back(gen_episode(env, behavior, derive_seed(seed, i)));
    }
    return data;
}

}  // namespace ddt
