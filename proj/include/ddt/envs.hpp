#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ddt/batch.hpp"
#include "ddt/data.hpp"

namespace ddt {

struct Action {
    std::vector<double> continuous;
    int discrete = -1;

    static Action scalar(double a) { return Action{{a}, -1}; }
    static Action index(int i) { return Action{{}, i}; }
};

struct StepResult {
    std::vector<double> obs;
    double reward = 0.0;
    bool done = false;
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string id() const = 0;
    virtual std::size_t obs_dim() const = 0;
    virtual std::size_t action_dim() const = 0;
    virtual ActionSpace action_space() const = 0;

    virtual std::vector<double> reset(std::uint64_t seed) = 0;
    // Throws std::logic_error when the episode is already over.
    virtual StepResult step(const Action& action) = 0;
    virtual bool done() const = 0;

    virtual Action expert_action() const = 0;
    virtual Action random_action(std::mt19937_64& rng) const = 0;

    // Discrete actions that change the state right now; empty means all.
    virtual std::vector<bool> legal_actions() const { return {}; }
};

// 1-D point moving toward x = 1: x' = clamp(x + 0.1·a, −2, 2), r = −|x' − 1|.
// Episodes last exactly `kHorizon` steps and start at x ~ U[−1, 1].
class LinearReacher final : public Environment {
public:
    static constexpr int kHorizon = 20;
    static constexpr double kGoal = 1.0;
    static constexpr double kBound = 2.0;
    static constexpr double kStepSize = 0.1;

    std::string id() const override { return "reacher"; }
    std::size_t obs_dim() const override { return 1; }
    std::size_t action_dim() const override { return 1; }
    ActionSpace action_space() const override { return ActionSpace::Continuous; }

    std::vector<double> reset(std::uint64_t seed) override;
    StepResult step(const Action& action) override;
    bool done() const override { return t_ >= kHorizon; }

    Action expert_action() const override;
    Action random_action(std::mt19937_64& rng) const override;

    void set_state(double x, int t);
    double position() const { return x_; }
    int step_index() const { return t_; }

private:
    double x_ = 0.0;
    int t_ = 0;
};

enum class Move { Up = 0, Down = 1, Left = 2, Right = 3 };

using Board = std::array<int, 16>;  // row-major 4×4 tile values, 0 = empty

struct MoveOutcome {
    Board board{};
    bool changed = false;
    int merges = 0;
    int largest_created = 0;  // largest tile produced by a merge this move
};

// Slides and merges without spawning. Each tile merges at most once, pairs
// resolve starting from the edge the tiles move toward.
MoveOutcome apply_move(const Board& board, Move move);
int empty_cells(const Board& board);
bool has_legal_move(const Board& board);

// Stochastic 2048 with reward 1 exactly when the target tile is created.
// The episode ends on the target tile, on deadlock, or after max_steps.
class Game2048 final : public Environment {
public:
    static constexpr int kDefaultTarget = 128;
    static constexpr int kDefaultMaxSteps = 1000;

    explicit Game2048(int target_tile = kDefaultTarget, int max_steps = kDefaultMaxSteps);

    std::string id() const override { return "g2048"; }
    std::size_t obs_dim() const override { return 16; }
    std::size_t action_dim() const override { return 4; }
    ActionSpace action_space() const override { return ActionSpace::Discrete; }

    std::vector<double> reset(std::uint64_t seed) override;
    StepResult step(const Action& action) override;
    bool done() const override { return done_; }

    // Greedy one-step lookahead over legal moves maximizing (merges, empty
    // cells); ties go to the earlier of Up, Down, Left, Right.
    Action expert_action() const override;
    // Uniform over legal moves.
    Action random_action(std::mt19937_64& rng) const override;
    std::vector<bool> legal_actions() const override;

    void set_board(const Board& board);
    const Board& board() const { return board_; }
    int step_index() const { return steps_; }
    int target_tile() const { return target_; }
    std::vector<double> observation() const;

private:
    void spawn_tile();

    Board board_{};
    std::mt19937_64 rng_;
    int target_;
    int max_steps_;
    int steps_ = 0;
    bool done_ = false;
};

std::unique_ptr<Environment> make_environment(const std::string& id);

struct Behavior {
    enum class Kind { Random, Expert, Mixture };
    Kind kind = Kind::Random;
    double expert_prob = 0.0;

    static Behavior random() { return {Kind::Random, 0.0}; }
    static Behavior expert() { return {Kind::Expert, 1.0}; }
    static Behavior mixture(double p) { return {Kind::Mixture, p}; }

    // "random", "expert" or "mix:P"
    static Behavior parse(const std::string& s);
    std::string tag() const;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

Trajectory gen_episode(Environment& env, const Behavior& behavior, std::uint64_t seed);
// Episode i uses derive_seed(seed, i).
Dataset gen_dataset(Environment& env, const Behavior& behavior, std::size_t episodes, std::uint64_t seed);

}  // namespace ddt
