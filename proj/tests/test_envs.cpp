#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ddt/envs.hpp"

using namespace ddt;

namespace {

// Textbook row collapse toward index 0: drop zeros, merge equal neighbours
// once from the front, drop zeros again.
std::array<int, 4> collapse_row(std::array<int, 4> row, int& merges) {
    std::vector<int> tiles;
    for (int v : row)
        if (v) tiles.push_back(v);
    std::vector<int> out;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (i + 1 < tiles.size() && tiles[i] == tiles[i + 1]) {
            out.push_back(2 * tiles[i]);
            ++merges;
            ++i;
        } else {
            out.push_back(tiles[i]);
        }
    }
    std::array<int, 4> r{};
    std::copy(out.begin(), out.end(), r.begin());
    return r;
}

// Reads line `i` of the board as seen from the edge tiles move toward.
std::array<std::size_t, 4> line_cells(Move m, int i) {
    std::array<std::size_t, 4> c{};
    for (int j = 0; j < 4; ++j) {
        switch (m) {
            case Move::Left: c[j] = i * 4 + j; break;
            case Move::Right: c[j] = i * 4 + (3 - j); break;
            case Move::Up: c[j] = j * 4 + i; break;
            case Move::Down: c[j] = (3 - j) * 4 + i; break;
        }
    }
    return c;
}

Board oracle_move(const Board& b, Move m, int& merges) {
    Board out{};
    for (int i = 0; i < 4; ++i) {
        const auto cells = line_cells(m, i);
        std::array<int, 4> row{};
        for (int j = 0; j < 4; ++j) row[j] = b[cells[j]];
        const auto r = collapse_row(row, merges);
        for (int j = 0; j < 4; ++j) out[cells[j]] = r[j];
    }
    return out;
}

Board random_board(std::mt19937_64& rng) {
    Board b{};
    std::uniform_int_distribution<int> exp(0, 5);
    for (auto& v : b) {
        const int e = exp(rng);
        v = e == 0 ? 0 : (1 << e);
    }
    return b;
}

int mass(const Board& b) { return std::accumulate(b.begin(), b.end(), 0); }

}  // namespace

TEST_CASE("reacher dynamics examples") {
    LinearReacher env;
    env.reset(0);
    env.set_state(1.0, 0);
    auto r = env.step(Action::scalar(0.0));
    CHECK(r.obs[0] == 1.0);
    CHECK(r.reward == 0.0);

    env.set_state(0.0, 0);
    r = env.step(Action::scalar(1.0));
    CHECK(r.obs[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(r.reward == doctest::Approx(-0.9).epsilon(1e-15));

    env.set_state(2.0, 0);
    r = env.step(Action::scalar(1.0));
    CHECK(r.obs[0] == 2.0);
    CHECK(r.reward == -1.0);

    // out-of-range actions are clamped
    env.set_state(0.0, 0);
    r = env.step(Action::scalar(5.0));
    CHECK(r.obs[0] == doctest::Approx(0.1));
}

TEST_CASE("reacher episodes last exactly the horizon and reject extra steps") {
    LinearReacher env;
    std::mt19937_64 rng(4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto obs = env.reset(seed);
        CHECK(std::abs(obs[0]) <= 1.0);
        int steps = 0;
        while (!env.done()) {
            const auto res = env.step(env.random_action(rng));
            CHECK(std::abs(res.obs[0]) <= 2.0);
            CHECK(res.reward <= 0.0);
            CHECK(res.reward >= -3.0);
            ++steps;
        }
        CHECK(steps == LinearReacher::kHorizon);
        CHECK_THROWS_AS(env.step(Action::scalar(0.0)), std::logic_error);
    }
}

TEST_CASE("reacher expert is the clamped proportional controller") {
    LinearReacher env;
    env.reset(0);
    for (double x : {-2.0, -0.3, 0.95, 1.0, 1.04, 2.0}) {
        env.set_state(x, 0);
        const double want = std::clamp(10.0 * (1.0 - x), -1.0, 1.0);
        CHECK(env.expert_action().continuous[0] == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("2048 row examples") {
    Board b{};
    b[0] = 2;
    b[1] = 2;
    auto m = apply_move(b, Move::Left);
    CHECK(m.board[0] == 4);
    CHECK(m.board[1] == 0);
    CHECK(m.changed);

    Board n{2, 4, 2, 4};
    auto u = apply_move(n, Move::Left);
    CHECK(std::equal(u.board.begin(), u.board.begin() + 4, n.begin()));
    CHECK_FALSE(u.changed);

    // each tile merges once; the pair nearest the edge goes first
    Board q{2, 2, 2, 2, 4, 4, 8, 0, 2, 2, 2, 0};
    auto w = apply_move(q, Move::Left);
    CHECK(w.board[0] == 4);
    CHECK(w.board[1] == 4);
    CHECK(w.board[2] == 0);
    CHECK(w.board[4] == 8);
    CHECK(w.board[5] == 8);
    CHECK(w.board[8] == 4);
    CHECK(w.board[9] == 2);
    auto rgt = apply_move(q, Move::Right);
    CHECK(rgt.board[10] == 2);
    CHECK(rgt.board[11] == 4);
}

TEST_CASE("2048 moves agree with a textbook oracle on random boards") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 2000; ++trial) {
        const Board b = random_board(rng);
        for (Move mv : {Move::Up, Move::Down, Move::Left, Move::Right}) {
            int merges = 0;
            const Board want = oracle_move(b, mv, merges);
            const auto got = apply_move(b, mv);
            CHECK(got.board == want);
            CHECK(got.merges == merges);
            CHECK(got.changed == (want != b));
            CHECK(mass(got.board) == mass(b));
        }
    }
}

TEST_CASE("creating the target tile pays 1 and ends the episode") {
    Game2048 env;
    env.reset(3);
    Board b{};
    b[0] = 4;
    b[1] = 4;
    b[2] = 8;
    b[4] = 64;
    b[5] = 64;
    env.set_board(b);
    const auto r = env.step(Action::index(int(Move::Left)));
    CHECK(r.reward == 1.0);
    CHECK(r.done);
    CHECK(env.board()[4] == 128);
    CHECK_THROWS_AS(env.step(Action::index(0)), std::logic_error);
}

TEST_CASE("2048 spawns after changing moves only and conserves mass otherwise") {
    Game2048 env;
    env.reset(11);
    std::mt19937_64 rng(2);
    int spawned_two = 0, spawned_four = 0;
    for (int ep = 0; ep < 50; ++ep) {
        env.reset(100 + ep);
        CHECK(mass(env.board()) > 0);
        while (!env.done()) {
            const Board before = env.board();
            std::uniform_int_distribution<int> any(0, 3);
            const Move mv = Move(any(rng));
            const auto slid = apply_move(before, mv);
            const auto res = env.step(Action::index(int(mv)));
            const int delta = mass(env.board()) - mass(before);
            if (!slid.changed) {
                CHECK(env.board() == before);
                CHECK(res.reward == 0.0);
            } else {
                CHECK((delta == 2 || delta == 4));
                (delta == 2 ? spawned_two : spawned_four)++;
            }
            for (int v : env.board()) CHECK((v == 0 || (v >= 2 && (v & (v - 1)) == 0)));
        }
    }
    const double frac_four = double(spawned_four) / double(spawned_two + spawned_four);
    CHECK(frac_four > 0.05);
    CHECK(frac_four < 0.15);
}

TEST_CASE("2048 episode reward is 0 or 1 and ends at the target or deadlock") {
    Game2048 env;
    for (auto behavior : {Behavior::random(), Behavior::expert(), Behavior::mixture(0.5)}) {
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const auto traj = gen_episode(env, behavior, seed);
            const double ret = traj.total_return();
            CHECK((ret == 0.0 || ret == 1.0));
            const bool hit = *std::max_element(env.board().begin(), env.board().end()) >= env.target_tile();
            CHECK((hit || !has_legal_move(env.board()) || traj.length() == std::size_t(Game2048::kDefaultMaxSteps)));
            CHECK(hit == (ret == 1.0));
        }
    }
}

TEST_CASE("2048 expert is the greedy lookahead with fixed tie order") {
    std::mt19937_64 rng(23);
    Game2048 env;
    env.reset(0);
    for (int trial = 0; trial < 500; ++trial) {
        const Board b = random_board(rng);
        if (!has_legal_move(b)) continue;
        env.set_board(b);
        int best = -1;
        std::pair<int, int> best_key{-1, -1};
        for (int mv = 0; mv < 4; ++mv) {
            int merges = 0;
            const Board nb = oracle_move(b, Move(mv), merges);
            if (nb == b) continue;
            const std::pair<int, int> key{merges, int(std::count(nb.begin(), nb.end(), 0))};
            if (key > best_key) {
                best_key = key;
                best = mv;
            }
        }
        CHECK(env.expert_action().discrete == best);
    }
}

TEST_CASE("random 2048 agent picks only legal moves roughly uniformly") {
    Game2048 env;
    env.reset(0);
    Board b{};
    b[0] = 2;  // top-left corner: only Down and Right change the board
    env.set_board(b);
    std::mt19937_64 rng(5);
    int down = 0, right = 0;
    for (int i = 0; i < 4000; ++i) {
        const int a = env.random_action(rng).discrete;
        REQUIRE((a == int(Move::Down) || a == int(Move::Right)));
        (a == int(Move::Down) ? down : right)++;
    }
    CHECK(std::abs(down - right) < 300);
}

TEST_CASE("episodes are deterministic per seed") {
    for (const std::string id : {"reacher", "g2048"}) {
        auto env = make_environment(id);
        for (auto behavior : {Behavior::random(), Behavior::expert(), Behavior::mixture(0.3)}) {
            const auto a = gen_episode(*env, behavior, 42);
            const auto b = gen_episode(*env, behavior, 42);
            CHECK(a == b);
            a.check_consistent();
        }
    }
}

TEST_CASE("boundary mixtures replay the pure policies") {
    for (const std::string id : {"reacher", "g2048"}) {
        auto env = make_environment(id);
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            auto m1 = gen_episode(*env, Behavior::mixture(1.0), seed);
            auto ex = gen_episode(*env, Behavior::expert(), seed);
            auto m0 = gen_episode(*env, Behavior::mixture(0.0), seed);
            auto rn = gen_episode(*env, Behavior::random(), seed);
            m1.behavior_tag = ex.behavior_tag;
            m0.behavior_tag = rn.behavior_tag;
            CHECK(m1 == ex);
            CHECK(m0 == rn);
        }
    }
}

TEST_CASE("reacher expert beats the random policy") {
    LinearReacher env;
    double random_total = 0.0, expert_total = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        random_total += gen_episode(env, Behavior::random(), s).total_return();
        expert_total += gen_episode(env, Behavior::expert(), s).total_return();
    }
    CHECK(expert_total / 100 > random_total / 100);
    // same start states, so every expert episode should beat its random twin on average by a lot
    CHECK(expert_total - random_total > 100 * 5.0);
}

TEST_CASE("behavior parsing") {
    CHECK(Behavior::parse("random").kind == Behavior::Kind::Random);
    CHECK(Behavior::parse("expert").kind == Behavior::Kind::Expert);
    const auto m = Behavior::parse("mix:0.25");
    CHECK(m.kind == Behavior::Kind::Mixture);
    CHECK(m.expert_prob == 0.25);
    CHECK(Behavior::parse(m.tag()).expert_prob == 0.25);
    CHECK_THROWS(Behavior::parse("mix:1.5"));
    CHECK_THROWS(Behavior::parse("greedy"));
    CHECK_THROWS(make_environment("cartpole"));
}

TEST_CASE("datasets use one derived seed per episode") {
    LinearReacher env;
    const auto data = gen_dataset(env, Behavior::mixture(0.5), 5, 9);
    REQUIRE(data.size() == 5);
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(data[i] == gen_episode(env, Behavior::mixture(0.5), derive_seed(9, i)));
    CHECK(derive_seed(9, 0) != derive_seed(9, 1));
    CHECK(derive_seed(9, 0) != derive_seed(10, 0));
}

TEST_CASE("legal action masks") {
    Game2048 env;
    env.reset(0);
    Board b{};
    b[0] = 2;
    env.set_board(b);
    CHECK(env.legal_actions() == std::vector<bool>{false, true, false, true});
    Board stuck{2, 4, 2, 4, 4, 2, 4, 2, 2, 4, 2, 4, 4, 2, 4, 2};
    env.set_board(stuck);
    CHECK(env.legal_actions() == std::vector<bool>(4, false));
    LinearReacher reacher;
    CHECK(reacher.legal_actions().empty());
}
