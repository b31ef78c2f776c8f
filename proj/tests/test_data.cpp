#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ddt/data.hpp"
#include "ddt/envs.hpp"

using namespace ddt;

namespace {

Trajectory tiny_reacher(std::size_t T) {
    LinearReacher env;
    Trajectory t = gen_episode(env, Behavior::mixture(0.5), 3);
    t.observations.resize(T);
    t.actions.resize(T);
    t.rewards.resize(T);
    t.timesteps.resize(T);
    t.rtgs = compute_rtgs(t.rewards);
    return t;
}

std::string error_of(const std::string& text) {
    std::istringstream in(text);
    try {
        read_dataset(in);
    } catch (const std::runtime_error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("compute_rtgs examples") {
    CHECK(compute_rtgs(std::vector<double>{1, 0, 2}) == std::vector<double>{3, 2, 2});
    CHECK(compute_rtgs(std::vector<double>{0, 0, 0}) == std::vector<double>{0, 0, 0});
    CHECK(compute_rtgs(std::vector<double>{-0.25}) == std::vector<double>{-0.25});
    CHECK_THROWS_AS(compute_rtgs(std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(compute_rtgs(std::vector<double>{1, NAN}), std::invalid_argument);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> r(50);
    for (auto& x : r) x = u(rng);
    const auto g = compute_rtgs(r);
    for (std::size_t i = 0; i < r.size(); ++i) {
        double s = 0;
        for (std::size_t j = i; j < r.size(); ++j) s += r[j];
        CHECK(g[i] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("rtg decomposition check") {
    LinearReacher reacher;
    Game2048 game;
    for (std::uint64_t s = 0; s < 20; ++s) {
        CHECK(verify_rtg_decomposition(gen_episode(reacher, Behavior::mixture(0.5), s)));
        CHECK(verify_rtg_decomposition(gen_episode(game, Behavior::mixture(0.5), s)));
    }
    auto t = gen_episode(reacher, Behavior::random(), 7);
    for (std::size_t i = 0; i < t.length(); ++i) {
        auto bad = t;
        bad.rtgs[i] += 1e-3;
        CHECK_FALSE(verify_rtg_decomposition(bad));
    }
    CHECK(verify_rtg_decomposition(tiny_reacher(1)));
}

TEST_CASE("trajectory consistency") {
    auto t = tiny_reacher(3);
    CHECK_NOTHROW(t.check_consistent());
    t.rewards.pop_back();
    CHECK_THROWS(t.check_consistent());
    CHECK_THROWS(tiny_reacher(0).check_consistent());
}

TEST_CASE("window ending at the first step has one real position") {
    const Dataset data{tiny_reacher(20)};
    ContextBatch b = ContextBatch::empty(Variant::DT, 1, 5, 1, 1);
    fill_window(b, 0, data[0], 0, 2.0);
    CHECK(std::count(b.loss_mask.begin(), b.loss_mask.end(), 1) == 1);
    CHECK(b.loss_mask.back() == 1);
    CHECK(b.obs.back() == data[0].observations[0]);
    CHECK(b.rtgs.back() == doctest::Approx(data[0].rtgs[0] / 2.0));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(b.obs[i] == 0.0);
        CHECK(b.rtgs[i] == 0.0);
        CHECK(b.actions[i] == 0.0);
    }

    fill_window(b, 0, data[0], 10, 2.0);
    CHECK(std::count(b.loss_mask.begin(), b.loss_mask.end(), 1) == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(b.timesteps[i] == 6 + i);
        CHECK(b.actions[i] == data[0].actions[6 + i]);  // unshifted targets
    }
}

TEST_CASE("sampled batches stay inside episodes and are deterministic") {
    LinearReacher env;
    const auto data = gen_dataset(env, Behavior::mixture(0.5), 30, 1);
    const double scale = dataset_stats(data).suggested_rtg_scale;
    std::mt19937_64 r1(5), r2(5);
    const auto a = sample_context_batch(data, 6, 256, r1, scale, Variant::DDT);
    const auto b = sample_context_batch(data, 6, 256, r2, scale, Variant::DDT);
    CHECK(a.obs == b.obs);
    CHECK(a.rtgs == b.rtgs);
    CHECK(a.timesteps == b.timesteps);

    bool saw_padding = false;
    for (std::size_t s = 0; s < a.batch; ++s) {
        // padding only on the left, then strictly increasing timesteps
        bool in_real = false;
        for (std::size_t t = 0; t < 6; ++t) {
            const std::size_t i = s * 6 + t;
            if (a.loss_mask[i]) {
                if (in_real) CHECK(a.timesteps[i] == a.timesteps[i - 1] + 1);
                in_real = true;
            } else {
                CHECK_FALSE(in_real);
                saw_padding = true;
            }
            CHECK(std::abs(a.rtgs[i]) <= 1.0 + 1e-12);
        }
        // the window must be a contiguous slice of some episode
        const std::size_t last = s * 6 + 5;
        bool found = false;
        for (const auto& tr : data) {
            const std::size_t ts = a.timesteps[last];
            if (tr.observations[ts] != a.obs[last]) continue;
            bool ok = true;
            for (std::size_t t = 0; t < 6 && ok; ++t) {
                const std::size_t i = s * 6 + t;
                if (!a.loss_mask[i]) continue;
                ok = tr.observations[a.timesteps[i]] == a.obs[i] &&
                     tr.rtgs[a.timesteps[i]] / scale == a.rtgs[i];
            }
            found = found || ok;
        }
        CHECK(found);
    }
    CHECK(saw_padding);

    std::mt19937_64 r3(5);
    CHECK_THROWS_AS(sample_context_batch(data, 0, 4, r3, scale, Variant::DT), std::invalid_argument);
    CHECK_THROWS_AS(sample_context_batch(Dataset{}, 3, 4, r3, scale, Variant::DT), std::invalid_argument);
}

TEST_CASE("end timesteps are sampled uniformly over all steps") {
    // episode lengths 1 and 3: four (episode, step) pairs with equal weight
    Dataset data{tiny_reacher(1), tiny_reacher(3)};
    data[0].observations[0] = 5.0;
    std::mt19937_64 rng(8);
    const auto b = sample_context_batch(data, 2, 40000, rng, 1.0, Variant::DT);
    std::map<std::pair<int, std::size_t>, int> counts;
    for (std::size_t s = 0; s < b.batch; ++s) {
        const int real = b.loss_mask[2 * s] + b.loss_mask[2 * s + 1];
        const std::size_t end = b.timesteps[2 * s + 1];
        // a lone step at t=0 could be either episode; the obs disambiguates
        const int ep = (end == 0 && b.obs[2 * s + 1] == data[0].observations[0] && real == 1) ? 0 : 1;
        counts[{ep, end}]++;
    }
    for (auto [key, c] : counts) CHECK(std::abs(c - 10000) < 600);
}

TEST_CASE("discrete windows carry one-hot actions and ids") {
    Game2048 env;
    const Dataset data{gen_episode(env, Behavior::random(), 2)};
    ContextBatch b = ContextBatch::empty(Variant::DDT, 1, 3, 16, 4);
    fill_window(b, 0, data[0], 4, 1.0);
    for (std::size_t t = 0; t < 3; ++t) {
        const int id = data[0].action_ids[2 + t];
        CHECK(b.action_ids[t] == id);
        for (int j = 0; j < 4; ++j) CHECK(b.actions[t * 4 + j] == (j == id ? 1.0 : 0.0));
    }
    fill_window(b, 0, data[0], 0, 1.0);
    CHECK(b.action_ids[0] == -1);
}

TEST_CASE("dataset round trip") {
    const Dataset small{tiny_reacher(3)};
    std::stringstream ss;
    write_dataset(ss, small);
    CHECK(read_dataset(ss) == small);

    Game2048 env;
    const auto big = gen_dataset(env, Behavior::mixture(0.5), 1000, 4);
    std::stringstream s2;
    write_dataset(s2, big);
    const auto back = read_dataset(s2);
    REQUIRE(back.size() == big.size());
    for (std::size_t i = 0; i < big.size(); ++i) {
        CHECK(back[i].total_return() == big[i].total_return());
        CHECK(back[i].action_ids == big[i].action_ids);
    }

    const auto dir = std::filesystem::temp_directory_path() / "ddt_test_data";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "d.ndjson").string();
    write_dataset(path, small);
    CHECK(read_dataset(path) == small);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_dataset((dir / "missing").string()), std::runtime_error);
}

TEST_CASE("corrupt dataset lines are reported by number and field") {
    std::stringstream ss;
    write_dataset(ss, Dataset{tiny_reacher(3), tiny_reacher(2)});
    const std::string good = ss.str();
    const auto nl = good.find('\n');
    const std::string first = good.substr(0, nl + 1);
    const std::string second = good.substr(nl + 1);

    const std::string truncated = first + second.substr(0, second.size() / 2) + "\n";
    CHECK(error_of(truncated).find("line 2") != std::string::npos);

    std::string no_rewards = second;
    no_rewards.replace(no_rewards.find("\"rewards\""), 9, "\"rewardz\"");
    const auto e = error_of(first + no_rewards);
    CHECK(e.find("line 2") != std::string::npos);
    CHECK(e.find("rewards") != std::string::npos);

    std::string bad_type = first;
    bad_type.replace(bad_type.find("\"obs_dim\":1"), 11, "\"obs_dim\":\"x\"");
    const auto e2 = error_of(bad_type);
    CHECK(e2.find("line 1") != std::string::npos);
    CHECK(e2.find("obs_dim") != std::string::npos);
}

TEST_CASE("dataset statistics") {
    Dataset data{tiny_reacher(3), tiny_reacher(5)};
    data[0].rewards = {-1, -1, -1};
    data[0].rtgs = compute_rtgs(data[0].rewards);
    data[1].rewards = {0, 0, 0, 0, -0.5};
    data[1].rtgs = compute_rtgs(data[1].rewards);
    const auto s = dataset_stats(data);
    CHECK(s.episodes == 2);
    CHECK(s.steps == 8);
    CHECK(s.return_mean == doctest::Approx(-1.75));
    CHECK(s.return_min == -3.0);
    CHECK(s.return_max == -0.5);
    CHECK(s.suggested_rtg_scale == 3.0);

    for (auto& t : data) {
        std::fill(t.rewards.begin(), t.rewards.end(), 0.0);
        t.rtgs = compute_rtgs(t.rewards);
    }
    CHECK(dataset_stats(data).suggested_rtg_scale == 1.0);

    std::ostringstream out;
    write_stats_report(out, s);
    CHECK(out.str().find("episodes=2") != std::string::npos);
    CHECK(out.str().find("rtg_scale=3") != std::string::npos);
}
