#include "ddt/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace ddt {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void check_env_matches(const ModelConfig& config, const Environment& env) {
    if (env.obs_dim() != config.obs_dim || env.action_dim() != config.action_dim ||
        env.action_space() != config.action_space) {
        throw std::invalid_argument("rollout: environment " + env.id() + " (obs_dim " + std::to_string(env.obs_dim()) +
                                    ", action_dim " + std::to_string(env.action_dim()) +
                                    ") does not match the model (obs_dim " + std::to_string(config.obs_dim) +
                                    ", action_dim " + std::to_string(config.action_dim) + ")");
    }
}

// Highest logit among legal actions, lowest index on ties.
int best_legal(const PolicyAction& policy, const std::vector<bool>& legal) {
    if (legal.empty() || std::none_of(legal.begin(), legal.end(), [](bool b) { return b; })) {
        return policy.index;
    }
    int best = -1;
    for (std::size_t i = 0; i < policy.values.size(); ++i) {
        if (legal[i] && (best < 0 || policy.values[i] > policy.values[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

struct EpisodeHooks {
    RolloutTrace* trace = nullptr;
    AttentionMap* attention = nullptr;
    std::size_t attention_limit = 0;
};

// Plays one episode and returns its raw return.
template <class T>
double run_episode(const DecisionModel<T>& model, Environment& env, double target_rtg, std::uint64_t episode_seed,
                   const EpisodeHooks& hooks) {
    const ModelConfig& cfg = model.config();
    const std::size_t k = cfg.context_length, od = cfg.obs_dim, ad = cfg.action_dim;

    std::vector<double> obs_log, act_log, rtg_log;
    std::vector<std::size_t> time_log;
    std::vector<double> obs = env.reset(episode_seed);
    double rtg = target_rtg;
    double total = 0.0;
    std::size_t t = 0;
    AttentionCapture capture;
    while (!env.done()) {
        obs_log.insert(obs_log.end(), obs.begin(), obs.end());
        time_log.push_back(t);

        const std::size_t n = std::min(k, t + 1);
        const std::size_t start = t + 1 - n;
        History h;
        h.obs.assign(obs_log.begin() + static_cast<std::ptrdiff_t>(start * od), obs_log.end());
        h.actions.assign(act_log.begin() + static_cast<std::ptrdiff_t>(start * ad), act_log.end());
        h.rtgs.assign(rtg_log.begin() + static_cast<std::ptrdiff_t>(start), rtg_log.end());
        h.timesteps.assign(time_log.begin() + static_cast<std::ptrdiff_t>(start), time_log.end());

        const bool capture_now = hooks.attention && n == k && hooks.attention->count < hooks.attention_limit;
        const PolicyAction policy = model.predict_action(h, rtg, capture_now ? &capture : nullptr);
        if (capture_now) {
            hooks.attention->add(capture);
        }

        Action action;
        std::vector<double> encoded(ad, 0.0);
        if (cfg.action_space == ActionSpace::Discrete) {
            // A no-op move leaves the input unchanged, so a greedy policy
            // would repeat it forever; pick the best move that does something.
            const int choice = best_legal(policy, env.legal_actions());
            action = Action::index(choice);
            encoded[static_cast<std::size_t>(choice)] = 1.0;
        } else {
            action.continuous = policy.values;
            encoded = policy.values;
        }
        const StepResult res = env.step(action);
        if (hooks.trace) {
            hooks.trace->conditioning_rtgs.push_back(rtg);
            hooks.trace->rewards.push_back(res.reward);
        }
        act_log.insert(act_log.end(), encoded.begin(), encoded.end());
        rtg_log.push_back(rtg);
        rtg -= res.reward;
        total += res.reward;
        obs = res.obs;
        ++t;
    }
    return total;
}

}  // namespace

ScoreRefs compute_score_refs(Environment& env, std::size_t episodes, std::uint64_t seed) {
    if (episodes == 0) {
        throw std::invalid_argument("compute_score_refs: need at least one episode");
    }
    double random_total = 0.0, expert_total = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        random_total += gen_episode(env, Behavior::random(), derive_seed(seed, 2 * e)).total_return();
        expert_total += gen_episode(env, Behavior::expert(), derive_seed(seed, 2 * e + 1)).total_return();
    }
    const double n = static_cast<double>(episodes);
    return {random_total / n, expert_total / n};
}

double normalized_score(double raw_mean, double random_ref, double expert_ref) {
    if (expert_ref == random_ref || !std::isfinite(expert_ref) || !std::isfinite(random_ref)) {
        throw std::invalid_argument("normalized_score: expert and random references must differ");
    }
    return 100.0 * (raw_mean - random_ref) / (expert_ref - random_ref);
}

void summarize(EvalReport& r) {
    r.episodes = r.returns.size();
    if (r.returns.empty()) {
        throw std::invalid_argument("summarize: no episodes");
    }
    double total = 0.0;
    for (double v : r.returns) {
        total += v;
    }
    const double n = static_cast<double>(r.returns.size());
    r.mean = total / n;
    if (r.returns.size() > 1) {
        double ss = 0.0;
        for (double v : r.returns) {
            ss += (v - r.mean) * (v - r.mean);
        }
        r.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    } else {
        r.std_error = 0.0;
    }
    r.normalized = normalized_score(r.mean, r.refs.random_ref, r.refs.expert_ref);
}

void write_eval_report(std::ostream& out, const EvalReport& r) {
    const auto flags = out.flags();
    const auto precision = out.precision();
    out << std::left << std::setprecision(6) << std::setw(18) << "episodes" << r.episodes << '\n'
        << std::setw(18) << "target rtg" << r.target_rtg << '\n'
        << std::setw(18) << "return mean" << r.mean << '\n'
        << std::setw(18) << "std error" << r.std_error << '\n'
        << std::setw(18) << "normalized score" << r.normalized << '\n'
        << std::setw(18) << "random ref" << r.refs.random_ref << '\n'
        << std::setw(18) << "expert ref" << r.refs.expert_ref << '\n';
    out.flags(flags);
    out << "episodes=" << r.episodes << '\n'
        << "target_rtg=" << format_double(r.target_rtg) << '\n'
        << "return_mean=" << format_double(r.mean) << '\n'
        << "std_error=" << format_double(r.std_error) << '\n'
        << "normalized_score=" << format_double(r.normalized) << '\n'
        << "random_ref=" << format_double(r.refs.random_ref) << '\n'
        << "expert_ref=" << format_double(r.refs.expert_ref) << '\n';
    out << "returns=";
    for (std::size_t i = 0; i < r.returns.size(); ++i) {
        out << (i ? "," : "") << format_double(r.returns[i]);
    }
    out << '\n';
    out.precision(precision);
}

template <class T>
EvalReport rollout(const DecisionModel<T>& model, Environment& env, double target_rtg, std::size_t episodes,
                   std::uint64_t seed, const ScoreRefs& refs, std::vector<RolloutTrace>* traces) {
    if (episodes == 0) {
        throw std::invalid_argument("rollout: episodes must be >= 1");
    }
    check_env_matches(model.config(), env);
    EvalReport report;
    report.target_rtg = target_rtg;
    report.refs = refs;
    if (traces) {
        traces->assign(episodes, {});
    }
    for (std::size_t e = 0; e < episodes; ++e) {
        const std::uint64_t ep_seed = derive_seed(seed, 1000 + e);
        EpisodeHooks hooks;
        hooks.trace = traces ? &(*traces)[e] : nullptr;
        report.returns.push_back(run_episode(model, env, target_rtg, ep_seed, hooks));
        report.seeds.push_back(ep_seed);
    }
    summarize(report);
    return report;
}

// --- attention --------------------------------------------------------------

std::string AttentionMap::label(std::size_t token) const {
    const char* names[] = {"R", "o", "a"};
    const Modality m = token_modality(variant, token);
    const std::size_t rel = context - 1 - token_timestep(variant, token);
    return std::string(names[static_cast<int>(m)]) + "-" + std::to_string(rel);
}

void AttentionMap::add(const AttentionCapture& capture) {
    if (count == 0 && mean.empty()) {
        layers = capture.layers;
        heads = capture.heads;
        seq = capture.seq;
        mean.assign(capture.probs.size(), 0.0);
    }
    if (capture.probs.size() != mean.size() || capture.seq != seq) {
        throw std::invalid_argument("attention map: capture size changed between predictions");
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] += capture.probs[i];
    }
    ++count;
}

void AttentionMap::finalize() {
    if (count == 0) {
        throw std::logic_error("attention map: no predictions accumulated");
    }
    for (double& v : mean) {
        v /= static_cast<double>(count);
    }
}

double AttentionMap::band_mass(std::size_t band) const {
    double total = 0.0;
    std::size_t rows = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t q = 0; q < seq; ++q) {
                const std::size_t tq = token_timestep(variant, q);
                double near = 0.0;
                for (std::size_t key = 0; key < seq; ++key) {
                    const std::size_t tk = token_timestep(variant, key);
                    const std::size_t gap = tq > tk ? tq - tk : tk - tq;
                    if (gap <= band) {
                        near += at(l, h, q, key);
                    }
                }
                total += near;
                ++rows;
            }
        }
    }
    return rows ? total / static_cast<double>(rows) : 0.0;
}

template <class T>
AttentionMap attention_report(const DecisionModel<T>& model, Environment& env, double target_rtg, std::size_t steps,
                              std::uint64_t seed) {
    if (steps == 0) {
        throw std::invalid_argument("attention_report: steps must be >= 1");
    }
    check_env_matches(model.config(), env);
    AttentionMap map;
    map.variant = model.config().variant;
    map.context = model.config().context_length;
    EpisodeHooks hooks;
    hooks.attention = &map;
    hooks.attention_limit = steps;
    // Episodes shorter than the context never contribute; give up after a
    // generous number of them rather than looping forever.
    const std::size_t max_episodes = 100000;
    for (std::size_t e = 0; map.count < steps; ++e) {
        if (e >= max_episodes) {
            throw std::runtime_error("attention_report: episodes never fill the context window");
        }
        run_episode(model, env, target_rtg, derive_seed(seed, 5000 + e), hooks);
    }
    map.finalize();
    return map;
}

std::vector<std::string> write_attention_map(const std::string& dir, const AttentionMap& map) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> written;
    for (std::size_t l = 0; l < map.layers; ++l) {
        for (std::size_t h = 0; h < map.heads; ++h) {
            const std::string stem = "attn_l" + std::to_string(l) + "_h" + std::to_string(h);
            const fs::path csv = fs::path(dir) / (stem + ".csv");
            std::ofstream out(csv, std::ios::binary);
            out << "query\\key";
            for (std::size_t key = 0; key < map.seq; ++key) {
                out << ',' << map.label(key);
            }
            out << '\n';
            double mx = 0.0;
            for (std::size_t q = 0; q < map.seq; ++q) {
                out << map.label(q);
                for (std::size_t key = 0; key < map.seq; ++key) {
                    const double v = map.at(l, h, q, key);
                    mx = std::max(mx, v);
                    out << ',' << format_double(v);
                }
                out << '\n';
            }
            if (!out) {
                throw std::runtime_error("cannot write " + csv.string());
            }
            written.push_back(csv.string());

            const fs::path pgm = fs::path(dir) / (stem + ".pgm");
            std::ofstream img(pgm, std::ios::binary);
            img << "P5\n" << map.seq << ' ' << map.seq << "\n255\n";
            for (std::size_t q = 0; q < map.seq; ++q) {
                for (std::size_t key = 0; key < map.seq; ++key) {
                    const double v = mx > 0.0 ? map.at(l, h, q, key) / mx : 0.0;
                    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
                }
            }
            if (!img) {
                throw std::runtime_error("cannot write " + pgm.string());
            }
            written.push_back(pgm.string());
        }
    }
    return written;
}

// --- bench ----------------------------------------------------------------

BenchResult bench_inference(const ModelConfig& base, const std::vector<std::size_t>& k_values, std::size_t trials,
                            std::uint64_t seed) {
    if (trials < 3) {
        throw std::invalid_argument("bench: trials must be >= 3");
    }
    BenchResult result;
    for (std::size_t k : k_values) {
        for (Variant v : {Variant::DT, Variant::BlockedDT, Variant::DDT}) {
            ModelConfig cfg = base;
            cfg.variant = v;
            cfg.context_length = k;
            cfg.max_timestep = std::max(cfg.max_timestep, k);
            const DecisionModel<float> model(cfg, seed);

            std::mt19937_64 rng(derive_seed(seed, k));
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            History h;
            for (std::size_t t = 0; t < k; ++t) {
                for (std::size_t j = 0; j < cfg.obs_dim; ++j) h.obs.push_back(unit(rng));
                if (t + 1 < k) {
                    for (std::size_t j = 0; j < cfg.action_dim; ++j) h.actions.push_back(unit(rng));
                    h.rtgs.push_back(unit(rng));
                }
                h.timesteps.push_back(t);
            }
            for (int w = 0; w < 2; ++w) {
                (void)model.predict_action(h, 1.0);
            }
            std::vector<double> times;
            for (std::size_t i = 0; i < trials; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                (void)model.predict_action(h, 1.0);
                const auto t1 = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
            }
            std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
            BenchRow row;
            row.variant = v;
            row.k = k;
            row.tokens = cfg.sequence_length();
            row.attention_elements = row.tokens * row.tokens;
            row.median_us = times[times.size() / 2];
            result.rows.push_back(row);
        }
    }
    return result;
}

namespace {

const BenchRow* find_row(const BenchResult& r, Variant v, std::size_t k) {
    for (const auto& row : r.rows) {
        if (row.variant == v && row.k == k) {
            return &row;
        }
    }
    return nullptr;
}

}  // namespace

void write_bench_csv(std::ostream& out, const BenchResult& result) {
    out << "variant,k,tokens,attention_elements,tokens_vs_dt,elements_vs_dt\n";
    for (const auto& row : result.rows) {
        const BenchRow* dt = find_row(result, Variant::DT, row.k);
        out << to_string(row.variant) << ',' << row.k << ',' << row.tokens << ',' << row.attention_elements << ','
            << format_double(static_cast<double>(row.tokens) / static_cast<double>(dt->tokens)) << ','
            << format_double(static_cast<double>(row.attention_elements) /
                             static_cast<double>(dt->attention_elements))
            << '\n';
    }
}

void write_timing_csv(std::ostream& out, const BenchResult& result) {
    out << "variant,k,median_us,time_vs_dt\n";
    for (const auto& row : result.rows) {
        const BenchRow* dt = find_row(result, Variant::DT, row.k);
        out << to_string(row.variant) << ',' << row.k << ',' << format_double(row.median_us) << ','
            << format_double(row.median_us / dt->median_us) << '\n';
    }
}

template EvalReport rollout(const DecisionModel<float>&, Environment&, double, std::size_t, std::uint64_t,
                            const ScoreRefs&, std::vector<RolloutTrace>*);
template EvalReport rollout(const DecisionModel<double>&, Environment&, double, std::size_t, std::uint64_t,
                            const ScoreRefs&, std::vector<RolloutTrace>*);
template AttentionMap attention_report(const DecisionModel<float>&, Environment&, double, std::size_t, std::uint64_t);
template AttentionMap attention_report(const DecisionModel<double>&, Environment&, double, std::size_t,
                                       std::uint64_t);

}  // namespace ddt
