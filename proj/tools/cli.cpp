#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "ddt/checkpoint.hpp"
#include "ddt/data.hpp"
#include "ddt/envs.hpp"
#include "ddt/eval.hpp"
#include "ddt/kv_config.hpp"
#include "ddt/model.hpp"
#include "ddt/train.hpp"

namespace ddt::cli {

namespace {

std::string num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void check_stream(const std::ostream& s, const std::string& path) {
    if (!s) {
        throw std::runtime_error("cannot write " + path);
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    check_stream(f, path);
}

// No timestamps or host details: two identical invocations produce identical manifests.
void write_manifest(const std::string& path, const std::string& command, KeyValues entries) {
    entries["command"] = command;
    entries["checkpoint_format_version"] = std::to_string(kCheckpointFormatVersion);
    entries["dataset_format"] = "ndjson-1";
    std::ostringstream s;
    write_kv(s, entries);
    write_text(path, s.str());
}

void merge(KeyValues& into, const KeyValues& from, const std::string& prefix) {
    for (const auto& [k, v] : from) {
        into[prefix + k] = v;
    }
}

std::string refs_path(const std::string& data_path) { return data_path + ".refs"; }

std::optional<ScoreRefs> read_refs(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        return std::nullopt;
    }
    const KeyValues kv = read_kv_file(path);
    ScoreRefs refs;
    try {
        refs.random_ref = std::stod(kv.at("random_ref"));
        refs.expert_ref = std::stod(kv.at("expert_ref"));
    } catch (const std::exception&) {
        throw std::runtime_error(path + ": needs numeric random_ref and expert_ref");
    }
    return refs;
}

struct Context {
    std::ostream& out;
    std::ostream& err;
    int verbose;
};

// --- subcommands -------------------------------------------------------------

struct GenDataArgs {
    std::string env = "reacher";
    std::string behavior = "mix:0.5";
    std::size_t episodes = 2000;
    std::uint64_t seed = 0;
    std::size_t refs_episodes = kReferenceEpisodes;
    std::string out;
};

void gen_data(const Context& ctx, const GenDataArgs& a) {
    auto env = make_environment(a.env);
    const Behavior behavior = Behavior::parse(a.behavior);
    const Dataset data = gen_dataset(*env, behavior, a.episodes, a.seed);
    write_dataset(a.out, data);

    // Reference scores depend only on the environment, never on --seed.
    const ScoreRefs refs = compute_score_refs(*env, a.refs_episodes, 0);
    write_text(refs_path(a.out), "random_ref=" + num(refs.random_ref) + "\nexpert_ref=" + num(refs.expert_ref) +
                                     "\nepisodes=" + std::to_string(a.refs_episodes) + "\n");

    const DatasetStats stats = dataset_stats(data);
    write_manifest(a.out + ".manifest", "gen-data",
                   {{"env", a.env},
                    {"behavior", behavior.tag()},
                    {"episodes", std::to_string(a.episodes)},
                    {"seed", std::to_string(a.seed)},
                    {"steps", std::to_string(stats.steps)},
                    {"refs_episodes", std::to_string(a.refs_episodes)},
                    {"random_ref", num(refs.random_ref)},
                    {"expert_ref", num(refs.expert_ref)}});
    if (ctx.verbose >= 1) {
        ctx.err << "wrote " << data.size() << " episodes (" << stats.steps << " steps) to " << a.out << '\n';
    }
}

struct TrainArgs {
    std::string variant;
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::size_t> steps, batch_size, warmup, context, d_model, layers, heads;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr, dropout, rtg_scale, target_rtg, grad_clip;
    std::optional<int> adaln_depth;
};

void train(const Context& ctx, const TrainArgs& a) {
    const Dataset data = read_dataset(a.data);
    if (data.empty()) {
        throw std::runtime_error("dataset " + a.data + " has no episodes");
    }
    const Trajectory& first = data.front();
    const DatasetStats stats = dataset_stats(data);

    ModelConfig cfg;
    cfg.obs_dim = first.obs_dim;
    cfg.action_dim = first.action_dim;
    cfg.action_space = first.action_space;
    cfg.rtg_scale = stats.suggested_rtg_scale;
    TrainHyper hyper;
    if (first.action_space == ActionSpace::Discrete) {
        hyper.steps = 50000;
    }
    double target_rtg = stats.return_max;

    if (!a.config.empty()) {
        KeyValues rest = hyper.apply_kv(read_kv_file(a.config));
        if (auto it = rest.find("target_rtg"); it != rest.end()) {
            target_rtg = std::stod(it->second);
            rest.erase(it);
        }
        cfg.apply_kv(rest);
    }
    cfg.variant = parse_variant(a.variant);
    if (a.steps) hyper.steps = *a.steps;
    if (a.batch_size) hyper.batch_size = *a.batch_size;
    if (a.warmup) hyper.warmup_steps = *a.warmup;
    if (a.seed) hyper.seed = *a.seed;
    if (a.lr) hyper.lr = *a.lr;
    if (a.grad_clip) hyper.grad_clip = *a.grad_clip;
    if (a.context) cfg.context_length = *a.context;
    if (a.d_model) cfg.d_model = *a.d_model;
    if (a.layers) cfg.n_layers = *a.layers;
    if (a.heads) cfg.n_heads = *a.heads;
    if (a.adaln_depth) cfg.adaln_depth = *a.adaln_depth;
    if (a.dropout) cfg.dropout = *a.dropout;
    if (a.rtg_scale) cfg.rtg_scale = *a.rtg_scale;
    if (a.target_rtg) target_rtg = *a.target_rtg;
    cfg.validate();

    ScoreRefs refs;
    if (auto stored = read_refs(refs_path(a.data))) {
        refs = *stored;
    } else {
        auto env = make_environment(first.env_id);
        refs = compute_score_refs(*env, kReferenceEpisodes, 0);
    }

    const std::size_t every = std::max<std::size_t>(1, hyper.steps / 20);
    TrainProgress progress;
    if (ctx.verbose >= 1) {
        progress = [&](std::size_t step, double loss) {
            if ((step + 1) % every == 0 || step == 0) {
                ctx.err << "step " << step + 1 << "/" << hyper.steps << " loss " << loss << '\n';
            }
        };
    }
    const TrainResult<float> result = train_run<float>(data, cfg, hyper, progress);

    CheckpointMeta meta;
    meta.env = first.env_id;
    meta.target_rtg = target_rtg;
    meta.random_ref = refs.random_ref;
    meta.expert_ref = refs.expert_ref;
    meta.train_steps = hyper.steps;
    meta.seed = hyper.seed;
    save_checkpoint(a.out, result.model, meta);

    std::ostringstream curve;
    curve << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
        curve << i + 1 << ',' << num(result.loss_curve[i]) << '\n';
    }
    write_text(a.out + ".loss.csv", curve.str());

    KeyValues entries{{"data", a.data},
                      {"env", meta.env},
                      {"target_rtg", num(target_rtg)},
                      {"random_ref", num(refs.random_ref)},
                      {"expert_ref", num(refs.expert_ref)}};
    merge(entries, cfg.to_kv(), "model.");
    merge(entries, hyper.to_kv(), "train.");
    write_manifest(a.out + ".manifest", "train", entries);
    if (ctx.verbose >= 1) {
        ctx.err << "saved " << a.out << " (" << result.model.parameter_count() << " parameters)\n";
    }
}

struct EvalArgs {
    std::string ckpt;
    std::string env;
    std::optional<double> target_rtg;
    std::size_t episodes = 100;
    std::uint64_t seed = 0;
    std::string out;
};

void eval(const Context& ctx, const EvalArgs& a) {
    const LoadedCheckpoint<float> loaded = load_checkpoint<float>(a.ckpt);
    const std::string env_id = a.env.empty() ? loaded.meta.env : a.env;
    auto env = make_environment(env_id);
    const double target = a.target_rtg.value_or(loaded.meta.target_rtg);
    const ScoreRefs refs{loaded.meta.random_ref, loaded.meta.expert_ref};
    const EvalReport report = rollout(loaded.model, *env, target, a.episodes, a.seed, refs);

    std::ostringstream text;
    write_eval_report(text, report);
    ctx.out << text.str();
    if (!a.out.empty()) {
        write_text(a.out, text.str());
        write_manifest(a.out + ".manifest", "eval",
                       {{"ckpt", a.ckpt},
                        {"env", env_id},
                        {"target_rtg", num(target)},
                        {"episodes", std::to_string(a.episodes)},
                        {"seed", std::to_string(a.seed)}});
    }
}

struct AttnArgs {
    std::string ckpt;
    std::string env;
    std::optional<double> target_rtg;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;
    std::string out;
};

void attn(const Context& ctx, const AttnArgs& a) {
    const LoadedCheckpoint<float> loaded = load_checkpoint<float>(a.ckpt);
    const std::string env_id = a.env.empty() ? loaded.meta.env : a.env;
    auto env = make_environment(env_id);
    const double target = a.target_rtg.value_or(loaded.meta.target_rtg);
    const AttentionMap map = attention_report(loaded.model, *env, target, a.steps, a.seed);
    const auto files = write_attention_map(a.out, map);

    KeyValues entries{{"ckpt", a.ckpt},
                      {"env", env_id},
                      {"target_rtg", num(target)},
                      {"steps", std::to_string(a.steps)},
                      {"seed", std::to_string(a.seed)},
                      {"variant", to_string(map.variant)},
                      {"seq", std::to_string(map.seq)},
                      {"band_mass_1", num(map.band_mass(1))}};
    std::string listing;
    for (const auto& f : files) {
        listing += (listing.empty() ? "" : ",") + std::filesystem::path(f).filename().string();
    }
    entries["files"] = listing;
    write_manifest((std::filesystem::path(a.out) / "manifest.txt").string(), "attn", entries);
    ctx.out << "variant=" << to_string(map.variant) << "\nsequence_length=" << map.seq
            << "\nsamples=" << map.count << "\nband_mass_1=" << num(map.band_mass(1)) << '\n';
}

struct BenchArgs {
    std::string k = "10,20,30";
    std::size_t trials = 10;
    std::uint64_t seed = 0;
    std::optional<std::size_t> d_model, layers, heads;
    std::string out;
};

std::vector<std::size_t> parse_list(const std::string& s) {
    std::vector<std::size_t> values;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t v = 0;
        auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v == 0) {
            throw CLI::ValidationError("--k", "expected a comma-separated list of positive integers, got '" + s + "'");
        }
        values.push_back(v);
    }
    if (values.empty()) {
        throw CLI::ValidationError("--k", "empty list");
    }
    return values;
}

void bench(const Context& ctx, const BenchArgs& a) {
    ModelConfig base;
    base.dropout = 0.0;
    if (a.d_model) base.d_model = *a.d_model;
    if (a.layers) base.n_layers = *a.layers;
    if (a.heads) base.n_heads = *a.heads;
    const auto ks = parse_list(a.k);
    const BenchResult result = bench_inference(base, ks, a.trials, a.seed);

    std::ostringstream table, timing;
    write_bench_csv(table, result);
    write_timing_csv(timing, result);
    ctx.out << table.str();
    if (ctx.verbose >= 1) {
        ctx.err << timing.str();
    }
    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        const std::filesystem::path dir(a.out);
        write_text((dir / "bench.csv").string(), table.str());
        write_text((dir / "timing.csv").string(), timing.str());
        KeyValues entries{{"k", a.k}, {"trials", std::to_string(a.trials)}, {"seed", std::to_string(a.seed)}};
        merge(entries, base.to_kv(), "model.");
        entries.erase("model.variant");
        entries.erase("model.context_length");
        write_manifest((dir / "manifest.txt").string(), "bench", entries);
    }
}

struct GradCheckArgs {
    std::string variant = "ddt";
    std::string action_space = "continuous";
    int adaln_depth = 1;
    double tol = 1e-4;
    std::uint64_t seed = 1;
};

bool grad_check(const Context& ctx, const GradCheckArgs& a) {
    ModelConfig cfg;
    cfg.variant = parse_variant(a.variant);
    cfg.action_space = parse_action_space(a.action_space);
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.context_length = 3;
    cfg.max_timestep = 8;
    cfg.obs_dim = 3;
    cfg.action_dim = cfg.action_space == ActionSpace::Discrete ? 4 : 2;
    cfg.adaln_depth = a.adaln_depth;
    cfg.dropout = 0.0;
    const GradCheckReport report = grad_check_model(cfg, a.tol, a.seed);
    for (const auto& [name, error] : report.per_parameter) {
        ctx.out << name << ' ' << error << '\n';
    }
    ctx.out << "checked=" << report.checked << "\nmax_rel_error=" << report.max_rel_error
            << "\nworst=" << report.worst_parameter << "\nresult=" << (report.passed ? "pass" : "fail") << '\n';
    return report.passed;
}

void stats(const Context& ctx, const std::string& path) {
    write_stats_report(ctx.out, dataset_stats(read_dataset(path)));
}

}  // namespace

int verbosity() {
    const char* v = std::getenv("DDT_VERBOSE");
    if (!v || !*v) {
        return 1;
    }
    int level = 1;
    std::from_chars(v, v + std::char_traits<char>::length(v), level);
    return level;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Decision transformer variants: data, training, evaluation and diagnostics", "ddt"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    const auto env_check = CLI::IsMember({"reacher", "g2048"});
    const auto variant_check = CLI::IsMember({"dt", "blocked-dt", "ddt"});
    const CLI::Validator behavior_check(
        [](std::string& s) {
            try {
                (void)Behavior::parse(s);
            } catch (const std::invalid_argument& e) {
                return std::string(e.what());
            }
            return std::string();
        },
        "BEHAVIOR");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Roll out a behavior policy and write a dataset");
    gen_cmd->add_option("--env", gen.env, "reacher or g2048")->check(env_check)->capture_default_str();
    gen_cmd->add_option("--behavior", gen.behavior, "random, expert or mix:P")
        ->check(behavior_check)
        ->capture_default_str();
    gen_cmd->add_option("--episodes", gen.episodes)->capture_default_str()->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--refs-episodes", gen.refs_episodes, "Episodes per scripted policy for score references")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    gen_cmd->add_option("--out", gen.out, "Dataset path")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a policy on a dataset");
    train_cmd->add_option("--variant", tr.variant)->required()->check(variant_check);
    train_cmd->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--config", tr.config, "key=value file, overridden by flags")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
    train_cmd->add_option("--steps", tr.steps);
    train_cmd->add_option("--batch-size", tr.batch_size);
    train_cmd->add_option("--warmup", tr.warmup);
    train_cmd->add_option("--seed", tr.seed);
    train_cmd->add_option("--lr", tr.lr);
    train_cmd->add_option("--grad-clip", tr.grad_clip);
    train_cmd->add_option("--context", tr.context);
    train_cmd->add_option("--d-model", tr.d_model);
    train_cmd->add_option("--layers", tr.layers);
    train_cmd->add_option("--heads", tr.heads);
    train_cmd->add_option("--adaln-depth", tr.adaln_depth)->check(CLI::Range(1, 2));
    train_cmd->add_option("--dropout", tr.dropout);
    train_cmd->add_option("--rtg-scale", tr.rtg_scale);
    train_cmd->add_option("--target-rtg", tr.target_rtg, "Stored default for eval (dataset max return)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Roll out a checkpoint and report returns");
    eval_cmd->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--env", ev.env, "Defaults to the training environment")->check(env_check);
    eval_cmd->add_option("--target-rtg", ev.target_rtg, "Defaults to the training dataset's max return");
    eval_cmd->add_option("--episodes", ev.episodes)->capture_default_str()->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", ev.seed)->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Also write the report here");

    AttnArgs at;
    auto* attn_cmd = app.add_subcommand("attn", "Average attention maps over inference steps");
    attn_cmd->add_option("--ckpt", at.ckpt)->required()->check(CLI::ExistingFile);
    attn_cmd->add_option("--env", at.env)->check(env_check);
    attn_cmd->add_option("--target-rtg", at.target_rtg);
    attn_cmd->add_option("--steps", at.steps)->capture_default_str()->check(CLI::PositiveNumber);
    attn_cmd->add_option("--seed", at.seed)->capture_default_str();
    attn_cmd->add_option("--out", at.out, "Output directory")->required();

    BenchArgs be;
    auto* bench_cmd = app.add_subcommand("bench", "Token counts and predict_action timing per variant");
    bench_cmd->add_option("--k", be.k, "Comma-separated context lengths")->capture_default_str();
    bench_cmd->add_option("--trials", be.trials)->capture_default_str()->check(CLI::Range(3, 1000000));
    bench_cmd->add_option("--seed", be.seed)->capture_default_str();
    bench_cmd->add_option("--d-model", be.d_model);
    bench_cmd->add_option("--layers", be.layers);
    bench_cmd->add_option("--heads", be.heads);
    bench_cmd->add_option("--out", be.out, "Write bench.csv, timing.csv and a manifest here");

    GradCheckArgs gc;
    auto* gc_cmd = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
    gc_cmd->add_option("--variant", gc.variant)->check(variant_check)->capture_default_str();
    gc_cmd->add_option("--action-space", gc.action_space)
        ->check(CLI::IsMember({"continuous", "discrete"}))
        ->capture_default_str();
    gc_cmd->add_option("--adaln-depth", gc.adaln_depth)->check(CLI::Range(1, 2))->capture_default_str();
    gc_cmd->add_option("--tol", gc.tol)->capture_default_str();
    gc_cmd->add_option("--seed", gc.seed)->capture_default_str();

    std::string stats_path;
    auto* stats_cmd = app.add_subcommand("stats", "Summarize a dataset");
    stats_cmd->add_option("--data", stats_path)->required()->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    const Context ctx{out, err, verbosity()};
    try {
        if (*gen_cmd) gen_data(ctx, gen);
        else if (*train_cmd) train(ctx, tr);
        else if (*eval_cmd) eval(ctx, ev);
        else if (*attn_cmd) attn(ctx, at);
        else if (*bench_cmd) bench(ctx, be);
        else if (*gc_cmd) return grad_check(ctx, gc) ? 0 : 2;
        else if (*stats_cmd) stats(ctx, stats_path);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, out, err);
}

}  // namespace ddt::cli
