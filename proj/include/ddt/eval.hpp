#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ddt/envs.hpp"
#include "ddt/model.hpp"

namespace ddt {

// Raw returns of the scripted random and expert behaviors; normalized scores
// map them to 0 and 100.
struct ScoreRefs {
    double random_ref = 0.0;
    double expert_ref = 1.0;
};

inline constexpr std::size_t kReferenceEpisodes = 500;

ScoreRefs compute_score_refs(Environment& env, std::size_t episodes = kReferenceEpisodes, std::uint64_t seed = 0);

// 100·(raw − random) / (expert − random). Rejects expert_ref == random_ref.
double normalized_score(double raw_mean, double random_ref, double expert_ref);

struct EvalReport {
    std::vector<double> returns;
    double mean = 0.0;
    double std_error = 0.0;  // sample std / sqrt(n); 0 for a single episode
    double normalized = 0.0;
    double target_rtg = 0.0;
    std::size_t episodes = 0;
    std::vector<std::uint64_t> seeds;
    ScoreRefs refs;
};

void summarize(EvalReport& report);
// Aligned text followed by key=value lines.
void write_eval_report(std::ostream& out, const EvalReport& report);

// What the policy was shown and what it got, per step of one episode.
struct RolloutTrace {
    std::vector<double> conditioning_rtgs;
    std::vector<double> rewards;
};

// Runs `episodes` episodes. The conditioning RTG starts at target_rtg and is
// reduced by each received reward (never clamped). The history window keeps
// the most recent context_length steps.
template <class T>
EvalReport rollout(const DecisionModel<T>& model, Environment& env, double target_rtg, std::size_t episodes,
                   std::uint64_t seed, const ScoreRefs& refs, std::vector<RolloutTrace>* traces = nullptr);

// Running mean of attention matrices over full-window predictions.
struct AttentionMap {
    Variant variant = Variant::DDT;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t seq = 0;
    std::size_t context = 0;
    std::size_t count = 0;
    std::vector<double> mean;  // [layer][head][query][key]

    double at(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) const {
        return mean[((layer * heads + head) * seq + q) * seq + k];
    }
    // Label of token i, e.g. "R-3", "o-0", "a-1" (modality, steps before the last).
    std::string label(std::size_t token) const;
    void add(const AttentionCapture& capture);
    void finalize();

    // Average over layers, heads and rows of the attention mass whose key lies
    // within `band` timesteps of the query.
    double band_mass(std::size_t band = 1) const;
};

// Accumulates exactly `steps` full-window predictions from rollouts.
template <class T>
AttentionMap attention_report(const DecisionModel<T>& model, Environment& env, double target_rtg, std::size_t steps,
                              std::uint64_t seed);

// Writes attn_l{layer}_h{head}.csv (labelled matrix) and .pgm (P5, max → 255).
std::vector<std::string> write_attention_map(const std::string& dir, const AttentionMap& map);

struct BenchRow {
    Variant variant = Variant::DT;
    std::size_t k = 0;
    std::size_t tokens = 0;
    std::size_t attention_elements = 0;  // per layer and head
    double median_us = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
};

// Times predict_action on a full window for DT, blocked-DT and DDT at each k.
BenchResult bench_inference(const ModelConfig& base, const std::vector<std::size_t>& k_values, std::size_t trials,
                            std::uint64_t seed = 0);

// Deterministic columns (tokens, element counts, DDT/DT ratios).
void write_bench_csv(std::ostream& out, const BenchResult& result);
// Measured wall-clock columns.
void write_timing_csv(std::ostream& out, const BenchResult& result);

}  // namespace ddt
