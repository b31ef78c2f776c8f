#pragma once

// GPT backbone with three return-conditioning variants.
//
//   DT         tokens (R̂₁,o₁,a₁, …, R̂ₖ,oₖ,aₖ), causal mask
//   BlockedDT  same tokens, a query at timestep t sees no RTG token but R̂_t
//   DDT        tokens (o₁,a₁, …, oₖ,aₖ); R̂_t enters only through adaLN on the
//              hidden state at o_t, right before the action head
//
// All variants predict a_t from the final hidden state at the o_t token.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ddt/batch.hpp"
#include "ddt/tensor.hpp"

namespace ddt {

struct ModelConfig {
    Variant variant = Variant::DDT;
    std::size_t d_model = 128;
    std::size_t n_layers = 3;
    std::size_t n_heads = 1;
    std::size_t context_length = 20;
    std::size_t max_timestep = 1024;
    std::size_t obs_dim = 1;
    std::size_t action_dim = 1;
    ActionSpace action_space = ActionSpace::Continuous;
    int adaln_depth = 1;
    double dropout = 0.1;
    double rtg_scale = 1.0;

    void validate() const;
    std::size_t tokens_per_step() const { return variant == Variant::DDT ? 2 : 3; }
    std::size_t sequence_length() const { return tokens_per_step() * context_length; }

    std::map<std::string, std::string> to_kv() const;
    // Overrides only the keys present in `kv`; unknown keys throw.
    void apply_kv(const std::map<std::string, std::string>& kv);

    bool operator==(const ModelConfig&) const = default;
};

constexpr double kLayerNormEps = 1e-5;

enum class Modality { Rtg, Obs, Action };

Modality token_modality(Variant variant, std::size_t token);
std::size_t token_timestep(Variant variant, std::size_t token);
std::size_t token_index(Variant variant, std::size_t timestep, Modality modality);

// Structural attention permissions over a full window (true = may attend).
struct MaskMatrix {
    std::size_t size = 0;
    std::vector<std::uint8_t> allowed;
    bool at(std::size_t query, std::size_t key) const { return allowed[query * size + key] != 0; }
};

MaskMatrix build_attention_mask(Variant variant, std::size_t context);

// Produces (γ(z), β(z)) from a scalar condition; depth 1 is a single linear
// 1 → 2·d, depth 2 inserts linear 1 → d followed by ReLU.
template <class T>
struct AdaLNHead {
    int depth = 1;
    Tensor<T> hidden_weight, hidden_bias;  // depth 2 only
    Tensor<T> weight, bias;                // final, zero-initialized
};

// (γ(z)+1) ⊙ layer_norm(x) + β(z), row-wise. x: [N×d], z: [N×1].
template <class T>
Tensor<T> adaln(const Tensor<T>& x, const Tensor<T>& z, const AdaLNHead<T>& head);

template <class T>
struct TransformerBlock {
    Tensor<T> ln1_gain, ln1_bias;
    Tensor<T> qkv_weight, qkv_bias;
    Tensor<T> proj_weight, proj_bias;
    Tensor<T> ln2_gain, ln2_bias;
    Tensor<T> fc_weight, fc_bias;
    Tensor<T> out_weight, out_bias;
};

template <class T>
struct TokenSequence {
    Tensor<T> tokens;       // [B·L × d] in interleaved order
    Tensor<T> rtg_input;    // [B·k × 1] scaled RTGs fed to the model
    Tensor<T> rtg_tokens;   // [B·k × d] RTG embeddings (DT variants only)
    std::size_t batch = 0;
    std::size_t seq = 0;
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout
    bool capture_attention = false;
    bool rtg_requires_grad = false;
};

template <class T>
struct ForwardOutput {
    Tensor<T> predictions;  // [B·k × action_dim]; tanh-squashed or raw logits
    Tensor<T> rtg_input;
    Tensor<T> rtg_tokens;
    std::vector<std::vector<T>> attention;  // per layer, [B][H][L][L]
};

// One episode prefix: n observations, n−1 prior actions (one-hot when
// discrete), n−1 prior raw RTGs (read by DT variants only) and n timesteps.
struct History {
    std::vector<double> obs;
    std::vector<double> actions;
    std::vector<double> rtgs;
    std::vector<std::size_t> timesteps;

    std::size_t length() const { return timesteps.size(); }
};

struct PolicyAction {
    std::vector<double> values;  // continuous action, or logits when discrete
    int index = -1;              // argmax (lowest index on ties) when discrete
};

// Post-softmax scores of a single-sample forward pass.
struct AttentionCapture {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t seq = 0;
    std::vector<double> probs;  // [layer][head][query][key]

    double at(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) const {
        return probs[((layer * heads + head) * seq + q) * seq + k];
    }
};

template <class T>
class DecisionModel {
public:
    DecisionModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    void set_rtg_scale(double scale);

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
    std::vector<Tensor<T>> parameters() const;
    std::size_t parameter_count() const;

    const AdaLNHead<T>& adaln_head() const { return adaln_; }

    TokenSequence<T> embed_sequence(const ContextBatch& batch, bool rtg_requires_grad = false) const;
    ForwardOutput<T> forward(const ContextBatch& batch, const ForwardOptions& options = {}) const;

    // Left-pads the history to a full window, runs forward and returns the
    // last timestep's action. rtg_t is the raw (unscaled) return-to-go.
    PolicyAction predict_action(const History& history, double rtg_t, AttentionCapture* capture = nullptr) const;
    AttentionCapture extract_attention(const History& history, double rtg_t) const;

    // Batch-of-one window used by predict_action.
    ContextBatch history_batch(const History& history, double rtg_t) const;

private:
    Tensor<T> backbone(const TokenSequence<T>& seq, const AttentionMask& mask, const ForwardOptions& options,
                       std::vector<std::vector<T>>* attention) const;

    ModelConfig config_;
    Tensor<T> obs_weight_, obs_bias_;
    Tensor<T> act_weight_, act_bias_;
    Tensor<T> rtg_weight_, rtg_bias_;  // DT variants only
    Tensor<T> timestep_table_;
    std::vector<TransformerBlock<T>> blocks_;
    Tensor<T> lnf_gain_, lnf_bias_;  // DT variants only
    AdaLNHead<T> adaln_;             // DDT only
    Tensor<T> head_weight_, head_bias_;
};

// Lowest index among maximal entries.
int argmax_lowest(const std::vector<double>& values);

}  // namespace ddt
