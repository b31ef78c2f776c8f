#include "ddt/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace ddt {

// --- enums ----------------------------------------------------------------

std::string to_string(Variant v) {
    switch (v) {
        case Variant::DT: return "dt";
        case Variant::BlockedDT: return "blocked-dt";
        case Variant::DDT: return "ddt";
    }
    return "?";
}

std::string to_string(ActionSpace s) {
    return s == ActionSpace::Continuous ? "continuous" : "discrete";
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::string& key, const std::string& s) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + s + "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("config: " + key + " expects a number, got '" + s + "'");
    }
    return v;
}

}  // namespace

Variant parse_variant(const std::string& s) {
    const auto v = lower(s);
    if (v == "dt") return Variant::DT;
    if (v == "blocked-dt" || v == "blockeddt" || v == "blocked_dt") return Variant::BlockedDT;
    if (v == "ddt") return Variant::DDT;
    throw std::invalid_argument("unknown variant '" + s + "' (expected dt, blocked-dt or ddt)");
}

ActionSpace parse_action_space(const std::string& s) {
    const auto v = lower(s);
    if (v == "continuous") return ActionSpace::Continuous;
    if (v == "discrete") return ActionSpace::Discrete;
    throw std::invalid_argument("unknown action space '" + s + "'");
}

ContextBatch ContextBatch::empty(Variant variant, std::size_t batch, std::size_t context, std::size_t obs_dim,
                                 std::size_t action_dim) {
    ContextBatch b;
    b.variant = variant;
    b.batch = batch;
    b.context = context;
    b.obs_dim = obs_dim;
    b.action_dim = action_dim;
    const std::size_t n = batch * context;
    b.obs.assign(n * obs_dim, 0.0);
    b.actions.assign(n * action_dim, 0.0);
    b.action_ids.assign(n, -1);
    b.rtgs.assign(n, 0.0);
    b.timesteps.assign(n, 0);
    b.loss_mask.assign(n, 0);
    return b;
}

// --- config ---------------------------------------------------------------

void ModelConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw std::invalid_argument("config: d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                    std::to_string(n_heads) + ")");
    }
    if (context_length < 1) {
        throw std::invalid_argument("config: context_length must be >= 1");
    }
    if (n_layers < 1) {
        throw std::invalid_argument("config: n_layers must be >= 1");
    }
    if (max_timestep < 1 || obs_dim < 1 || action_dim < 1) {
        throw std::invalid_argument("config: max_timestep, obs_dim and action_dim must be >= 1");
    }
    if (!(rtg_scale > 0.0) || !std::isfinite(rtg_scale)) {
        throw std::invalid_argument("config: rtg_scale must be positive");
    }
    if (adaln_depth != 1 && adaln_depth != 2) {
        throw std::invalid_argument("config: adaln_depth must be 1 or 2");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("config: dropout must lie in [0, 1)");
    }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"variant", to_string(variant)},
        {"d_model", std::to_string(d_model)},
        {"n_layers", std::to_string(n_layers)},
        {"n_heads", std::to_string(n_heads)},
        {"context_length", std::to_string(context_length)},
        {"max_timestep", std::to_string(max_timestep)},
        {"obs_dim", std::to_string(obs_dim)},
        {"action_dim", std::to_string(action_dim)},
        {"action_space", to_string(action_space)},
        {"adaln_depth", std::to_string(adaln_depth)},
        {"dropout", format_double(dropout)},
        {"rtg_scale", format_double(rtg_scale)},
    };
}

void ModelConfig::apply_kv(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "variant") variant = parse_variant(value);
        else if (key == "d_model") d_model = parse_size(key, value);
        else if (key == "n_layers") n_layers = parse_size(key, value);
        else if (key == "n_heads") n_heads = parse_size(key, value);
        else if (key == "context_length") context_length = parse_size(key, value);
        else if (key == "max_timestep") max_timestep = parse_size(key, value);
        else if (key == "obs_dim") obs_dim = parse_size(key, value);
        else if (key == "action_dim") action_dim = parse_size(key, value);
        else if (key == "action_space") action_space = parse_action_space(value);
        else if (key == "adaln_depth") adaln_depth = static_cast<int>(parse_size(key, value));
        else if (key == "dropout") dropout = parse_double(key, value);
        else if (key == "rtg_scale") rtg_scale = parse_double(key, value);
        else throw std::invalid_argument("config: unknown model key '" + key + "'");
    }
}

// --- token layout ---------------------------------------------------------

Modality token_modality(Variant variant, std::size_t token) {
    if (variant == Variant::DDT) {
        return token % 2 == 0 ? Modality::Obs : Modality::Action;
    }
    switch (token % 3) {
        case 0: return Modality::Rtg;
        case 1: return Modality::Obs;
        default: return Modality::Action;
    }
}

std::size_t token_timestep(Variant variant, std::size_t token) {
    return token / (variant == Variant::DDT ? 2 : 3);
}

std::size_t token_index(Variant variant, std::size_t timestep, Modality modality) {
    if (variant == Variant::DDT) {
        if (modality == Modality::Rtg) {
            throw std::invalid_argument("token_index: DDT sequences carry no RTG tokens");
        }
        return 2 * timestep + (modality == Modality::Obs ? 0 : 1);
    }
    const std::size_t offset = modality == Modality::Rtg ? 0 : modality == Modality::Obs ? 1 : 2;
    return 3 * timestep + offset;
}

MaskMatrix build_attention_mask(Variant variant, std::size_t context) {
    if (context < 1) {
        throw std::invalid_argument("build_attention_mask: context must be >= 1");
    }
    const std::size_t n = context * (variant == Variant::DDT ? 2 : 3);
    MaskMatrix mask{n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k <= q; ++k) {
            bool ok = true;
            if (variant == Variant::BlockedDT && token_modality(variant, k) == Modality::Rtg) {
                ok = token_timestep(variant, k) == token_timestep(variant, q);
            }
            mask.allowed[q * n + k] = ok ? 1 : 0;
        }
    }
    return mask;
}

// --- adaLN ----------------------------------------------------------------

template <class T>
Tensor<T> adaln(const Tensor<T>& x, const Tensor<T>& z, const AdaLNHead<T>& head) {
    const std::size_t d = x.cols();
    if (z.rows() != x.rows() || z.cols() != 1) {
        throw std::invalid_argument("adaln: condition " + shape_string(z.shape()) + " does not match " +
                                    shape_string(x.shape()));
    }
    Tensor<T> cond = z;
    if (head.depth == 2) {
        cond = relu(linear(cond, head.hidden_weight, head.hidden_bias));
    }
    const Tensor<T> mod = linear(cond, head.weight, head.bias);
    const Tensor<T> gamma = slice_cols(mod, 0, d);
    const Tensor<T> beta = slice_cols(mod, d, 2 * d);
    return add(mul(add_scalar(gamma, T(1)), layer_norm(x, T(kLayerNormEps))), beta);
}

// --- model ----------------------------------------------------------------

namespace {

template <class T>
Tensor<T> uniform_weight(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> w(in * out);
    for (auto& v : w) {
        v = T(dist(rng));
    }
    return Tensor<T>::from({in, out}, std::move(w), true);
}

template <class T>
Tensor<T> zeros_param(Shape shape) {
    return Tensor<T>::zeros(std::move(shape), true);
}

template <class T>
Tensor<T> ln_affine(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    return add_bias(scale_last_dim(layer_norm(x, T(kLayerNormEps)), gain), bias);
}

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, const ForwardOptions& options) {
    if (!options.training || rate == 0.0) {
        return x;
    }
    if (!options.rng) {
        throw std::invalid_argument("forward: training with dropout needs an rng");
    }
    return dropout(x, rate, *options.rng);
}

}  // namespace

template <class T>
DecisionModel<T>::DecisionModel(ModelConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = config_.d_model;

    obs_weight_ = uniform_weight<T>(config_.obs_dim, d, rng);
    obs_bias_ = zeros_param<T>({d});
    act_weight_ = uniform_weight<T>(config_.action_dim, d, rng);
    act_bias_ = zeros_param<T>({d});
    if (config_.variant != Variant::DDT) {
        rtg_weight_ = uniform_weight<T>(1, d, rng);
        rtg_bias_ = zeros_param<T>({d});
    }
    {
        std::normal_distribution<double> dist(0.0, 0.02);
        std::vector<T> table(config_.max_timestep * d);
        for (auto& v : table) {
            v = T(dist(rng));
        }
        timestep_table_ = Tensor<T>::from({config_.max_timestep, d}, std::move(table), true);
    }
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        TransformerBlock<T> b;
        b.ln1_gain = Tensor<T>::full({d}, T(1), true);
        b.ln1_bias = zeros_param<T>({d});
        b.qkv_weight = uniform_weight<T>(d, 3 * d, rng);
        b.qkv_bias = zeros_param<T>({3 * d});
        b.proj_weight = uniform_weight<T>(d, d, rng);
        b.proj_bias = zeros_param<T>({d});
        b.ln2_gain = Tensor<T>::full({d}, T(1), true);
        b.ln2_bias = zeros_param<T>({d});
        b.fc_weight = uniform_weight<T>(d, 4 * d, rng);
        b.fc_bias = zeros_param<T>({4 * d});
        b.out_weight = uniform_weight<T>(4 * d, d, rng);
        b.out_bias = zeros_param<T>({d});
        blocks_.push_back(std::move(b));
    }
    if (config_.variant == Variant::DDT) {
        adaln_.depth = config_.adaln_depth;
        if (adaln_.depth == 2) {
            adaln_.hidden_weight = uniform_weight<T>(1, d, rng);
            adaln_.hidden_bias = zeros_param<T>({d});
            adaln_.weight = zeros_param<T>({d, 2 * d});
        } else {
            adaln_.weight = zeros_param<T>({1, 2 * d});
        }
        adaln_.bias = zeros_param<T>({2 * d});
    } else {
        lnf_gain_ = Tensor<T>::full({d}, T(1), true);
        lnf_bias_ = zeros_param<T>({d});
    }
    head_weight_ = uniform_weight<T>(d, config_.action_dim, rng);
    head_bias_ = zeros_param<T>({config_.action_dim});
}

template <class T>
void DecisionModel<T>::set_rtg_scale(double scale) {
    ModelConfig c = config_;
    c.rtg_scale = scale;
    c.validate();
    config_ = c;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> DecisionModel<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out{
        {"embed_obs.weight", obs_weight_},
        {"embed_obs.bias", obs_bias_},
        {"embed_action.weight", act_weight_},
        {"embed_action.bias", act_bias_},
    };
    if (config_.variant != Variant::DDT) {
        out.emplace_back("embed_rtg.weight", rtg_weight_);
        out.emplace_back("embed_rtg.bias", rtg_bias_);
    }
    out.emplace_back("embed_timestep.table", timestep_table_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        out.emplace_back(p + "ln1.gain", b.ln1_gain);
        out.emplace_back(p + "ln1.bias", b.ln1_bias);
        out.emplace_back(p + "attn.qkv.weight", b.qkv_weight);
        out.emplace_back(p + "attn.qkv.bias", b.qkv_bias);
        out.emplace_back(p + "attn.proj.weight", b.proj_weight);
        out.emplace_back(p + "attn.proj.bias", b.proj_bias);
        out.emplace_back(p + "ln2.gain", b.ln2_gain);
        out.emplace_back(p + "ln2.bias", b.ln2_bias);
        out.emplace_back(p + "mlp.fc.weight", b.fc_weight);
        out.emplace_back(p + "mlp.fc.bias", b.fc_bias);
        out.emplace_back(p + "mlp.out.weight", b.out_weight);
        out.emplace_back(p + "mlp.out.bias", b.out_bias);
    }
    if (config_.variant == Variant::DDT) {
        if (adaln_.depth == 2) {
            out.emplace_back("adaln.hidden.weight", adaln_.hidden_weight);
            out.emplace_back("adaln.hidden.bias", adaln_.hidden_bias);
        }
        out.emplace_back("adaln.weight", adaln_.weight);
        out.emplace_back("adaln.bias", adaln_.bias);
    } else {
        out.emplace_back("ln_f.gain", lnf_gain_);
        out.emplace_back("ln_f.bias", lnf_bias_);
    }
    out.emplace_back("pred_action.weight", head_weight_);
    out.emplace_back("pred_action.bias", head_bias_);
    return out;
}

template <class T>
std::vector<Tensor<T>> DecisionModel<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) {
        out.push_back(t);
    }
    return out;
}

template <class T>
std::size_t DecisionModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) {
        n += p.size();
    }
    return n;
}

template <class T>
TokenSequence<T> DecisionModel<T>::embed_sequence(const ContextBatch& batch, bool rtg_requires_grad) const {
    const std::size_t B = batch.batch, k = batch.context, n = B * k;
    if (batch.obs_dim != config_.obs_dim || batch.action_dim != config_.action_dim ||
        batch.obs.size() != n * config_.obs_dim || batch.actions.size() != n * config_.action_dim ||
        batch.rtgs.size() != n || batch.timesteps.size() != n || batch.loss_mask.size() != n) {
        throw std::invalid_argument("embed_sequence: batch dimensions do not match the model (obs_dim " +
                                    std::to_string(config_.obs_dim) + ", action_dim " +
                                    std::to_string(config_.action_dim) + ")");
    }
    for (std::size_t ts : batch.timesteps) {
        if (ts >= config_.max_timestep) {
            throw std::out_of_range("embed_sequence: timestep " + std::to_string(ts) + " >= max_timestep " +
                                    std::to_string(config_.max_timestep));
        }
    }

    auto to_t = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };
    const Tensor<T> obs = Tensor<T>::from({n, config_.obs_dim}, to_t(batch.obs));
    const Tensor<T> act = Tensor<T>::from({n, config_.action_dim}, to_t(batch.actions));
    TokenSequence<T> seq;
    seq.rtg_input = Tensor<T>::from({n, 1}, to_t(batch.rtgs), rtg_requires_grad);
    seq.batch = B;

    const Tensor<T> time = gather_rows(timestep_table_, std::span<const std::size_t>(batch.timesteps));
    std::vector<Tensor<T>> parts;
    if (config_.variant != Variant::DDT) {
        seq.rtg_tokens = add(linear(seq.rtg_input, rtg_weight_, rtg_bias_), time);
        parts.push_back(seq.rtg_tokens);
    }
    parts.push_back(add(linear(obs, obs_weight_, obs_bias_), time));
    parts.push_back(add(linear(act, act_weight_, act_bias_), time));

    // parts are stacked modality-major; interleave them per timestep.
    const std::size_t m = parts.size();
    const std::size_t L = m * k;
    std::vector<std::size_t> order(B * L);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < k; ++t) {
            for (std::size_t j = 0; j < m; ++j) {
                order[b * L + t * m + j] = j * n + b * k + t;
            }
        }
    }
    seq.tokens = gather_rows(concat_rows(parts), std::span<const std::size_t>(order));
    seq.seq = L;
    return seq;
}

template <class T>
Tensor<T> DecisionModel<T>::backbone(const TokenSequence<T>& seq, const AttentionMask& mask,
                                     const ForwardOptions& options, std::vector<std::vector<T>>* attention) const {
    const std::size_t d = config_.d_model;
    Tensor<T> x = maybe_dropout(seq.tokens, config_.dropout, options);
    for (const auto& b : blocks_) {
        const Tensor<T> a = ln_affine(x, b.ln1_gain, b.ln1_bias);
        const Tensor<T> qkv = linear(a, b.qkv_weight, b.qkv_bias);
        std::vector<T> probs;
        const Tensor<T> att = ddt::attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, 2 * d),
                                             slice_cols(qkv, 2 * d, 3 * d), mask, seq.batch, seq.seq,
                                             config_.n_heads, attention ? &probs : nullptr);
        if (attention) {
            attention->push_back(std::move(probs));
        }
        x = add(x, maybe_dropout(linear(att, b.proj_weight, b.proj_bias), config_.dropout, options));
        const Tensor<T> h = gelu(linear(ln_affine(x, b.ln2_gain, b.ln2_bias), b.fc_weight, b.fc_bias));
        x = add(x, maybe_dropout(linear(h, b.out_weight, b.out_bias), config_.dropout, options));
    }
    return x;
}

template <class T>
ForwardOutput<T> DecisionModel<T>::forward(const ContextBatch& batch, const ForwardOptions& options) const {
    if (batch.variant != config_.variant) {
        throw std::invalid_argument("forward: batch assembled for " + to_string(batch.variant) +
                                    " but model variant is " + to_string(config_.variant));
    }
    const TokenSequence<T> seq = embed_sequence(batch, options.rtg_requires_grad);
    const std::size_t B = batch.batch, k = batch.context, L = seq.seq;
    const Variant variant = config_.variant;

    // Structural mask, then keep valid queries away from padded keys. A
    // padded query only sees itself so every row stays normalizable.
    const MaskMatrix base = build_attention_mask(variant, k);
    AttentionMask mask;
    mask.seq = L;
    const bool padded = std::any_of(batch.loss_mask.begin(), batch.loss_mask.end(), [](auto v) { return v == 0; });
    if (!padded) {
        mask.batch = 1;
        mask.allowed = base.allowed;
    } else {
        mask.batch = B;
        mask.allowed.assign(B * L * L, 0);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t q = 0; q < L; ++q) {
                for (std::size_t key = 0; key <= q; ++key) {
                    const bool valid_key = batch.loss_mask[b * k + token_timestep(variant, key)] != 0;
                    mask.allowed[(b * L + q) * L + key] = base.at(q, key) && (valid_key || key == q) ? 1 : 0;
                }
            }
        }
    }

    ForwardOutput<T> out;
    const Tensor<T> hidden = backbone(seq, mask, options, options.capture_attention ? &out.attention : nullptr);

    std::vector<std::size_t> obs_rows(B * k);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < k; ++t) {
            obs_rows[b * k + t] = b * L + token_index(variant, t, Modality::Obs);
        }
    }
    const Tensor<T> obs_hidden = gather_rows(hidden, std::span<const std::size_t>(obs_rows));
    const Tensor<T> conditioned = variant == Variant::DDT ? adaln(obs_hidden, seq.rtg_input, adaln_)
                                                          : ln_affine(obs_hidden, lnf_gain_, lnf_bias_);
    Tensor<T> pred = linear(conditioned, head_weight_, head_bias_);
    if (config_.action_space == ActionSpace::Continuous) {
        pred = ddt::tanh(pred);
    }
    out.predictions = pred;
    out.rtg_input = seq.rtg_input;
    out.rtg_tokens = seq.rtg_tokens;
    return out;
}

template <class T>
ContextBatch DecisionModel<T>::history_batch(const History& history, double rtg_t) const {
    const std::size_t n = history.length();
    const std::size_t k = config_.context_length;
    const std::size_t od = config_.obs_dim, ad = config_.action_dim;
    if (n == 0) {
        throw std::invalid_argument("predict_action: empty history");
    }
    if (n > k) {
        throw std::invalid_argument("predict_action: history of " + std::to_string(n) +
                                    " steps exceeds context length " + std::to_string(k));
    }
    if (history.obs.size() != n * od || history.actions.size() != (n - 1) * ad) {
        throw std::invalid_argument("predict_action: history holds " + std::to_string(history.obs.size()) +
                                    " observation and " + std::to_string(history.actions.size()) +
                                    " action values for " + std::to_string(n) + " steps");
    }
    const bool reads_rtg_history = config_.variant != Variant::DDT;
    if (reads_rtg_history && history.rtgs.size() != n - 1) {
        throw std::invalid_argument("predict_action: " + to_string(config_.variant) + " needs " +
                                    std::to_string(n - 1) + " prior RTGs");
    }
    ContextBatch batch = ContextBatch::empty(config_.variant, 1, k, od, ad);
    const std::size_t pad = k - n;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = pad + i;
        std::copy_n(history.obs.begin() + i * od, od, batch.obs.begin() + pos * od);
        if (i + 1 < n) {
            std::copy_n(history.actions.begin() + i * ad, ad, batch.actions.begin() + pos * ad);
        }
        double rtg = rtg_t;
        if (i + 1 < n && reads_rtg_history) {
            rtg = history.rtgs[i];
        }
        batch.rtgs[pos] = rtg / config_.rtg_scale;
        batch.timesteps[pos] = history.timesteps[i];
        batch.loss_mask[pos] = 1;
    }
    return batch;
}

template <class T>
PolicyAction DecisionModel<T>::predict_action(const History& history, double rtg_t, AttentionCapture* capture) const {
    const ContextBatch batch = history_batch(history, rtg_t);
    ForwardOptions options;
    options.capture_attention = capture != nullptr;
    const ForwardOutput<T> out = forward(batch, options);
    const std::size_t ad = config_.action_dim;
    const auto pred = out.predictions.values();
    PolicyAction action;
    action.values.assign(pred.end() - static_cast<std::ptrdiff_t>(ad), pred.end());
    if (config_.action_space == ActionSpace::Discrete) {
        action.index = argmax_lowest(action.values);
    }
    if (capture) {
        capture->layers = config_.n_layers;
        capture->heads = config_.n_heads;
        capture->seq = config_.sequence_length();
        capture->probs.clear();
        for (const auto& layer : out.attention) {
            capture->probs.insert(capture->probs.end(), layer.begin(), layer.end());
        }
    }
    return action;
}

template <class T>
AttentionCapture DecisionModel<T>::extract_attention(const History& history, double rtg_t) const {
    AttentionCapture capture;
    predict_action(history, rtg_t, &capture);
    return capture;
}

int argmax_lowest(const std::vector<double>& values) {
    if (values.empty()) {
        throw std::invalid_argument("argmax_lowest: empty input");
    }
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

template Tensor<float> adaln(const Tensor<float>&, const Tensor<float>&, const AdaLNHead<float>&);
template Tensor<double> adaln(const Tensor<double>&, const Tensor<double>&, const AdaLNHead<double>&);
template class DecisionModel<float>;
template class DecisionModel<double>;

}  // namespace ddt
