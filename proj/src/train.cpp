#include "ddt/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "ddt/adam.hpp"
#include "ddt/envs.hpp"

namespace ddt {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class V>
V parse_number(const std::string& key, const std::string& s) {
    V v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("config: " + key + " has invalid value '" + s + "'");
    }
    return v;
}

}  // namespace

std::map<std::string, std::string> TrainHyper::to_kv() const {
    return {{"lr", format_double(lr)},
            {"batch_size", std::to_string(batch_size)},
            {"steps", std::to_string(steps)},
            {"seed", std::to_string(seed)},
            {"grad_clip", format_double(grad_clip)},
            {"warmup_steps", std::to_string(warmup_steps)},
            {"beta1", format_double(beta1)},
            {"beta2", format_double(beta2)},
            {"eps", format_double(eps)}};
}

std::map<std::string, std::string> TrainHyper::apply_kv(const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::string> rest;
    for (const auto& [key, value] : kv) {
        if (key == "lr") lr = parse_number<double>(key, value);
        else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
        else if (key == "steps") steps = parse_number<std::size_t>(key, value);
        else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
        else if (key == "grad_clip") grad_clip = parse_number<double>(key, value);
        else if (key == "warmup_steps") warmup_steps = parse_number<std::size_t>(key, value);
        else if (key == "beta1") beta1 = parse_number<double>(key, value);
        else if (key == "beta2") beta2 = parse_number<double>(key, value);
        else if (key == "eps") eps = parse_number<double>(key, value);
        else rest.emplace(key, value);
    }
    return rest;
}

template <class T>
Tensor<T> bc_loss(const Tensor<T>& predictions, const ContextBatch& batch, std::span<const std::uint8_t> loss_mask,
                  ActionSpace action_space) {
    if (predictions.rows() != batch.positions() || predictions.cols() != batch.action_dim) {
        throw std::invalid_argument("bc_loss: predictions " + shape_string(predictions.shape()) +
                                    " do not cover the batch");
    }
    if (action_space == ActionSpace::Discrete) {
        return masked_cross_entropy(predictions, std::span<const int>(batch.action_ids), loss_mask);
    }
    const std::vector<T> target(batch.actions.begin(), batch.actions.end());
    return masked_mse(predictions, std::span<const T>(target), loss_mask);
}

template <class T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (T g : p.grad()) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = T(max_norm / norm);
        for (auto p : params) {
            if (!p.has_grad()) {
                continue;
            }
            for (T& g : p.mutable_grad()) {
                g *= factor;
            }
        }
    }
    return norm;
}

template <class T>
TrainResult<T> train_run(const Dataset& data, const ModelConfig& config, const TrainHyper& hyper,
                         const TrainProgress& progress) {
    if (data.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    const Trajectory& first = data.front();
    if (first.obs_dim != config.obs_dim || first.action_dim != config.action_dim ||
        first.action_space != config.action_space) {
        throw std::invalid_argument("train: dataset (" + first.env_id + ") has obs_dim " +
                                    std::to_string(first.obs_dim) + ", action_dim " +
                                    std::to_string(first.action_dim) + " but the config expects " +
                                    std::to_string(config.obs_dim) + ", " + std::to_string(config.action_dim));
    }
    if (hyper.batch_size == 0) {
        throw std::invalid_argument("train: batch_size must be >= 1");
    }

    TrainResult<T> result{DecisionModel<T>(config, hyper.seed), {}};
    auto& model = result.model;
    const auto named = model.named_parameters();
    std::vector<Tensor<T>> params;
    std::vector<std::string> names;
    for (const auto& [name, t] : named) {
        params.push_back(t);
        names.push_back(name);
    }
    Adam<T> optimizer(params, AdamOptions{hyper.lr, hyper.beta1, hyper.beta2, hyper.eps});
    optimizer.set_names(names);

    std::mt19937_64 batch_rng(derive_seed(hyper.seed, 7));
    std::mt19937_64 dropout_rng(derive_seed(hyper.seed, 8));
    ForwardOptions options;
    options.training = true;
    options.rng = &dropout_rng;

    result.loss_curve.reserve(hyper.steps);
    for (std::size_t step = 0; step < hyper.steps; ++step) {
        const ContextBatch batch = sample_context_batch(data, config.context_length, hyper.batch_size, batch_rng,
                                                        config.rtg_scale, config.variant);
        Tensor<T> loss;
        try {
            const ForwardOutput<T> out = model.forward(batch, options);
            loss = bc_loss(out.predictions, batch, batch.loss_mask, config.action_space);
        } catch (const std::invalid_argument& e) {
            // non-finite activations surface here before the loss exists
            throw std::runtime_error("train: diverged at step " + std::to_string(step) + " (" + e.what() + ")");
        }
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
            throw std::runtime_error("train: loss diverged (non-finite) at step " + std::to_string(step));
        }
        optimizer.zero_grad();
        loss.backward();
        clip_grad_norm(params, hyper.grad_clip);
        const double warm = hyper.warmup_steps == 0
                                ? 1.0
                                : std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(hyper.warmup_steps));
        optimizer.set_lr(hyper.lr * warm);
        optimizer.step();
        result.loss_curve.push_back(value);
        if (progress) {
            progress(step, value);
        }
    }
    return result;
}

ContextBatch synthetic_batch(const ModelConfig& config, std::size_t batch_size, std::uint64_t seed) {
    const std::size_t k = config.context_length;
    ContextBatch batch = ContextBatch::empty(config.variant, batch_size, k, config.obs_dim, config.action_dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> pick_action(0, static_cast<int>(config.action_dim) - 1);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const std::size_t pad = (b == 0 && k > 1) ? 1 : 0;
        const std::size_t t0 = b;
        for (std::size_t t = pad; t < k; ++t) {
            const std::size_t pos = b * k + t;
            for (std::size_t j = 0; j < config.obs_dim; ++j) {
                batch.obs[pos * config.obs_dim + j] = unit(rng);
            }
            if (config.action_space == ActionSpace::Discrete) {
                const int a = pick_action(rng);
                batch.action_ids[pos] = a;
                batch.actions[pos * config.action_dim + static_cast<std::size_t>(a)] = 1.0;
            } else {
                for (std::size_t j = 0; j < config.action_dim; ++j) {
                    batch.actions[pos * config.action_dim + j] = 0.9 * unit(rng);
                }
            }
            batch.rtgs[pos] = unit(rng);
            batch.timesteps[pos] = std::min(config.max_timestep - 1, t0 + t - pad);
            batch.loss_mask[pos] = 1;
        }
    }
    return batch;
}

GradCheckReport grad_check_model(const ModelConfig& config, double tolerance, std::uint64_t seed) {
    if (config.d_model > 16 || config.context_length > 3) {
        throw std::invalid_argument("grad_check: config too large (needs d_model <= 16 and context_length <= 3)");
    }
    ModelConfig cfg = config;
    cfg.dropout = 0.0;
    DecisionModel<double> model(cfg, seed);

    // Move every parameter off its initializer (zeroed adaLN head, unit LN
    // gains) so each path through the network carries a generic gradient.
    std::mt19937_64 rng(derive_seed(seed, 99));
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (auto& [name, t] : model.named_parameters()) {
        auto tensor = t;
        for (double& v : tensor.mutable_values()) {
            v += jitter(rng);
        }
    }

    const ContextBatch batch = synthetic_batch(cfg, 2, derive_seed(seed, 5));
    auto loss_value = [&]() {
        const auto out = model.forward(batch);
        return bc_loss(out.predictions, batch, batch.loss_mask, cfg.action_space).item();
    };

    const auto out = model.forward(batch);
    const Tensor<double> loss = bc_loss(out.predictions, batch, batch.loss_mask, cfg.action_space);
    for (auto& [name, t] : model.named_parameters()) {
        auto tensor = t;
        tensor.zero_grad();
    }
    loss.backward();

    GradCheckReport report;
    const double h = kGradCheckStep;
    for (auto& [name, t] : model.named_parameters()) {
        auto tensor = t;
        const std::vector<double> analytic(tensor.grad().begin(), tensor.grad().end());
        double worst = 0.0;
        auto values = tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = loss_value();
            values[i] = orig - h;
            const double down = loss_value();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
            ++report.checked;
        }
        report.per_parameter.emplace_back(name, worst);
        if (worst >= report.max_rel_error) {
            report.max_rel_error = worst;
            report.worst_parameter = name;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

template Tensor<float> bc_loss(const Tensor<float>&, const ContextBatch&, std::span<const std::uint8_t>, ActionSpace);
template Tensor<double> bc_loss(const Tensor<double>&, const ContextBatch&, std::span<const std::uint8_t>,
                                ActionSpace);
template double clip_grad_norm(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm(const std::vector<Tensor<double>>&, double);
template TrainResult<float> train_run(const Dataset&, const ModelConfig&, const TrainHyper&, const TrainProgress&);
template TrainResult<double> train_run(const Dataset&, const ModelConfig&, const TrainHyper&, const TrainProgress&);

}  // namespace ddt
