#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ddt/data.hpp"
#include "ddt/model.hpp"

namespace ddt {

struct TrainHyper {
    double lr = 1e-4;
    std::size_t batch_size = 64;
    std::size_t steps = 20000;
    std::uint64_t seed = 0;
    double grad_clip = 0.25;
    std::size_t warmup_steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::map<std::string, std::string> to_kv() const;
    // Applies known keys and returns the ones it did not recognize.
    std::map<std::string, std::string> apply_kv(const std::map<std::string, std::string>& kv);
};

// MSE over unmasked positions (continuous) or mean cross-entropy of logits
// against batch.action_ids (discrete). Rejects an all-masked batch.
template <class T>
Tensor<T> bc_loss(const Tensor<T>& predictions, const ContextBatch& batch, std::span<const std::uint8_t> loss_mask,
                  ActionSpace action_space);

template <class T>
struct TrainResult {
    DecisionModel<T> model;
    std::vector<double> loss_curve;
};

using TrainProgress = std::function<void(std::size_t step, double loss)>;

// Adam with linear warmup and global-norm clipping over sampled context
// batches. Throws std::runtime_error naming the step when the loss diverges.
template <class T>
TrainResult<T> train_run(const Dataset& data, const ModelConfig& config, const TrainHyper& hyper,
                         const TrainProgress& progress = {});

// Rescales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
    bool passed = false;
    std::vector<std::pair<std::string, double>> per_parameter;
};

inline constexpr double kGradCheckStep = 1e-5;
// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
inline constexpr double kGradCheckFloor = 1e-6;

// Central finite differences of bc_loss against backprop for every element
// of every parameter, in 64-bit, on a synthetic padded batch.
GradCheckReport grad_check_model(const ModelConfig& config, double tolerance, std::uint64_t seed = 1);

// Synthetic batch for a config: random observations/actions/RTGs with the
// first sample left-padded by one step when context > 1.
ContextBatch synthetic_batch(const ModelConfig& config, std::size_t batch_size, std::uint64_t seed);

}  // namespace ddt
