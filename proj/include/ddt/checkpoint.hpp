#pragma once

#include <cstdint>
#include <string>

#include "ddt/model.hpp"

namespace ddt {

inline constexpr int kCheckpointFormatVersion = 1;

// Training-side facts an evaluator needs alongside the weights.
struct CheckpointMeta {
    std::string env;
    double target_rtg = 0.0;
    double random_ref = 0.0;
    double expert_ref = 0.0;
    std::size_t train_steps = 0;
    std::uint64_t seed = 0;
};

template <class T>
struct LoadedCheckpoint {
    DecisionModel<T> model;
    CheckpointMeta meta;
};

// JSON document: format_version, config (key=value strings), meta and a list
// of {name, shape, values} parameter records in model order.
template <class T>
void save_checkpoint(const std::string& path, const DecisionModel<T>& model, const CheckpointMeta& meta);

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

}  // namespace ddt
