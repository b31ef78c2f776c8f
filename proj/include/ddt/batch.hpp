#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ddt {

enum class Variant { DT, BlockedDT, DDT };
enum class ActionSpace { Continuous, Discrete };

std::string to_string(Variant v);
std::string to_string(ActionSpace s);
// Accepts "dt", "blocked-dt", "ddt" (case-insensitive).
Variant parse_variant(const std::string& s);
ActionSpace parse_action_space(const std::string& s);

// Fixed-width training window of `context` timesteps per sample. Row-major
// with the sample index outermost. Padded positions (left side of short
// windows) carry zeros and loss_mask = 0.
struct ContextBatch {
    Variant variant = Variant::DDT;
    std::size_t batch = 0;
    std::size_t context = 0;
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;
    std::vector<double> obs;               // batch × context × obs_dim
    std::vector<double> actions;           // batch × context × action_dim (one-hot when discrete)
    std::vector<int> action_ids;           // batch × context, discrete targets (-1 at padding)
    std::vector<double> rtgs;              // batch × context, already divided by rtg_scale
    std::vector<std::size_t> timesteps;    // batch × context
    std::vector<std::uint8_t> loss_mask;   // batch × context

    std::size_t positions() const { return batch * context; }
    static ContextBatch empty(Variant variant, std::size_t batch, std::size_t context, std::size_t obs_dim,
                              std::size_t action_dim);
};

}  // namespace ddt
