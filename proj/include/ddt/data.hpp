#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddt/batch.hpp"

namespace ddt {

struct Trajectory {
    std::string env_id;
    std::string behavior_tag;
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;
    ActionSpace action_space = ActionSpace::Continuous;
    std::vector<double> observations;  // T × obs_dim
    std::vector<double> actions;       // T × action_dim, continuous only
    std::vector<int> action_ids;       // T, discrete only
    std::vector<double> rewards;
    std::vector<double> rtgs;
    std::vector<std::size_t> timesteps;

    std::size_t length() const { return rewards.size(); }
    double total_return() const;

    // Field lengths agree and T >= 1.
    void check_consistent() const;
    bool operator==(const Trajectory&) const = default;
};

using Dataset = std::vector<Trajectory>;

// Suffix sums: rtgs[i] = Σ_{j>=i} rewards[j].
std::vector<double> compute_rtgs(std::span<const double> rewards);

// True iff the stored RTGs are reproduced by starting from the last one and
// stepping back with R̂_i = R̂_{i+1} + r_i, each within `tol`.
bool verify_rtg_decomposition(const Trajectory& traj, double tol = 1e-9);

struct DatasetStats {
    std::size_t episodes = 0;
    std::size_t steps = 0;
    double return_mean = 0.0;
    double return_min = 0.0;
    double return_max = 0.0;
    double suggested_rtg_scale = 1.0;  // max |episode return|, 1 when all are zero
};

DatasetStats dataset_stats(const Dataset& data);
// Aligned human-readable block followed by key=value lines.
void write_stats_report(std::ostream& out, const DatasetStats& stats);

// Uniform (episode, end timestep) windows of up to `context` steps ending at
// the sampled step, left-padded. RTGs are divided by rtg_scale.
ContextBatch sample_context_batch(const Dataset& data, std::size_t context, std::size_t batch_size,
                                  std::mt19937_64& rng, double rtg_scale, Variant variant);

// Window ending at `end` (inclusive) of one trajectory.
void fill_window(ContextBatch& batch, std::size_t slot, const Trajectory& traj, std::size_t end, double rtg_scale);

// Newline-delimited JSON, one trajectory per line.
void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);
// Throws std::runtime_error naming the 1-based line and the offending field.
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);

}  // namespace ddt
