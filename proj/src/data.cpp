#include "ddt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ddt {

using nlohmann::json;

double Trajectory::total_return() const {
    double total = 0.0;
    for (double r : rewards) {
        total += r;
    }
    return total;
}

void Trajectory::check_consistent() const {
    const std::size_t T = rewards.size();
    auto fail = [&](const std::string& what) {
        throw std::invalid_argument("trajectory (" + env_id + "): " + what);
    };
    if (T == 0) fail("empty episode");
    if (obs_dim == 0 || observations.size() != T * obs_dim) fail("observations do not match length and obs_dim");
    if (rtgs.size() != T) fail("rtgs length differs from rewards");
    if (timesteps.size() != T) fail("timesteps length differs from rewards");
    if (action_space == ActionSpace::Continuous) {
        if (actions.size() != T * action_dim || !action_ids.empty()) fail("continuous actions do not match length");
    } else {
        if (action_ids.size() != T || !actions.empty()) fail("discrete action ids do not match length");
        for (int a : action_ids) {
            if (a < 0 || static_cast<std::size_t>(a) >= action_dim) fail("action id out of range");
        }
    }
}

std::vector<double> compute_rtgs(std::span<const double> rewards) {
    if (rewards.empty()) {
        throw std::invalid_argument("compute_rtgs: empty reward sequence");
    }
    std::vector<double> rtgs(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        if (!std::isfinite(rewards[i])) {
            throw std::invalid_argument("compute_rtgs: non-finite reward at step " + std::to_string(i));
        }
        acc += rewards[i];
        rtgs[i] = acc;
    }
    return rtgs;
}

bool verify_rtg_decomposition(const Trajectory& traj, double tol) {
    const std::size_t T = traj.rewards.size();
    if (T == 0 || traj.rtgs.size() != T) {
        return false;
    }
    if (std::abs(traj.rtgs[T - 1] - traj.rewards[T - 1]) > tol) {
        return false;
    }
    double rebuilt = traj.rtgs[T - 1];
    for (std::size_t i = T - 1; i-- > 0;) {
        rebuilt += traj.rewards[i];
        if (std::abs(rebuilt - traj.rtgs[i]) > tol) {
            return false;
        }
    }
    return true;
}

DatasetStats dataset_stats(const Dataset& data) {
    DatasetStats s;
    s.episodes = data.size();
    if (data.empty()) {
        return s;
    }
    s.return_min = std::numeric_limits<double>::infinity();
    s.return_max = -std::numeric_limits<double>::infinity();
    double total = 0.0, max_abs = 0.0;
    for (const auto& traj : data) {
        const double r = traj.total_return();
        s.steps += traj.length();
        total += r;
        s.return_min = std::min(s.return_min, r);
        s.return_max = std::max(s.return_max, r);
        max_abs = std::max(max_abs, std::abs(r));
    }
    s.return_mean = total / static_cast<double>(data.size());
    s.suggested_rtg_scale = max_abs > 0.0 ? max_abs : 1.0;
    return s;
}

void write_stats_report(std::ostream& out, const DatasetStats& s) {
    const auto flags = out.flags();
    const auto precision = out.precision();
    out << std::left << std::setw(20) << "episodes" << s.episodes << '\n'
        << std::setw(20) << "steps" << s.steps << '\n'
        << std::setw(20) << "return mean" << std::setprecision(6) << s.return_mean << '\n'
        << std::setw(20) << "return min" << s.return_min << '\n'
        << std::setw(20) << "return max" << s.return_max << '\n'
        << std::setw(20) << "suggested rtg_scale" << s.suggested_rtg_scale << '\n';
    out.flags(flags);
    out << std::setprecision(17) << "episodes=" << s.episodes << '\n'
        << "steps=" << s.steps << '\n'
        << "return_mean=" << s.return_mean << '\n'
        << "return_min=" << s.return_min << '\n'
        << "return_max=" << s.return_max << '\n'
        << "rtg_scale=" << s.suggested_rtg_scale << '\n';
    out.flags(flags);
    out.precision(precision);
}

void fill_window(ContextBatch& batch, std::size_t slot, const Trajectory& traj, std::size_t end, double rtg_scale) {
    const std::size_t k = batch.context;
    const std::size_t od = batch.obs_dim, ad = batch.action_dim;
    const std::size_t n = std::min(k, end + 1);
    const std::size_t start = end + 1 - n;
    const std::size_t pad = k - n;
    // slots may be reused, so clear the padding first
    std::fill_n(batch.obs.begin() + slot * k * od, k * od, 0.0);
    std::fill_n(batch.actions.begin() + slot * k * ad, k * ad, 0.0);
    std::fill_n(batch.action_ids.begin() + slot * k, k, -1);
    std::fill_n(batch.rtgs.begin() + slot * k, k, 0.0);
    std::fill_n(batch.timesteps.begin() + slot * k, k, std::size_t{0});
    std::fill_n(batch.loss_mask.begin() + slot * k, k, std::uint8_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = start + i;
        const std::size_t pos = slot * k + pad + i;
        std::copy_n(traj.observations.begin() + src * od, od, batch.obs.begin() + pos * od);
        if (traj.action_space == ActionSpace::Discrete) {
            const int a = traj.action_ids[src];
            batch.action_ids[pos] = a;
            batch.actions[pos * ad + static_cast<std::size_t>(a)] = 1.0;
        } else {
            std::copy_n(traj.actions.begin() + src * ad, ad, batch.actions.begin() + pos * ad);
        }
        batch.rtgs[pos] = traj.rtgs[src] / rtg_scale;
        batch.timesteps[pos] = traj.timesteps[src];
        batch.loss_mask[pos] = 1;
    }
}

ContextBatch sample_context_batch(const Dataset& data, std::size_t context, std::size_t batch_size,
                                  std::mt19937_64& rng, double rtg_scale, Variant variant) {
    if (context < 1) {
        throw std::invalid_argument("sample_context_batch: context length must be >= 1");
    }
    if (data.empty()) {
        throw std::invalid_argument("sample_context_batch: empty dataset");
    }
    if (!(rtg_scale > 0.0)) {
        throw std::invalid_argument("sample_context_batch: rtg_scale must be positive");
    }
    std::vector<std::size_t> cumulative(data.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        total += data[i].length();
        cumulative[i] = total;
    }
    const Trajectory& first = data.front();
    ContextBatch batch = ContextBatch::empty(variant, batch_size, context, first.obs_dim, first.action_dim);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < batch_size; ++s) {
        const std::size_t flat = pick(rng);
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), flat);
        const std::size_t ep = static_cast<std::size_t>(it - cumulative.begin());
        const std::size_t offset = flat - (ep == 0 ? 0 : cumulative[ep - 1]);
        fill_window(batch, s, data[ep], offset, rtg_scale);
    }
    return batch;
}

// --- io -------------------------------------------------------------------

namespace {

json to_json(const Trajectory& t) {
    json j;
    j["env_id"] = t.env_id;
    j["behavior_tag"] = t.behavior_tag;
    j["obs_dim"] = t.obs_dim;
    j["action_dim"] = t.action_dim;
    j["action_space"] = to_string(t.action_space);
    j["observations"] = t.observations;
    if (t.action_space == ActionSpace::Discrete) {
        j["action_ids"] = t.action_ids;
    } else {
        j["actions"] = t.actions;
    }
    j["rewards"] = t.rewards;
    j["rtgs"] = t.rtgs;
    j["timesteps"] = t.timesteps;
    return j;
}

template <class V>
V field(const json& j, const char* name, std::size_t line) {
    const auto it = j.find(name);
    if (it == j.end()) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": missing field '" + name + "'");
    }
    try {
        return it->get<V>();
    } catch (const json::exception&) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": field '" + name + "' has the wrong type");
    }
}

Trajectory from_json(const json& j, std::size_t line) {
    if (!j.is_object()) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": record is not an object");
    }
    Trajectory t;
    t.env_id = field<std::string>(j, "env_id", line);
    t.behavior_tag = field<std::string>(j, "behavior_tag", line);
    t.obs_dim = field<std::size_t>(j, "obs_dim", line);
    t.action_dim = field<std::size_t>(j, "action_dim", line);
    try {
        t.action_space = parse_action_space(field<std::string>(j, "action_space", line));
    } catch (const std::invalid_argument&) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": field 'action_space' is invalid");
    }
    t.observations = field<std::vector<double>>(j, "observations", line);
    if (t.action_space == ActionSpace::Discrete) {
        t.action_ids = field<std::vector<int>>(j, "action_ids", line);
    } else {
        t.actions = field<std::vector<double>>(j, "actions", line);
    }
    t.rewards = field<std::vector<double>>(j, "rewards", line);
    t.rtgs = field<std::vector<double>>(j, "rtgs", line);
    t.timesteps = field<std::vector<std::size_t>>(j, "timesteps", line);
    try {
        t.check_consistent();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": " + e.what());
    }
    return t;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
    for (const auto& t : data) {
        out << to_json(t).dump() << '\n';
    }
}

void write_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write dataset " + path);
    }
    write_dataset(out, data);
    if (!out) {
        throw std::runtime_error("write failed for dataset " + path);
    }
}

Dataset read_dataset(std::istream& in) {
    Dataset data;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("dataset line " + std::to_string(number) + ": malformed record (" + e.what() + ")");
        }
        data.push_back(from_json(j, number));
    }
    return data;
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read dataset " + path);
    }
    return read_dataset(in);
}

}  // namespace ddt
