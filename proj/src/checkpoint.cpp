#include "ddt/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ddt {

using nlohmann::json;

template <class T>
void save_checkpoint(const std::string& path, const DecisionModel<T>& model, const CheckpointMeta& meta) {
    json doc;
    doc["format_version"] = kCheckpointFormatVersion;
    doc["kind"] = "decision-model";
    doc["config"] = model.config().to_kv();
    doc["meta"] = {{"env", meta.env},
                   {"target_rtg", meta.target_rtg},
                   {"random_ref", meta.random_ref},
                   {"expert_ref", meta.expert_ref},
                   {"train_steps", meta.train_steps},
                   {"seed", meta.seed}};
    json params = json::array();
    for (const auto& [name, tensor] : model.named_parameters()) {
        params.push_back({{"name", name},
                          {"shape", tensor.shape()},
                          {"values", std::vector<T>(tensor.values().begin(), tensor.values().end())}});
    }
    doc["parameters"] = std::move(params);

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot write " + path);
    }
    out << doc.dump() << '\n';
    if (!out) {
        throw std::runtime_error("checkpoint: write failed for " + path);
    }
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot read " + path);
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + " is not valid JSON: " + e.what());
    }
    const int version = doc.value("format_version", -1);
    if (version != kCheckpointFormatVersion) {
        throw std::runtime_error("checkpoint: unsupported format_version " + std::to_string(version) + " in " + path);
    }
    try {
        ModelConfig config;
        config.apply_kv(doc.at("config").get<std::map<std::string, std::string>>());
        LoadedCheckpoint<T> loaded{DecisionModel<T>(config, 0), {}};
        const json& m = doc.at("meta");
        loaded.meta.env = m.at("env").get<std::string>();
        loaded.meta.target_rtg = m.at("target_rtg").get<double>();
        loaded.meta.random_ref = m.at("random_ref").get<double>();
        loaded.meta.expert_ref = m.at("expert_ref").get<double>();
        loaded.meta.train_steps = m.at("train_steps").get<std::size_t>();
        loaded.meta.seed = m.at("seed").get<std::uint64_t>();

        auto named = loaded.model.named_parameters();
        const json& params = doc.at("parameters");
        if (params.size() != named.size()) {
            throw std::runtime_error("checkpoint: expected " + std::to_string(named.size()) + " parameters, found " +
                                     std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < named.size(); ++i) {
            auto& [name, tensor] = named[i];
            const json& rec = params[i];
            if (rec.at("name").get<std::string>() != name || rec.at("shape").get<Shape>() != tensor.shape()) {
                throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " is " +
                                         rec.at("name").get<std::string>() + ", expected " + name + " " +
                                         shape_string(tensor.shape()));
            }
            const auto values = rec.at("values").get<std::vector<T>>();
            if (values.size() != tensor.size()) {
                throw std::runtime_error("checkpoint: parameter " + name + " has the wrong number of values");
            }
            std::copy(values.begin(), values.end(), tensor.mutable_values().begin());
        }
        return loaded;
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint: malformed " + path + ": " + e.what());
    }
}

template void save_checkpoint<float>(const std::string&, const DecisionModel<float>&, const CheckpointMeta&);
template void save_checkpoint<double>(const std::string&, const DecisionModel<double>&, const CheckpointMeta&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace ddt
