#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/error.hpp"
#include "imlsp/network.hpp"

namespace imlsp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

inline constexpr char kCheckpointMagic[] = "IMLSPCKPT\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
    nlohmann::json j;
    j["conv_layers"] = nlohmann::json::array();
    for (const auto& c : cfg.conv_layers)
        j["conv_layers"].push_back({{"channels", c.channels},
                                    {"kernel", c.kernel},
                                    {"stride", c.stride},
                                    {"padding", c.padding}});
    j["fused_width"] = cfg.fused_width;
    j["input_extents"] = cfg.input_extents;
    j["clinical_width"] = cfg.clinical_width;
    j["n_labels"] = cfg.n_labels;
    j["k_intervals"] = cfg.k_intervals;
    j["seed"] = cfg.seed;
    return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig cfg;
    cfg.conv_layers.clear();
    for (const auto& c : j.at("conv_layers"))
        cfg.conv_layers.push_back({c.at("channels").get<std::size_t>(),
                                   c.at("kernel").get<int>(),
                                   c.at("stride").get<int>(),
                                   c.at("padding").get<int>()});
    const auto ext = j.at("input_extents");
    for (int i = 0; i < 3; ++i) cfg.input_extents[i] = ext.at(i).get<std::size_t>();
    cfg.fused_width = j.at("fused_width").get<std::size_t>();
    cfg.clinical_width = j.at("clinical_width").get<std::size_t>();
    cfg.n_labels = j.at("n_labels").get<std::size_t>();
    cfg.k_intervals = j.at("k_intervals").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

namespace detail {

template <class T>
void write_raw(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& f, const std::string& path) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw CheckpointError("truncated checkpoint " + path);
    return v;
}

}  // namespace detail

// Checkpoint layout: magic, u32 format version, length-prefixed canonical
// config JSON, then named parameter blobs (u64 name length, name, u64 rank,
// u64 extents, f64 data), all little-endian.
inline void save_checkpoint(ImlspModel& model, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    detail::write_raw(f, kCheckpointVersion);

    nlohmann::json config;
    config["encoder"] = encoder_config_to_json(model.config());
    config["modality"] = modality_name(model.modality);
    if (model.grid) config["grid_boundaries"] = model.grid->boundaries();
    config["normalization"] = {{"age_mean", model.stats.age_mean},
                               {"age_sd", model.stats.age_sd},
                               {"cigarettes_mean", model.stats.cigarettes_mean},
                               {"cigarettes_sd", model.stats.cigarettes_sd}};
    config["trained_epochs"] = model.trained_epochs;
    const std::string config_bytes = config.dump();
    detail::write_raw(f, static_cast<std::uint64_t>(config_bytes.size()));
    f.write(config_bytes.data(), static_cast<std::streamsize>(config_bytes.size()));

    const auto named = model.named_parameters();
    detail::write_raw(f, static_cast<std::uint64_t>(named.size()));
    for (const auto& [name, param] : named) {
        detail::write_raw(f, static_cast<std::uint64_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& shape = param->value.shape();
        detail::write_raw(f, static_cast<std::uint64_t>(shape.size()));
        for (std::size_t e : shape)
            detail::write_raw(f, static_cast<std::uint64_t>(e));
        f.write(reinterpret_cast<const char*>(param->value.data()),
                static_cast<std::streamsize>(param->value.size() * sizeof(double)));
    }
    if (!f) throw CheckpointError("short write to checkpoint " + path.string());
}

// Loads a model from its checkpoint. When `expected_config` is given the
// model is built from it instead of the stored config, so a checkpoint
// written under a different architecture fails with an error naming the
// first mismatched tensor.
inline ImlspModel load_checkpoint(
    const std::filesystem::path& path,
    const std::optional<EncoderConfig>& expected_config = std::nullopt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());

    char magic[sizeof(kCheckpointMagic) - 1];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError(path.string() + " is not an IMLSP checkpoint");
    const auto version = detail::read_raw<std::uint32_t>(f, path.string());
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint " + path.string() +
                              " has unsupported format version " +
                              std::to_string(version));

    const auto config_len = detail::read_raw<std::uint64_t>(f, path.string());
    std::string config_bytes(config_len, '\0');
    f.read(config_bytes.data(), static_cast<std::streamsize>(config_len));
    if (!f) throw CheckpointError("truncated checkpoint " + path.string());
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(config_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint " + path.string() +
                              " has malformed config: " + e.what());
    }

    ImlspModel model(expected_config
                         ? *expected_config
                         : encoder_config_from_json(config.at("encoder")));
    try {
        model.modality = modality_from_name(config.at("modality").get<std::string>());
        if (config.contains("grid_boundaries"))
            model.grid.emplace(config.at("grid_boundaries").get<std::vector<double>>());
        const auto& norm = config.at("normalization");
        model.stats.age_mean = norm.at("age_mean").get<double>();
        model.stats.age_sd = norm.at("age_sd").get<double>();
        model.stats.cigarettes_mean = norm.at("cigarettes_mean").get<double>();
        model.stats.cigarettes_sd = norm.at("cigarettes_sd").get<double>();
        model.trained_epochs = config.at("trained_epochs").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint " + path.string() +
                              " has malformed config: " + e.what());
    }

    std::map<std::string, Parameter*> by_name;
    for (auto& [name, p] : model.named_parameters()) by_name[name] = p;

    const auto n_entries = detail::read_raw<std::uint64_t>(f, path.string());
    std::size_t filled = 0;
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        const auto name_len = detail::read_raw<std::uint64_t>(f, path.string());
        std::string name(name_len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(name_len));
        const auto rank = detail::read_raw<std::uint64_t>(f, path.string());
        std::vector<std::size_t> shape;
        for (std::uint64_t r = 0; r < rank; ++r)
            shape.push_back(detail::read_raw<std::uint64_t>(f, path.string()));
        if (!f) throw CheckpointError("truncated checkpoint " + path.string());

        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint " + path.string() +
                                  " contains unknown tensor '" + name + "'");
        if (it->second->value.shape() != shape)
            throw CheckpointError(
                "checkpoint " + path.string() + ": tensor '" + name + "' has shape " +
                Tensor::shape_string(shape) + " but the config requires " +
                it->second->value.shape_str());
        f.read(reinterpret_cast<char*>(it->second->value.data()),
               static_cast<std::streamsize>(it->second->value.size() *
                                            sizeof(double)));
        if (!f) throw CheckpointError("truncated checkpoint " + path.string());
        ++filled;
    }
    if (filled != by_name.size())
        throw CheckpointError("checkpoint " + path.string() + " provides " +
                              std::to_string(filled) + " tensors, model needs " +
                              std::to_string(by_name.size()));
    return model;
}

}  // namespace imlsp
