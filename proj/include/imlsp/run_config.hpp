#pragma once

#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/checkpoint.hpp"
#include "imlsp/error.hpp"
#include "imlsp/gradteam.hpp"
#include "imlsp/network.hpp"
#include "imlsp/synthetic.hpp"
#include "imlsp/training.hpp"

namespace imlsp {

// Strict config parsing: silent hyperparameter typos are the main
// operational hazard, so every object rejects keys it does not know.
inline void require_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& context) {
    if (!j.is_object())
        throw ConfigError(context + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) {
            std::string keys;
            for (const char* a : allowed) keys += std::string(keys.empty() ? "" : ", ") + a;
            throw ConfigError("unknown key '" + key + "' in " + context +
                              " (allowed: " + keys + ")");
        }
    }
}

// ---------------------------------------------------------------------------
// synth

inline SyntheticConfig parse_synthetic_config(const nlohmann::json& j) {
    require_keys(j, {"n_patients", "seed", "vol_extents", "blob", "noise_hu",
                     "background_hu", "signal", "split"},
                 "synth config");
    SyntheticConfig cfg;
    cfg.n_patients = j.value("n_patients", cfg.n_patients);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("vol_extents")) {
        const auto& e = j.at("vol_extents");
        for (int i = 0; i < 3; ++i) cfg.vol_extents[i] = e.at(i).get<std::size_t>();
    }
    cfg.noise_hu = j.value("noise_hu", cfg.noise_hu);
    cfg.background_hu = j.value("background_hu", cfg.background_hu);
    if (j.contains("blob")) {
        const auto& b = j.at("blob");
        require_keys(b, {"center_frac", "center_jitter_vox", "radius_vox",
                         "amplitude_lo", "amplitude_hi", "signal_in_size"},
                     "synth config blob");
        if (b.contains("center_frac"))
            for (int i = 0; i < 3; ++i)
                cfg.blob_center_frac[i] = b.at("center_frac").at(i).get<double>();
        cfg.blob_center_jitter_vox =
            b.value("center_jitter_vox", cfg.blob_center_jitter_vox);
        cfg.blob_radius_vox = b.value("radius_vox", cfg.blob_radius_vox);
        cfg.blob_amplitude_lo = b.value("amplitude_lo", cfg.blob_amplitude_lo);
        cfg.blob_amplitude_hi = b.value("amplitude_hi", cfg.blob_amplitude_hi);
        cfg.signal_in_size = b.value("signal_in_size", cfg.signal_in_size);
    }
    if (j.contains("signal")) {
        const auto& s = j.at("signal");
        require_keys(s, {"clinical_weight", "image_weight", "label_noise_sd",
                         "base_hazards", "censoring_max_years"},
                     "synth config signal");
        cfg.clinical_weight = s.value("clinical_weight", cfg.clinical_weight);
        cfg.image_weight = s.value("image_weight", cfg.image_weight);
        cfg.label_noise_sd = s.value("label_noise_sd", cfg.label_noise_sd);
        if (s.contains("base_hazards"))
            for (std::size_t i = 0; i < labels::kCount; ++i)
                cfg.base_hazards[i] = s.at("base_hazards").at(i).get<double>();
        cfg.censoring_max_years =
            s.value("censoring_max_years", cfg.censoring_max_years);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        require_keys(s, {"train_fraction", "validation_fraction"},
                     "synth config split");
        cfg.train_fraction = s.value("train_fraction", cfg.train_fraction);
        cfg.validation_fraction =
            s.value("validation_fraction", cfg.validation_fraction);
    }
    return cfg;
}

inline nlohmann::json synthetic_config_to_json(const SyntheticConfig& cfg) {
    nlohmann::json j;
    j["n_patients"] = cfg.n_patients;
    j["seed"] = cfg.seed;
    j["vol_extents"] = cfg.vol_extents;
    j["noise_hu"] = cfg.noise_hu;
    j["background_hu"] = cfg.background_hu;
    j["blob"] = {{"center_frac", cfg.blob_center_frac},
                 {"center_jitter_vox", cfg.blob_center_jitter_vox},
                 {"radius_vox", cfg.blob_radius_vox},
                 {"amplitude_lo", cfg.blob_amplitude_lo},
                 {"amplitude_hi", cfg.blob_amplitude_hi},
                 {"signal_in_size", cfg.signal_in_size}};
    j["signal"] = {{"clinical_weight", cfg.clinical_weight},
                   {"image_weight", cfg.image_weight},
                   {"label_noise_sd", cfg.label_noise_sd},
                   {"base_hazards", cfg.base_hazards},
                   {"censoring_max_years", cfg.censoring_max_years}};
    j["split"] = {{"train_fraction", cfg.train_fraction},
                  {"validation_fraction", cfg.validation_fraction}};
    return j;
}

// ---------------------------------------------------------------------------
// train

struct TrainRunConfig {
    std::string manifest;
    EncoderConfig encoder;
    TrainConfig train;
    std::vector<std::string> label_subset;  // empty = all four labels
    Modality modality = Modality::kMultimodal;

    // lambda with the subset mask applied.
    std::array<double, labels::kCount> effective_lambda() const {
        if (label_subset.empty()) return train.lambda;
        std::array<double, labels::kCount> masked{};
        for (const auto& name : label_subset) {
            const std::size_t s = labels::from_name(name);
            masked[s] = train.lambda[s];
        }
        return masked;
    }
};

inline EncoderConfig parse_encoder_config(const nlohmann::json& j) {
    require_keys(j, {"conv_layers", "fused_width", "input_extents",
                     "clinical_width", "n_labels", "k_intervals", "seed"},
                 "encoder config");
    EncoderConfig cfg;
    if (j.contains("conv_layers")) {
        cfg.conv_layers.clear();
        for (const auto& c : j.at("conv_layers")) {
            require_keys(c, {"channels", "kernel", "stride", "padding"},
                         "encoder conv layer");
            ConvSpec spec;
            spec.channels = c.at("channels").get<std::size_t>();
            spec.kernel = c.value("kernel", spec.kernel);
            spec.stride = c.value("stride", spec.stride);
            spec.padding = c.value("padding", spec.padding);
            cfg.conv_layers.push_back(spec);
        }
        if (cfg.conv_layers.empty())
            throw ConfigError("encoder config: conv_layers must be non-empty");
    }
    cfg.fused_width = j.value("fused_width", cfg.fused_width);
    if (j.contains("input_extents"))
        for (int i = 0; i < 3; ++i)
            cfg.input_extents[i] = j.at("input_extents").at(i).get<std::size_t>();
    cfg.clinical_width = j.value("clinical_width", cfg.clinical_width);
    cfg.n_labels = j.value("n_labels", cfg.n_labels);
    cfg.k_intervals = j.value("k_intervals", cfg.k_intervals);
    cfg.seed = j.value("seed", cfg.seed);
    if (cfg.k_intervals < 2)
        throw ConfigError("encoder config: k_intervals must be at least 2");
    return cfg;
}

inline TrainConfig parse_train_section(const nlohmann::json& j) {
    require_keys(j, {"learning_rate", "batch_size", "epochs", "plateau_factor",
                     "plateau_patience", "weight_decay", "lambda", "beta",
                     "augment", "augment_max_rot_deg", "augment_max_shift_vox",
                     "seed"},
                 "train section");
    TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.plateau_factor = j.value("plateau_factor", cfg.plateau_factor);
    cfg.plateau_patience = j.value("plateau_patience", cfg.plateau_patience);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    if (j.contains("lambda"))
        for (std::size_t i = 0; i < labels::kCount; ++i)
            cfg.lambda[i] = j.at("lambda").at(i).get<double>();
    cfg.beta = j.value("beta", cfg.beta);
    cfg.augment = j.value("augment", cfg.augment);
    cfg.augment_max_rot_deg = j.value("augment_max_rot_deg", cfg.augment_max_rot_deg);
    cfg.augment_max_shift_vox =
        j.value("augment_max_shift_vox", cfg.augment_max_shift_vox);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

inline TrainRunConfig parse_train_config(const nlohmann::json& j) {
    require_keys(j, {"manifest", "encoder", "train", "labels", "modality"},
                 "train config");
    TrainRunConfig cfg;
    cfg.manifest = j.at("manifest").get<std::string>();
    if (j.contains("encoder")) cfg.encoder = parse_encoder_config(j.at("encoder"));
    if (j.contains("train")) cfg.train = parse_train_section(j.at("train"));
    if (j.contains("labels")) {
        cfg.label_subset = j.at("labels").get<std::vector<std::string>>();
        for (const auto& name : cfg.label_subset) (void)labels::from_name(name);
    }
    if (j.contains("modality"))
        cfg.modality = modality_from_name(j.at("modality").get<std::string>());
    return cfg;
}

inline nlohmann::json train_config_to_json(const TrainRunConfig& cfg) {
    nlohmann::json j;
    j["manifest"] = cfg.manifest;
    j["encoder"] = encoder_config_to_json(cfg.encoder);
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"plateau_factor", cfg.train.plateau_factor},
                  {"plateau_patience", cfg.train.plateau_patience},
                  {"weight_decay", cfg.train.weight_decay},
                  {"lambda", cfg.train.lambda},
                  {"beta", cfg.train.beta},
                  {"augment", cfg.train.augment},
                  {"augment_max_rot_deg", cfg.train.augment_max_rot_deg},
                  {"augment_max_shift_vox", cfg.train.augment_max_shift_vox},
                  {"seed", cfg.train.seed}};
    j["labels"] = cfg.label_subset;
    j["modality"] = modality_name(cfg.modality);
    return j;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateRunConfig {
    std::string checkpoint;
    std::string manifest;
    std::string split = "test";
    std::vector<double> horizons = {1.0, 2.0, 3.0};
    std::size_t bootstrap_resamples = 1000;
    double bootstrap_level = 0.95;
    std::uint64_t seed = 0;
};

inline EvaluateRunConfig parse_evaluate_config(const nlohmann::json& j) {
    require_keys(j, {"checkpoint", "manifest", "split", "horizons",
                     "bootstrap_resamples", "bootstrap_level", "seed"},
                 "evaluate config");
    EvaluateRunConfig cfg;
    cfg.checkpoint = j.at("checkpoint").get<std::string>();
    cfg.manifest = j.at("manifest").get<std::string>();
    cfg.split = j.value("split", cfg.split);
    if (j.contains("horizons"))
        cfg.horizons = j.at("horizons").get<std::vector<double>>();
    cfg.bootstrap_resamples = j.value("bootstrap_resamples", cfg.bootstrap_resamples);
    cfg.bootstrap_level = j.value("bootstrap_level", cfg.bootstrap_level);
    cfg.seed = j.value("seed", cfg.seed);
    if (cfg.horizons.empty())
        throw ConfigError("evaluate config: horizons must be non-empty");
    return cfg;
}

inline nlohmann::json evaluate_config_to_json(const EvaluateRunConfig& cfg) {
    return {{"checkpoint", cfg.checkpoint},
            {"manifest", cfg.manifest},
            {"split", cfg.split},
            {"horizons", cfg.horizons},
            {"bootstrap_resamples", cfg.bootstrap_resamples},
            {"bootstrap_level", cfg.bootstrap_level},
            {"seed", cfg.seed}};
}

// ---------------------------------------------------------------------------
// explain

struct ExplainRunConfig {
    std::string checkpoint;
    std::string manifest;
    std::string patient;
    std::vector<std::string> label_names;  // empty = all four
    std::optional<std::size_t> interval;   // exactly one of interval/time
    std::optional<double> time_years;
    GuidanceScalar scalar = GuidanceScalar::kSequenceScore;
};

inline ExplainRunConfig parse_explain_config(const nlohmann::json& j) {
    require_keys(j, {"checkpoint", "manifest", "patient", "labels", "interval",
                     "time_years", "scalar"},
                 "explain config");
    ExplainRunConfig cfg;
    cfg.checkpoint = j.at("checkpoint").get<std::string>();
    cfg.manifest = j.at("manifest").get<std::string>();
    cfg.patient = j.at("patient").get<std::string>();
    if (j.contains("labels")) {
        cfg.label_names = j.at("labels").get<std::vector<std::string>>();
        for (const auto& name : cfg.label_names) (void)labels::from_name(name);
    }
    if (j.contains("interval")) cfg.interval = j.at("interval").get<std::size_t>();
    if (j.contains("time_years")) cfg.time_years = j.at("time_years").get<double>();
    if (cfg.interval.has_value() == cfg.time_years.has_value())
        throw ConfigError(
            "explain config: exactly one of 'interval' and 'time_years' is required");
    if (cfg.time_years && !(*cfg.time_years > 0.0))
        throw ConfigError("explain config: time_years must be positive");
    if (j.contains("scalar")) {
        const auto s = j.at("scalar").get<std::string>();
        if (s == "sequence_score") cfg.scalar = GuidanceScalar::kSequenceScore;
        else if (s == "log_pmf") cfg.scalar = GuidanceScalar::kLogPmf;
        else throw ConfigError("explain config: scalar must be sequence_score | log_pmf");
    }
    return cfg;
}

inline nlohmann::json explain_config_to_json(const ExplainRunConfig& cfg) {
    nlohmann::json j;
    j["checkpoint"] = cfg.checkpoint;
    j["manifest"] = cfg.manifest;
    j["patient"] = cfg.patient;
    j["labels"] = cfg.label_names;
    if (cfg.interval) j["interval"] = *cfg.interval;
    if (cfg.time_years) j["time_years"] = *cfg.time_years;
    j["scalar"] = cfg.scalar == GuidanceScalar::kSequenceScore ? "sequence_score"
                                                               : "log_pmf";
    return j;
}

}  // namespace imlsp
