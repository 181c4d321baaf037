#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imlsp/autodiff.hpp"
#include "imlsp/clinical.hpp"
#include "imlsp/error.hpp"
#include "imlsp/mtlr.hpp"
#include "imlsp/rng.hpp"
#include "imlsp/time_grid.hpp"

namespace imlsp {

struct ConvSpec {
    std::size_t channels = 8;
    int kernel = 3;
    int stride = 2;
    int padding = 1;
};

// Desk-scale defaults: four conv layers with doubling channel counts,
// global average pooling, one fused FC layer of width 64 shared by the four
// MTLR heads. Everything is configurable.
struct EncoderConfig {
    std::vector<ConvSpec> conv_layers = {{8}, {16}, {32}, {64}};
    std::size_t fused_width = 64;
    std::array<std::size_t, 3> input_extents = {16, 16, 8};
    std::size_t clinical_width = kClinicalFeatureWidth;
    std::size_t n_labels = labels::kCount;
    std::size_t k_intervals = 16;
    std::uint64_t seed = 0;
};

// Which input branch feeds the fused features. The absent branch is zeroed
// rather than removed, so checkpoints stay shape-compatible across
// modality-ablation comparisons.
enum class Modality { kMultimodal, kClinicalOnly, kImageOnly };

inline std::string modality_name(Modality m) {
    switch (m) {
        case Modality::kMultimodal: return "multimodal";
        case Modality::kClinicalOnly: return "clinical_only";
        case Modality::kImageOnly: return "image_only";
    }
    throw UsageError("unreachable modality");
}

inline Modality modality_from_name(const std::string& name) {
    if (name == "multimodal") return Modality::kMultimodal;
    if (name == "clinical_only") return Modality::kClinicalOnly;
    if (name == "image_only") return Modality::kImageOnly;
    throw ConfigError("unknown modality '" + name +
                      "' (expected multimodal | clinical_only | image_only)");
}

// Spatial extents after each conv layer; throws if any extent collapses.
inline std::vector<std::array<std::size_t, 3>> conv_output_extents(
    const EncoderConfig& cfg) {
    std::vector<std::array<std::size_t, 3>> extents;
    std::array<std::size_t, 3> cur = cfg.input_extents;
    for (std::size_t layer = 0; layer < cfg.conv_layers.size(); ++layer) {
        const auto& spec = cfg.conv_layers[layer];
        for (int a = 0; a < 3; ++a) {
            const std::int64_t e =
                (static_cast<std::int64_t>(cur[a]) + 2 * spec.padding - spec.kernel) /
                    spec.stride + 1;
            if (e < 1)
                throw ConfigError("conv layer " + std::to_string(layer + 1) +
                                  " collapses axis " + std::to_string(a) +
                                  " to a non-positive extent");
            cur[a] = static_cast<std::size_t>(e);
        }
        extents.push_back(cur);
    }
    return extents;
}

// The IMLSP model: CNN encoder, average pooling, FC fusion of clinical and
// image features, and one MTLR head per label. Weights are fan-in-scaled
// uniform; biases and all MTLR parameters start at zero, so the untrained
// model predicts the uniform PMF.
class ImlspModel {
public:
    explicit ImlspModel(EncoderConfig config)
        : config_(std::move(config)),
          fc_weights_(Tensor({fc_input_width(config_), config_.fused_width})),
          fc_bias_(Tensor({config_.fused_width})) {
        (void)conv_output_extents(config_);  // validate geometry
        std::size_t in_channels = 2;
        for (std::size_t l = 0; l < config_.conv_layers.size(); ++l) {
            const auto& spec = config_.conv_layers[l];
            const std::size_t k = static_cast<std::size_t>(spec.kernel);
            Tensor w({spec.channels, in_channels, k, k, k});
            fill_fan_in(w, in_channels * k * k * k, derive_seed(config_.seed, l, 1));
            conv_weights_.emplace_back(std::move(w));
            conv_biases_.emplace_back(Tensor({spec.channels}));
            in_channels = spec.channels;
        }
        fill_fan_in(fc_weights_.value, fc_input_width(config_),
                    derive_seed(config_.seed, 100, 2));
        for (std::size_t s = 0; s < config_.n_labels; ++s) {
            mtlr_theta_.emplace_back(
                Tensor({config_.fused_width, config_.k_intervals - 1}));
            mtlr_bias_.emplace_back(Tensor({config_.k_intervals - 1}));
        }
    }

    static std::size_t fc_input_width(const EncoderConfig& cfg) {
        return cfg.clinical_width + cfg.conv_layers.back().channels;
    }

    const EncoderConfig& config() const { return config_; }

    Modality modality = Modality::kMultimodal;
    std::optional<TimeGrid> grid;
    NormalizationStats stats;
    std::size_t trained_epochs = 0;

    std::vector<Parameter>& conv_weights() { return conv_weights_; }
    std::vector<Parameter>& conv_biases() { return conv_biases_; }
    Parameter& fc_weights() { return fc_weights_; }
    Parameter& fc_bias() { return fc_bias_; }
    std::vector<Parameter>& mtlr_theta() { return mtlr_theta_; }
    std::vector<Parameter>& mtlr_bias() { return mtlr_bias_; }

    std::vector<std::pair<std::string, Parameter*>> named_parameters() {
        std::vector<std::pair<std::string, Parameter*>> out;
        for (std::size_t l = 0; l < conv_weights_.size(); ++l) {
            out.emplace_back("conv" + std::to_string(l + 1) + ".weight",
                             &conv_weights_[l]);
            out.emplace_back("conv" + std::to_string(l + 1) + ".bias",
                             &conv_biases_[l]);
        }
        out.emplace_back("fc.weight", &fc_weights_);
        out.emplace_back("fc.bias", &fc_bias_);
        for (std::size_t s = 0; s < mtlr_theta_.size(); ++s) {
            out.emplace_back("mtlr." + labels::names()[s] + ".theta",
                             &mtlr_theta_[s]);
            out.emplace_back("mtlr." + labels::names()[s] + ".bias",
                             &mtlr_bias_[s]);
        }
        return out;
    }

    void reset_gradients() {
        for (auto& [name, p] : named_parameters()) p->reset_grad();
    }

    // MTLR parameters in the [K-1, d] orientation used by the pure scoring
    // functions, with the given loss weights attached.
    MtlrParams mtlr_params(std::vector<double> lambda, double beta) const {
        MtlrParams p;
        for (std::size_t s = 0; s < mtlr_theta_.size(); ++s) {
            p.theta.push_back(transpose2(mtlr_theta_[s].value));
            p.bias.push_back(mtlr_bias_[s].value);
        }
        p.lambda = std::move(lambda);
        p.beta = beta;
        return p;
    }

private:
    static void fill_fan_in(Tensor& t, std::size_t fan_in, std::uint64_t seed) {
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    }

    EncoderConfig config_;
    std::vector<Parameter> conv_weights_;
    std::vector<Parameter> conv_biases_;
    Parameter fc_weights_;
    Parameter fc_bias_;
    std::vector<Parameter> mtlr_theta_;
    std::vector<Parameter> mtlr_bias_;
};

// Handles into one sample's slice of a tape.
struct ForwardNodes {
    Tape::NodeId volume = -1;
    Tape::NodeId last_conv_relu = -1;  // rectified feature map of the last layer
    Tape::NodeId fused = -1;
    std::vector<Tape::NodeId> logits;  // per label, K-1 each
};

// Records one sample's forward pass MTLR_s(F_fc(x_clinic || CNN(x_img))) on
// an existing tape (so a mini-batch can share one tape). The absent branch
// under a modality ablation enters the concat as a zero block.
inline ForwardNodes append_forward(Tape& tape, ImlspModel& model,
                                   const Tensor& volume,
                                   const std::vector<double>& clinical) {
    const auto& cfg = model.config();
    if (volume.rank() != 4 || volume.extent(0) != 2 ||
        volume.extent(1) != cfg.input_extents[0] ||
        volume.extent(2) != cfg.input_extents[1] ||
        volume.extent(3) != cfg.input_extents[2])
        throw ConfigError("forward: volume " + volume.shape_str() +
                          " does not match the configured input [2," +
                          std::to_string(cfg.input_extents[0]) + "," +
                          std::to_string(cfg.input_extents[1]) + "," +
                          std::to_string(cfg.input_extents[2]) + "]");
    if (clinical.size() != cfg.clinical_width)
        throw ConfigError("forward: clinical vector has " +
                          std::to_string(clinical.size()) + " features, expected " +
                          std::to_string(cfg.clinical_width));

    ForwardNodes nodes;
    Tape::NodeId pooled;
    if (model.modality == Modality::kClinicalOnly) {
        // Image branch contributes a constant zero feature block; conv
        // parameters receive no gradient and stay at initialization.
        nodes.volume = tape.input(volume);
        pooled = tape.input(Tensor({cfg.conv_layers.back().channels}));
    } else {
        nodes.volume = tape.input(volume);
        Tape::NodeId cur = nodes.volume;
        for (std::size_t l = 0; l < cfg.conv_layers.size(); ++l) {
            const auto& spec = cfg.conv_layers[l];
            cur = tape.conv3d(cur, tape.parameter(model.conv_weights()[l]),
                              tape.parameter(model.conv_biases()[l]), spec.stride,
                              spec.padding);
            cur = tape.relu(cur);
        }
        nodes.last_conv_relu = cur;
        pooled = tape.global_avg_pool(cur);
    }

    const Tape::NodeId clinical_node =
        model.modality == Modality::kImageOnly
            ? tape.input(Tensor({cfg.clinical_width}))
            : tape.input(Tensor::vector1d(clinical));

    const Tape::NodeId fused_in = tape.concat(clinical_node, pooled);
    nodes.fused = tape.relu(tape.dense(fused_in, tape.parameter(model.fc_weights()),
                                       tape.parameter(model.fc_bias())));
    for (std::size_t s = 0; s < cfg.n_labels; ++s)
        nodes.logits.push_back(tape.dense(nodes.fused,
                                          tape.parameter(model.mtlr_theta()[s]),
                                          tape.parameter(model.mtlr_bias()[s])));
    return nodes;
}

struct ForwardResult {
    Tape tape;
    ForwardNodes nodes;
    std::vector<PredictedCurve> curves;  // per label
};

// Fresh-tape forward pass returning the predicted curves together with the
// tape, so gradients of any intermediate can still be queried.
inline ForwardResult forward(ImlspModel& model, const Tensor& volume,
                             const std::vector<double>& clinical) {
    ForwardResult result;
    result.nodes = append_forward(result.tape, model, volume, clinical);
    for (std::size_t s = 0; s < model.config().n_labels; ++s) {
        const auto& logits = result.tape.value(result.nodes.logits[s]);
        result.curves.push_back(pmf_from_scores(
            sequence_scores_from_logits(logits.values())));
    }
    return result;
}

}  // namespace imlsp
