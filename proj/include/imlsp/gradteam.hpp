#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imlsp/error.hpp"
#include "imlsp/mtlr.hpp"
#include "imlsp/network.hpp"
#include "imlsp/targets.hpp"
#include "imlsp/volume.hpp"

namespace imlsp {

// Encodes the time and event of interest: the legal target sequence for
// label s and interval k under the cumulative convention.
struct GuidanceVector {
    std::size_t label = 0;
    std::size_t interval = 1;  // 1..K
    std::vector<double> bits;  // length K-1

    static GuidanceVector for_time_event(std::size_t label, std::size_t interval,
                                         std::size_t k_intervals) {
        GuidanceVector g;
        g.label = label;
        g.interval = interval;
        g.bits = TargetSequence::exact(interval, k_intervals).bits();
        return g;
    }
};

// Patient-, label- and interval-specific saliency volume, aligned with the
// model's input grid. Values are min-max scaled to [0,1].
struct ActivationMap {
    Tensor values;  // [X,Y,Z]
    std::size_t label = 0;
    std::size_t interval = 1;
    std::string patient_id;
};

// The scalar that gets backpropagated. The sequence score <bits, logits> is
// the pre-normalization analogue of a class logit; the normalized log-PMF is
// available as an alternative.
enum class GuidanceScalar { kSequenceScore, kLogPmf };

struct GuidanceTrace {
    Tape tape;
    ForwardNodes nodes;
    Tape::NodeId score_node = -1;
    double score = 0.0;
};

// Forward pass plus the guidance scalar node, kept on one tape so both
// backward variants (plain and guided) can run against it.
inline GuidanceTrace guidance_score(
    ImlspModel& model, const Tensor& volume, const std::vector<double>& clinical,
    const GuidanceVector& guidance,
    GuidanceScalar scalar = GuidanceScalar::kSequenceScore) {
    const auto& cfg = model.config();
    if (guidance.label >= cfg.n_labels)
        throw UsageError("guidance label " + std::to_string(guidance.label) +
                         " out of range for " + std::to_string(cfg.n_labels) +
                         " labels");
    if (guidance.interval < 1 || guidance.interval > cfg.k_intervals)
        throw UsageError("guidance interval " + std::to_string(guidance.interval) +
                         " out of range 1.." + std::to_string(cfg.k_intervals));
    if (guidance.bits.size() != cfg.k_intervals - 1)
        throw UsageError("guidance bits have length " +
                         std::to_string(guidance.bits.size()) + ", expected " +
                         std::to_string(cfg.k_intervals - 1));

    GuidanceTrace trace;
    trace.nodes = append_forward(trace.tape, model, volume, clinical);
    const Tape::NodeId logits = trace.nodes.logits[guidance.label];
    if (scalar == GuidanceScalar::kSequenceScore) {
        trace.score_node = trace.tape.dot_const(logits, guidance.bits);
    } else {
        const auto scores = taped_sequence_scores(trace.tape, logits);
        trace.score_node = trace.tape.affine_combine(
            {trace.tape.pick(scores, guidance.interval - 1),
             trace.tape.logsumexp_tail(scores, 0)},
            {1.0, -1.0});
    }
    trace.score = trace.tape.value(trace.score_node)[0];
    return trace;
}

// Grad-CAM style coarse map on the last conv layer's spatial grid: channel
// weights are the spatial means of d(score)/d(activation), the map is the
// rectified weighted sum of the rectified feature maps.
inline Tensor grad_weighted_map(GuidanceTrace& trace) {
    if (trace.nodes.last_conv_relu < 0)
        throw UsageError(
            "grad_weighted_map: the trace has no image branch (clinical-only "
            "modality)");
    trace.tape.backward(trace.score_node,
                        {.guided_relu = false, .into_parameters = false});
    const Tensor& activations = trace.tape.value(trace.nodes.last_conv_relu);
    const Tensor& grads = trace.tape.gradient(trace.nodes.last_conv_relu);
    const std::size_t channels = activations.extent(0);
    const std::size_t vol = activations.extent(1) * activations.extent(2) *
                            activations.extent(3);
    Tensor map({activations.extent(1), activations.extent(2),
                activations.extent(3)});
    for (std::size_t c = 0; c < channels; ++c) {
        double alpha = 0.0;
        const double* g = grads.data() + c * vol;
        for (std::size_t i = 0; i < vol; ++i) alpha += g[i];
        alpha /= static_cast<double>(vol);
        const double* a = activations.data() + c * vol;
        for (std::size_t i = 0; i < vol; ++i) map[i] += alpha * a[i];
    }
    for (auto& v : map.values()) v = v > 0.0 ? v : 0.0;
    return map;
}

// Guided backpropagation to the input volume: every ReLU adjoint passes only
// positions with positive forward activation and positive incoming gradient.
// Returns the CT-channel component, signed, at input resolution.
inline Tensor guided_backprop(GuidanceTrace& trace) {
    trace.tape.backward(trace.score_node,
                        {.guided_relu = true, .into_parameters = false});
    const Tensor& g = trace.tape.gradient(trace.nodes.volume);
    Tensor ct({g.extent(1), g.extent(2), g.extent(3)});
    for (std::size_t i = 0; i < ct.size(); ++i) ct[i] = g[i];  // channel 0
    return ct;
}

// Trilinear upsampling with corner alignment: output index i maps to coarse
// coordinate i*(C-1)/(N-1), which preserves constant fields.
inline Tensor upsample_trilinear(const Tensor& coarse,
                                 const std::array<std::size_t, 3>& target) {
    if (coarse.rank() != 3)
        throw ShapeError("upsample_trilinear: expected rank 3, got " +
                         coarse.shape_str());
    Tensor out({target[0], target[1], target[2]});
    const auto src_coord = [&](std::size_t i, std::size_t axis) {
        if (target[axis] <= 1 || coarse.extent(axis) <= 1) return 0.0;
        return static_cast<double>(i) *
               static_cast<double>(coarse.extent(axis) - 1) /
               static_cast<double>(target[axis] - 1);
    };
    for (std::size_t x = 0; x < target[0]; ++x)
        for (std::size_t y = 0; y < target[1]; ++y)
            for (std::size_t z = 0; z < target[2]; ++z) {
                const double sx = src_coord(x, 0), sy = src_coord(y, 1),
                             sz = src_coord(z, 2);
                const std::size_t x0 = static_cast<std::size_t>(sx);
                const std::size_t y0 = static_cast<std::size_t>(sy);
                const std::size_t z0 = static_cast<std::size_t>(sz);
                const double wx = sx - static_cast<double>(x0);
                const double wy = sy - static_cast<double>(y0);
                const double wz = sz - static_cast<double>(z0);
                double acc = 0.0;
                for (int dx = 0; dx < 2; ++dx)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dz = 0; dz < 2; ++dz) {
                            const double w = (dx ? wx : 1.0 - wx) *
                                             (dy ? wy : 1.0 - wy) *
                                             (dz ? wz : 1.0 - wz);
                            if (w == 0.0) continue;
                            const std::size_t cx =
                                std::min(x0 + dx, coarse.extent(0) - 1);
                            const std::size_t cy =
                                std::min(y0 + dy, coarse.extent(1) - 1);
                            const std::size_t cz =
                                std::min(z0 + dz, coarse.extent(2) - 1);
                            acc += w * coarse[(cx * coarse.extent(1) + cy) *
                                                  coarse.extent(2) + cz];
                        }
                out[(x * target[1] + y) * target[2] + z] = acc;
            }
    return out;
}

// Upsampled coarse map times |guided map|, min-max scaled to [0,1]. A
// constant product (max == min, including the all-zero case) yields the
// all-zero map.
inline ActivationMap fuse_and_upsample(const Tensor& coarse_map,
                                       const Tensor& guided_map,
                                       const std::array<std::size_t, 3>& target) {
    if (guided_map.rank() != 3 || guided_map.extent(0) != target[0] ||
        guided_map.extent(1) != target[1] || guided_map.extent(2) != target[2])
        throw ShapeError("fuse_and_upsample: guided map " + guided_map.shape_str() +
                         " does not match the target extents");
    ActivationMap map;
    map.values = upsample_trilinear(coarse_map, target);
    for (std::size_t i = 0; i < map.values.size(); ++i)
        map.values[i] *= std::abs(guided_map[i]);
    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (auto& v : map.values.values()) v = (v - lo) / (hi - lo);
    } else {
        map.values.fill(0.0);
    }
    return map;
}

// Full Grad-TEAM pipeline for one (patient, label, interval) triple. A
// clinical-only model has no image branch, so its map is identically zero.
inline ActivationMap generate_activation_map(
    ImlspModel& model, const Tensor& volume, const std::vector<double>& clinical,
    const GuidanceVector& guidance,
    GuidanceScalar scalar = GuidanceScalar::kSequenceScore) {
    const std::array<std::size_t, 3> target = model.config().input_extents;
    ActivationMap map;
    if (model.modality == Modality::kClinicalOnly) {
        map.values = Tensor({target[0], target[1], target[2]});
    } else {
        auto trace = guidance_score(model, volume, clinical, guidance, scalar);
        const Tensor coarse = grad_weighted_map(trace);
        const Tensor guided = guided_backprop(trace);
        map = fuse_and_upsample(coarse, guided, target);
    }
    map.label = guidance.label;
    map.interval = guidance.interval;
    return map;
}

// Writes <base>.json/<base>.raw (the toolkit volume format) plus a mid-axial
// greyscale slice <base>_slice.pgm. Bytes are deterministic for equal maps.
inline void export_map(const ActivationMap& map,
                       const std::filesystem::path& base) {
    VolumeChannel vol;
    vol.extents = {map.values.extent(0), map.values.extent(1),
                   map.values.extent(2)};
    vol.spacing_mm = {1.0, 1.0, 1.0};
    vol.channel = "activation";
    vol.data.reserve(map.values.size());
    // x-fastest file order
    for (std::size_t z = 0; z < vol.extents[2]; ++z)
        for (std::size_t y = 0; y < vol.extents[1]; ++y)
            for (std::size_t x = 0; x < vol.extents[0]; ++x)
                vol.data.push_back(static_cast<float>(
                    map.values[(x * vol.extents[1] + y) * vol.extents[2] + z]));
    std::filesystem::path header = base;
    header += ".json";
    write_volume_channel(header, vol);

    const std::size_t z_mid = vol.extents[2] / 2;
    std::vector<std::uint8_t> pixels;
    pixels.reserve(vol.extents[0] * vol.extents[1]);
    for (std::size_t y = 0; y < vol.extents[1]; ++y)
        for (std::size_t x = 0; x < vol.extents[0]; ++x) {
            const double v =
                map.values[(x * vol.extents[1] + y) * vol.extents[2] + z_mid];
            pixels.push_back(static_cast<std::uint8_t>(
                std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
        }
    std::filesystem::path pgm = base;
    pgm += "_slice.pgm";
    write_pgm(pgm, vol.extents[0], vol.extents[1], pixels);
}

}  // namespace imlsp
