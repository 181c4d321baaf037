#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "imlsp/cohort.hpp"
#include "imlsp/mtlr.hpp"
#include "imlsp/network.hpp"
#include "imlsp/optimizer.hpp"
#include "imlsp/rng.hpp"
#include "imlsp/volume.hpp"

namespace imlsp {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    double plateau_factor = 0.1;     // lr multiplier on a validation plateau
    std::size_t plateau_patience = 10;
    double weight_decay = 0.01;
    std::array<double, labels::kCount> lambda = {1.0, 1.0, 1.0, 1.0};
    double beta = 1.0;
    bool augment = false;
    double augment_max_rot_deg = 10.0;
    double augment_max_shift_vox = 5.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0) || batch_size == 0 || epochs == 0)
            throw ConfigError("train config: rates and counts must be positive");
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
            throw ConfigError("train config: plateau factor must be in (0,1)");
        for (double l : lambda)
            if (l < 0.0) throw ConfigError("train config: lambda must be >= 0");
        if (beta < 0.0) throw ConfigError("train config: beta must be >= 0");
    }
};

// One patient, ready for the network: preprocessed volume, encoded clinical
// features and the per-label target sequences on the shared grid.
struct PreparedSample {
    std::string id;
    Tensor volume;
    std::vector<double> clinical;
    std::vector<TargetSequence> targets;
};

// Pools the uncensored event times of all labels, the input for grid
// construction.
inline std::vector<double> pooled_event_times(
    std::span<const CohortPatient* const> patients) {
    std::vector<double> times;
    for (const auto* p : patients)
        for (const auto& o : p->outcomes)
            if (o.event) times.push_back(o.time_years);
    return times;
}

inline std::vector<PreparedSample> prepare_samples(
    std::span<const CohortPatient* const> patients, const ImlspModel& model,
    const std::map<std::string, double>& modality_coding =
        default_modality_coding()) {
    if (!model.grid)
        throw UsageError("prepare_samples: model has no time grid yet");
    std::vector<PreparedSample> out;
    out.reserve(patients.size());
    for (const auto* p : patients) {
        PreparedSample s;
        s.id = p->clinical.id;
        s.volume = preprocess_volume(p->volume, model.config().input_extents);
        const auto coded = encode_clinical(p->clinical, model.stats, modality_coding);
        s.clinical.assign(coded.begin(), coded.end());
        for (std::size_t l = 0; l < labels::kCount; ++l)
            s.targets.push_back(encode_event(*model.grid, p->outcomes[l]));
        out.push_back(std::move(s));
    }
    return out;
}

// Batch loss node: - sum_s lambda_s * mean_batch loglik_s + (beta/2)|theta_s|^2.
// Labels with lambda = 0 contribute only their regularizer.
inline Tape::NodeId append_batch_loss(Tape& tape, ImlspModel& model,
                                      std::span<const ForwardNodes> nodes,
                                      std::span<const PreparedSample* const> samples,
                                      const std::array<double, labels::kCount>& lambda,
                                      double beta) {
    std::vector<Tape::NodeId> terms;
    std::vector<double> weights;
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    for (std::size_t s = 0; s < model.config().n_labels; ++s) {
        if (lambda[s] != 0.0) {
            for (std::size_t j = 0; j < samples.size(); ++j) {
                terms.push_back(taped_target_loglik(tape, nodes[j].logits[s],
                                                    samples[j]->targets[s]));
                weights.push_back(-lambda[s] * inv_n);
            }
        }
        if (beta != 0.0) {
            terms.push_back(tape.square_norm(tape.parameter(model.mtlr_theta()[s])));
            weights.push_back(0.5 * beta);
        }
    }
    return tape.affine_combine(terms, weights);
}

// Full-set loss under the current parameters (forward only, no gradient).
inline double evaluate_loss(ImlspModel& model,
                            std::span<const PreparedSample> samples,
                            const std::array<double, labels::kCount>& lambda,
                            double beta) {
    if (samples.empty()) throw UsageError("evaluate_loss: empty sample set");
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    for (const auto& s : samples) {
        Tape tape;
        const auto nodes = append_forward(tape, model, s.volume, s.clinical);
        for (std::size_t l = 0; l < model.config().n_labels; ++l) {
            if (lambda[l] == 0.0) continue;
            const auto scores = sequence_scores_from_logits(
                tape.value(nodes.logits[l]).values());
            loss -= lambda[l] * inv_n *
                    target_loglik_from_scores(scores, s.targets[l]);
        }
    }
    for (std::size_t l = 0; l < model.config().n_labels; ++l) {
        double sq = 0.0;
        for (double v : model.mtlr_theta()[l].value.values()) sq += v * v;
        loss += 0.5 * beta * sq;
    }
    return loss;
}

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_validation_loss = 0.0;
};

// Mini-batch AdamW training with reduce-on-plateau scheduling on the
// validation multi-label loss. Returns the parameter state of the best
// validation epoch. Deterministic for a fixed seed (augmentation included).
inline TrainResult train(ImlspModel& model,
                         std::span<const PreparedSample> train_samples,
                         std::span<const PreparedSample> validation_samples,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (train_samples.empty() || validation_samples.empty())
        throw UsageError("train: training and validation cohorts must be non-empty");
    for (const auto& s : train_samples)
        if (s.targets.size() != model.config().n_labels)
            throw DataError("train: patient '" + s.id + "' lacks a full target set");

    std::vector<Parameter*> params;
    for (auto& [name, p] : model.named_parameters()) params.push_back(p);
    AdamW optimizer(params, AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8,
                                        cfg.weight_decay});
    Rng rng(derive_seed(cfg.seed, 0x7a41, 0));

    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto snapshot = [&]() {
        std::vector<Tensor> values;
        for (const Parameter* p : params) values.push_back(p->value);
        return values;
    };
    const auto restore = [&](const std::vector<Tensor>& values) {
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i]->value = values[i];
    };

    TrainResult result;
    result.best_validation_loss = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_values = snapshot();
    std::size_t epochs_without_improvement = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            Tape tape;
            std::vector<ForwardNodes> nodes;
            std::vector<const PreparedSample*> batch;
            for (std::size_t pos = begin; pos < end; ++pos) {
                const auto& sample = train_samples[order[pos]];
                if (cfg.augment) {
                    const Tensor augmented =
                        augment(sample.volume, rng, cfg.augment_max_rot_deg,
                                cfg.augment_max_shift_vox);
                    nodes.push_back(append_forward(tape, model, augmented,
                                                   sample.clinical));
                } else {
                    nodes.push_back(append_forward(tape, model, sample.volume,
                                                   sample.clinical));
                }
                batch.push_back(&sample);
            }
            const auto loss_node =
                append_batch_loss(tape, model, nodes, batch, cfg.lambda, cfg.beta);
            const double loss = tape.value(loss_node)[0];
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "train: non-finite loss at epoch " << epoch + 1 << ", batch "
                    << n_batches + 1 << "; parameter norms:";
                for (auto& [name, p] : model.named_parameters()) {
                    double norm = 0.0;
                    for (double v : p->value.values()) norm += v * v;
                    msg << " " << name << "=" << std::sqrt(norm);
                }
                throw Error(msg.str());
            }
            model.reset_gradients();
            tape.backward(loss_node);
            optimizer.step();
            epoch_loss += loss;
            ++n_batches;
        }

        const double validation_loss =
            evaluate_loss(model, validation_samples, cfg.lambda, cfg.beta);
        result.log.push_back({epoch + 1,
                              epoch_loss / static_cast<double>(n_batches),
                              validation_loss, optimizer.learning_rate()});

        if (validation_loss < result.best_validation_loss) {
            result.best_validation_loss = validation_loss;
            result.best_epoch = epoch + 1;
            best_values = snapshot();
            epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= cfg.plateau_patience) {
            optimizer.set_learning_rate(optimizer.learning_rate() *
                                        cfg.plateau_factor);
            epochs_without_improvement = 0;
        }
    }

    restore(best_values);
    model.trained_epochs = cfg.epochs;
    return result;
}

}  // namespace imlsp
