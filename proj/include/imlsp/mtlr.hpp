#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "imlsp/autodiff.hpp"
#include "imlsp/error.hpp"
#include "imlsp/targets.hpp"
#include "imlsp/tensor.hpp"
#include "imlsp/time_grid.hpp"

namespace imlsp {

// Parameters of the S MTLR heads over a shared K-interval grid: per label a
// (K-1) x d weight matrix and a K-1 bias vector, plus the per-label loss
// weights lambda and the shared L2 strength beta. Biases are not
// regularized.
struct MtlrParams {
    std::vector<Tensor> theta;   // per label, shape [K-1, d]
    std::vector<Tensor> bias;    // per label, shape [K-1]
    std::vector<double> lambda;  // per label, >= 0
    double beta = 1.0;

    static MtlrParams zeros(std::size_t n_labels, std::size_t k_intervals,
                            std::size_t d) {
        MtlrParams p;
        for (std::size_t s = 0; s < n_labels; ++s) {
            p.theta.emplace_back(std::vector<std::size_t>{k_intervals - 1, d});
            p.bias.emplace_back(std::vector<std::size_t>{k_intervals - 1});
        }
        p.lambda.assign(n_labels, 1.0);
        return p;
    }

    std::size_t n_labels() const { return theta.size(); }
    std::size_t k_intervals() const { return theta.at(0).extent(0) + 1; }
    std::size_t feature_width() const { return theta.at(0).extent(1); }
};

// Event-interval PMF and the matching survival curve on the grid.
// pmf[i-1] = P(event in interval i), i = 1..K; survival[k] = S(t_k) for
// k = 0..K-1, i.e. the tail sum of the pmf beyond interval k.
struct PredictedCurve {
    std::vector<double> pmf;
    std::vector<double> survival;
};

// Per-time-point linear terms theta_k . x + b_k for one label, k = 1..K-1.
inline std::vector<double> mtlr_logits(const Tensor& theta, const Tensor& bias,
                                       std::span<const double> x) {
    if (theta.rank() != 2 || theta.extent(1) != x.size())
        throw ShapeError("mtlr_logits: theta " + theta.shape_str() +
                         " does not conform to feature vector [" +
                         std::to_string(x.size()) + "]");
    const std::size_t rows = theta.extent(0);
    std::vector<double> logits(rows);
    for (std::size_t k = 0; k < rows; ++k) {
        double acc = bias[k];
        for (std::size_t j = 0; j < x.size(); ++j) acc += theta.at2(k, j) * x[j];
        logits[k] = acc;
    }
    return logits;
}

// Scores of the K legal sequences under the cumulative convention:
// score_i = sum_{k >= i} logit_k for i = 1..K-1 and score_K = 0.
inline std::vector<double> sequence_scores_from_logits(
    std::span<const double> logits) {
    std::vector<double> scores(logits.size() + 1, 0.0);
    double acc = 0.0;
    for (std::size_t i = logits.size(); i-- > 0;) {
        acc += logits[i];
        scores[i] = acc;
    }
    return scores;
}

inline std::vector<double> sequence_scores(const Tensor& theta, const Tensor& bias,
                                           std::span<const double> x) {
    return sequence_scores_from_logits(mtlr_logits(theta, bias, x));
}

inline double logsumexp(std::span<const double> v, std::size_t from = 0) {
    double m = v[from];
    for (std::size_t i = from + 1; i < v.size(); ++i) m = std::max(m, v[i]);
    double acc = 0.0;
    for (std::size_t i = from; i < v.size(); ++i) acc += std::exp(v[i] - m);
    return m + std::log(acc);
}

// Softmax over sequence scores with log-sum-exp stabilization, plus the
// survival curve by tail summation.
inline PredictedCurve pmf_from_scores(std::span<const double> scores) {
    const std::size_t k = scores.size();
    const double log_z = logsumexp(scores);
    PredictedCurve curve;
    curve.pmf.resize(k);
    for (std::size_t i = 0; i < k; ++i) curve.pmf[i] = std::exp(scores[i] - log_z);
    curve.survival.resize(k);
    double tail = 0.0;
    for (std::size_t i = k; i-- > 0;) {
        tail += curve.pmf[i];
        curve.survival[i] = tail;
    }
    return curve;
}

inline PredictedCurve mtlr_pmf(const Tensor& theta, const Tensor& bias,
                               std::span<const double> x) {
    return pmf_from_scores(sequence_scores(theta, bias, x));
}

// log P(event in interval k) = score_k - log Z.
inline double loglik_exact_from_scores(std::span<const double> scores,
                                       std::size_t interval) {
    return scores[interval - 1] - logsumexp(scores);
}

// log P(event in any interval >= c) = log sum_{i >= c} exp(score_i) - log Z.
// c = 1 imposes no constraint, so the value is exactly 0.
inline double loglik_censored_from_scores(std::span<const double> scores,
                                          std::size_t censor_interval) {
    if (censor_interval == 1) return 0.0;
    return logsumexp(scores, censor_interval - 1) - logsumexp(scores);
}

inline double loglik_uncensored(const Tensor& theta, const Tensor& bias,
                                std::span<const double> x,
                                const TargetSequence& target) {
    if (target.is_censored())
        throw UsageError("loglik_uncensored: censored target passed");
    return loglik_exact_from_scores(sequence_scores(theta, bias, x),
                                    target.interval());
}

inline double loglik_censored(const Tensor& theta, const Tensor& bias,
                              std::span<const double> x, std::size_t censor_interval) {
    return loglik_censored_from_scores(sequence_scores(theta, bias, x),
                                       censor_interval);
}

inline double target_loglik_from_scores(std::span<const double> scores,
                                        const TargetSequence& target) {
    return target.is_censored()
               ? loglik_censored_from_scores(scores, target.interval())
               : loglik_exact_from_scores(scores, target.interval());
}

// Negated multi-label likelihood, minimized during training:
//   loss = - sum_s lambda_s * mean_j loglik_s(x_j) + (beta/2) sum_s |theta_s|^2.
// The likelihood term is averaged over patients so learning rates are batch
// size stable; biases are excluded from the regularizer. Every patient must
// carry a target for every label.
inline double multi_label_loss(
    const MtlrParams& params, std::span<const std::vector<double>> features,
    std::span<const std::vector<TargetSequence>> targets) {
    const std::size_t n_labels = params.n_labels();
    if (features.size() != targets.size())
        throw DataError("multi_label_loss: " + std::to_string(features.size()) +
                        " feature vectors vs " + std::to_string(targets.size()) +
                        " target rows");
    double loss = 0.0;
    for (std::size_t s = 0; s < n_labels; ++s) {
        double label_ll = 0.0;
        for (std::size_t j = 0; j < features.size(); ++j) {
            if (targets[j].size() <= s)
                throw DataError("multi_label_loss: patient " + std::to_string(j) +
                                " is missing a target for label '" +
                                labels::names()[s % labels::kCount] + "' (index " +
                                std::to_string(s) + ")");
            const auto scores =
                sequence_scores(params.theta[s], params.bias[s], features[j]);
            label_ll += target_loglik_from_scores(scores, targets[j][s]);
        }
        loss -= params.lambda[s] * label_ll / static_cast<double>(features.size());
        double sq = 0.0;
        for (double v : params.theta[s].values()) sq += v * v;
        loss += 0.5 * params.beta * sq;
    }
    return loss;
}

// Scalar lifetime risk: the negative restricted mean survival truncated at
// the last finite boundary. Any strictly monotone transform would give the
// same C-index and median split; this one is smooth and grid-native. Higher
// risk means an earlier expected event.
inline double risk_score(const PredictedCurve& curve, const TimeGrid& grid) {
    const auto& b = grid.boundaries();
    double area = 0.0;
    double prev = 0.0;
    for (std::size_t k = 1; k <= b.size(); ++k) {
        area += curve.survival[k] * (b[k - 1] - prev);
        prev = b[k - 1];
    }
    return -area;
}

// Tape route for the same quantities, used when the loss must be
// differentiated end to end. Builds score nodes from a logits node.
inline Tape::NodeId taped_sequence_scores(Tape& tape, Tape::NodeId logits) {
    return tape.append_zero(tape.suffix_sum(logits));
}

inline Tape::NodeId taped_target_loglik(Tape& tape, Tape::NodeId logits,
                                        const TargetSequence& target) {
    const Tape::NodeId scores = taped_sequence_scores(tape, logits);
    const Tape::NodeId log_z = tape.logsumexp_tail(scores, 0);
    if (target.is_censored()) {
        const Tape::NodeId numer =
            tape.logsumexp_tail(scores, target.interval() - 1);
        return tape.affine_combine({numer, log_z}, {1.0, -1.0});
    }
    const Tape::NodeId score_k = tape.pick(scores, target.interval() - 1);
    return tape.affine_combine({score_k, log_z}, {1.0, -1.0});
}

}  // namespace imlsp
