#pragma once

#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/cohort.hpp"
#include "imlsp/metrics.hpp"
#include "imlsp/mtlr.hpp"
#include "imlsp/network.hpp"
#include "imlsp/training.hpp"

namespace imlsp {

struct EvaluateOptions {
    std::vector<double> horizons = {1.0, 2.0, 3.0};
    std::size_t bootstrap_resamples = 1000;
    double bootstrap_level = 0.95;
    std::uint64_t seed = 0;
};

struct EvaluationResult {
    nlohmann::json report;
    std::map<std::string, std::string> km_csv;  // label name -> CSV text
};

namespace detail {

inline nlohmann::json ci_to_json(const BootstrapCi& ci) {
    return {{"estimate", ci.estimate},
            {"lower", ci.lower},
            {"upper", ci.upper},
            {"resamples", ci.resamples}};
}

// S(tau) read off the predicted curve as a step function: the survival
// through the end of the interval containing tau.
inline double survival_at_horizon(const PredictedCurve& curve,
                                  const TimeGrid& grid, double tau) {
    const std::size_t j =
        std::min(interval_index(grid, tau), grid.intervals() - 1);
    return curve.survival[j];
}

inline void append_km_rows(std::string& csv, const KmCurve& curve,
                           const std::string& group) {
    char buf[96];
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%zu,%s\n", curve.times[i],
                      curve.survival[i], curve.at_risk[i], curve.events[i],
                      group.c_str());
        csv += buf;
    }
}

}  // namespace detail

// The full evaluation protocol on one cohort split: per-label C-index with a
// bootstrap CI, median-risk KM curves for the high/low groups with a
// log-rank p, and horizon AUROCs with CIs. Undefined metrics are reported in
// place without aborting the other labels.
inline EvaluationResult evaluate_model(
    ImlspModel& model, std::span<const CohortPatient* const> patients,
    const EvaluateOptions& options,
    const std::map<std::string, double>& modality_coding =
        default_modality_coding()) {
    if (!model.grid)
        throw UsageError("evaluate_model: the model carries no time grid");
    if (patients.empty()) throw UsageError("evaluate_model: empty cohort split");

    const auto samples = prepare_samples(patients, model, modality_coding);
    const TimeGrid& grid = *model.grid;

    // One forward pass per patient; reused by every metric.
    std::vector<std::vector<PredictedCurve>> curves;  // [patient][label]
    curves.reserve(samples.size());
    for (const auto& s : samples)
        curves.push_back(forward(model, s.volume, s.clinical).curves);

    EvaluationResult result;
    result.report["n_patients"] = patients.size();
    result.report["horizons"] = options.horizons;
    result.report["bootstrap"] = {{"resamples", options.bootstrap_resamples},
                                  {"level", options.bootstrap_level},
                                  {"seed", options.seed}};

    for (std::size_t s = 0; s < labels::kCount; ++s) {
        const std::string& label = labels::names()[s];
        nlohmann::json& entry = result.report["labels"][label];

        std::vector<double> risks;
        std::vector<OutcomeRecord> outcomes;
        RiskSeries series;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            risks.push_back(risk_score(curves[i][s], grid));
            outcomes.push_back(patients[i]->outcomes[s]);
            series.ids.push_back(samples[i].id);
            series.risks.push_back(risks.back());
        }

        // Lifetime C-index with bootstrap CI.
        try {
            const auto cindex_on = [&](const std::vector<std::size_t>& idx) {
                std::vector<double> r;
                std::vector<OutcomeRecord> o;
                for (auto i : idx) {
                    r.push_back(risks[i]);
                    o.push_back(outcomes[i]);
                }
                return concordance_index(r, o);
            };
            entry["c_index"] = detail::ci_to_json(bootstrap_ci(
                cindex_on, samples.size(), options.bootstrap_resamples,
                options.bootstrap_level, derive_seed(options.seed, s, 1)));
        } catch (const MetricUndefinedError& e) {
            entry["c_index"] = {{"error", e.what()}};
        }

        // Median-risk split, KM curves per group, log-rank test.
        try {
            const auto split = median_risk_split(series);
            std::vector<OutcomeRecord> high, low;
            for (std::size_t i = 0; i < samples.size(); ++i)
                ((series.risks[i] > split.threshold) ? high : low)
                    .push_back(outcomes[i]);
            if (high.empty() || low.empty())
                throw MetricUndefinedError(
                    "median split left one risk group empty");

            std::string csv = "time,survival,at_risk,events,group\n";
            detail::append_km_rows(csv, kaplan_meier(high), "high");
            detail::append_km_rows(csv, kaplan_meier(low), "low");
            result.km_csv[label] = std::move(csv);

            const auto lr = log_rank(high, low);
            entry["log_rank"] = {{"statistic", lr.statistic},
                                 {"p_value", lr.p_value},
                                 {"n_high", high.size()},
                                 {"n_low", low.size()},
                                 {"median_risk", split.threshold}};
        } catch (const MetricUndefinedError& e) {
            entry["log_rank"] = {{"error", e.what()}};
        }

        // Horizon AUROCs on the time-specific risk 1 - S(tau).
        entry["auroc"] = nlohmann::json::array();
        for (std::size_t h = 0; h < options.horizons.size(); ++h) {
            const double tau = options.horizons[h];
            std::vector<double> scores;
            for (std::size_t i = 0; i < samples.size(); ++i)
                scores.push_back(
                    1.0 - detail::survival_at_horizon(curves[i][s], grid, tau));
            nlohmann::json auroc_entry;
            auroc_entry["horizon_years"] = tau;
            try {
                const auto auroc_on = [&](const std::vector<std::size_t>& idx) {
                    std::vector<double> sc;
                    std::vector<OutcomeRecord> o;
                    for (auto i : idx) {
                        sc.push_back(scores[i]);
                        o.push_back(outcomes[i]);
                    }
                    return auroc_at_horizon(sc, o, tau);
                };
                auroc_entry["ci"] = detail::ci_to_json(bootstrap_ci(
                    auroc_on, samples.size(), options.bootstrap_resamples,
                    options.bootstrap_level,
                    derive_seed(options.seed, s, 100 + h)));
            } catch (const MetricUndefinedError& e) {
                auroc_entry["ci"] = {{"error", e.what()}};
            }
            entry["auroc"].push_back(auroc_entry);
        }
    }
    return result;
}

}  // namespace imlsp
