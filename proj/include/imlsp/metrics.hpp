#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "imlsp/error.hpp"
#include "imlsp/rng.hpp"
#include "imlsp/targets.hpp"

namespace imlsp {

// Per-patient risk scalars for one label, aligned with patient ids.
struct RiskSeries {
    std::vector<std::string> ids;
    std::vector<double> risks;
};

// Kaplan-Meier product-limit curve, recorded at distinct event times.
struct KmCurve {
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<std::size_t> at_risk;
    std::vector<std::size_t> events;
};

struct BootstrapCi {
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t resamples = 0;
};

struct LogRankResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

namespace detail {

// Regularized upper incomplete gamma Q(a, x) by series / continued fraction
// (Lentz), accurate to ~1e-12. Q(1/2, x/2) is the chi-square(1) upper tail.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw UsageError("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    const double log_gamma_a = std::lgamma(a);
    if (x < a + 1.0) {
        // lower series: P(a,x) = x^a e^-x / Gamma(a) * sum x^n / (a)_{n+1}
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        const double p = sum * std::exp(-x + a * std::log(x) - log_gamma_a);
        return 1.0 - p;
    }
    // continued fraction for Q(a,x), modified Lentz
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - log_gamma_a);
}

}  // namespace detail

// Upper tail of the chi-square distribution with 1 degree of freedom.
inline double chi_square_1df_sf(double x) {
    if (x <= 0.0) return 1.0;
    return detail::gamma_q(0.5, 0.5 * x);
}

// Harrell's concordance index. A pair is comparable when the patient with
// the earlier time had an event (the other may be censored later), or when
// both had events at exactly the same time. Risk ties score 0.5, as do
// tied-event-time pairs (no ordering information either way).
inline double concordance_index(const std::vector<double>& risks,
                                const std::vector<OutcomeRecord>& outcomes) {
    if (risks.size() != outcomes.size())
        throw UsageError("concordance_index: risks and outcomes misaligned");
    const std::size_t n = risks.size();
    double comparable = 0.0;
    double concordant = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!outcomes[i].event) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double ti = outcomes[i].time_years;
            const double tj = outcomes[j].time_years;
            if (ti < tj) {
                comparable += 1.0;
                if (risks[i] > risks[j]) concordant += 1.0;
                else if (risks[i] == risks[j]) concordant += 0.5;
            } else if (ti == tj && outcomes[j].event && i < j) {
                comparable += 1.0;
                concordant += 0.5;
            }
        }
    }
    if (comparable == 0.0)
        throw MetricUndefinedError("concordance_index: no comparable pairs");
    return concordant / comparable;
}

// Product-limit estimator. Censored subjects at a given time are still at
// risk for the events at that time (events precede censorings on ties).
inline KmCurve kaplan_meier(const std::vector<OutcomeRecord>& outcomes) {
    if (outcomes.empty()) throw UsageError("kaplan_meier: empty sample");
    std::map<double, std::pair<std::size_t, std::size_t>> by_time;  // events, censored
    for (const auto& o : outcomes) {
        auto& slot = by_time[o.time_years];
        if (o.event) slot.first += 1;
        else slot.second += 1;
    }
    KmCurve curve;
    std::size_t at_risk = outcomes.size();
    double surv = 1.0;
    for (const auto& [time, counts] : by_time) {
        const auto [d, c] = counts;
        if (d > 0) {
            surv *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
            curve.times.push_back(time);
            curve.survival.push_back(surv);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(d);
        }
        at_risk -= d + c;
    }
    return curve;
}

// Right-continuous step-function evaluation of a KM curve; 1 before the
// first event time.
inline double km_survival_at(const KmCurve& curve, double time) {
    double s = 1.0;
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
        if (curve.times[i] > time) break;
        s = curve.survival[i];
    }
    return s;
}

// Two-group log-rank test: hypergeometric observed-minus-expected events of
// group A accumulated over the pooled distinct event times, chi-square(1).
inline LogRankResult log_rank(const std::vector<OutcomeRecord>& group_a,
                              const std::vector<OutcomeRecord>& group_b) {
    if (group_a.empty() || group_b.empty())
        throw UsageError("log_rank: both groups must be non-empty");
    std::map<double, std::array<std::size_t, 4>> table;  // dA, cA, dB, cB
    for (const auto& o : group_a) {
        auto& r = table[o.time_years];
        o.event ? ++r[0] : ++r[1];
    }
    for (const auto& o : group_b) {
        auto& r = table[o.time_years];
        o.event ? ++r[2] : ++r[3];
    }

    double n_a = static_cast<double>(group_a.size());
    double n_b = static_cast<double>(group_b.size());
    double observed_minus_expected = 0.0;
    double variance = 0.0;
    bool any_event = false;
    for (const auto& [time, r] : table) {
        const double d_a = static_cast<double>(r[0]);
        const double d_b = static_cast<double>(r[2]);
        const double d = d_a + d_b;
        const double n = n_a + n_b;
        if (d > 0.0 && n > 0.0) {
            any_event = true;
            observed_minus_expected += d_a - d * n_a / n;
            if (n > 1.0)
                variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
        }
        n_a -= d_a + static_cast<double>(r[1]);
        n_b -= d_b + static_cast<double>(r[3]);
    }
    if (!any_event)
        throw MetricUndefinedError("log_rank: no events in either group");

    LogRankResult res;
    if (variance > 0.0) {
        res.statistic =
            observed_minus_expected * observed_minus_expected / variance;
        res.p_value = chi_square_1df_sf(res.statistic);
    }
    return res;
}

// AUROC for the binary outcome "event by horizon tau". Positives had an
// event at or before tau; negatives were followed beyond tau event-free;
// patients censored at or before tau without an event carry no label and are
// excluded. Score ties count 0.5.
inline double auroc_at_horizon(const std::vector<double>& scores,
                               const std::vector<OutcomeRecord>& outcomes,
                               double horizon) {
    if (scores.size() != outcomes.size())
        throw UsageError("auroc_at_horizon: scores and outcomes misaligned");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (outcomes[i].event && outcomes[i].time_years <= horizon)
            pos.push_back(scores[i]);
        else if (outcomes[i].time_years > horizon)
            neg.push_back(scores[i]);
    }
    if (pos.empty() || neg.empty())
        throw MetricUndefinedError(
            "auroc_at_horizon: need at least one positive and one negative at " +
            std::to_string(horizon) + " years");
    double credit = 0.0;
    for (double p : pos)
        for (double q : neg) {
            if (p > q) credit += 1.0;
            else if (p == q) credit += 0.5;
        }
    return credit / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Percentile bootstrap over patient-level resamples. Resample streams are
// derived from (seed, index, attempt), so any evaluation order gives the
// same interval. Resamples on which the metric is undefined are redrawn a
// bounded number of times.
inline BootstrapCi bootstrap_ci(
    const std::function<double(const std::vector<std::size_t>&)>& metric_on_subset,
    std::size_t n_patients, std::size_t resamples, double level,
    std::uint64_t seed) {
    if (n_patients == 0) throw UsageError("bootstrap_ci: empty sample");
    std::vector<std::size_t> full(n_patients);
    for (std::size_t i = 0; i < n_patients; ++i) full[i] = i;

    BootstrapCi ci;
    ci.estimate = metric_on_subset(full);
    ci.resamples = resamples;

    constexpr std::size_t kMaxAttempts = 64;
    std::size_t undefined_draws = 0;
    std::vector<double> values;
    values.reserve(resamples);
    std::vector<std::size_t> idx(n_patients);
    for (std::size_t r = 0; r < resamples; ++r) {
        bool ok = false;
        for (std::size_t attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            Rng rng(derive_seed(seed, r, attempt));
            for (auto& i : idx) i = rng.uniform_index(n_patients);
            try {
                values.push_back(metric_on_subset(idx));
                ok = true;
            } catch (const MetricUndefinedError&) {
                ++undefined_draws;
                if (undefined_draws > (resamples + 1) / 2)
                    throw MetricUndefinedError(
                        "bootstrap_ci: metric undefined on more than half of the "
                        "resamples");
            }
        }
        if (!ok)
            throw MetricUndefinedError(
                "bootstrap_ci: resample " + std::to_string(r) +
                " stayed undefined after redraws");
    }
    std::sort(values.begin(), values.end());
    const double alpha = 1.0 - level;
    const auto quantile = [&](double p) {
        const double h = p * static_cast<double>(values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(h));
        if (lo + 1 >= values.size()) return values.back();
        return values[lo] + (h - std::floor(h)) * (values[lo + 1] - values[lo]);
    };
    ci.lower = quantile(alpha / 2.0);
    ci.upper = quantile(1.0 - alpha / 2.0);
    return ci;
}

// Median split: strictly above the median is high risk, at or below is low.
// The median averages the two central order statistics for even n.
inline double median(std::vector<double> v) {
    if (v.empty()) throw UsageError("median: empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct RiskSplit {
    std::vector<std::string> high;
    std::vector<std::string> low;
    double threshold = 0.0;
};

inline RiskSplit median_risk_split(const RiskSeries& series) {
    RiskSplit split;
    split.threshold = median(series.risks);
    for (std::size_t i = 0; i < series.risks.size(); ++i) {
        (series.risks[i] > split.threshold ? split.high : split.low)
            .push_back(series.ids[i]);
    }
    return split;
}

}  // namespace imlsp
