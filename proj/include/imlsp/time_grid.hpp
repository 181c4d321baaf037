#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "imlsp/error.hpp"

namespace imlsp {

// Discretization of the time axis into K intervals
// (t_0, t_1], (t_1, t_2], ..., (t_{K-1}, t_K) with t_0 = 0 and t_K = inf.
// Only the K-1 interior boundaries are stored, in years.
class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> boundaries)
        : boundaries_(std::move(boundaries)) {
        if (boundaries_.empty())
            throw ConfigError("time grid needs at least one boundary (K >= 2)");
        double prev = 0.0;
        for (double b : boundaries_) {
            if (!(b > prev))
                throw ConfigError(
                    "time grid boundaries must be positive and strictly increasing");
            prev = b;
        }
    }

    std::size_t intervals() const { return boundaries_.size() + 1; }  // K
    const std::vector<double>& boundaries() const { return boundaries_; }

    // Boundary t_k for k in 1..K-1.
    double boundary(std::size_t k) const { return boundaries_.at(k - 1); }

private:
    std::vector<double> boundaries_;
};

// Interval containing `time`: the unique k in 1..K with t_{k-1} < time <= t_k.
// Intervals are right-closed, so a time exactly on a boundary maps to the
// earlier interval; anything beyond the last boundary maps to K.
inline std::size_t interval_index(const TimeGrid& grid, double time) {
    if (!(time > 0.0))
        throw DataError("interval_index: time must be positive, got " +
                        std::to_string(time));
    const auto& b = grid.boundaries();
    const auto it = std::lower_bound(b.begin(), b.end(), time);
    return static_cast<std::size_t>(it - b.begin()) + 1;
}

// Empirical quantile with linear interpolation on the sorted sample.
inline double linear_quantile(const std::vector<double>& sorted, double p) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Builds a K-interval grid with boundaries at the j/K quantiles of the
// observed (uncensored) event times, pooled over all labels. Quantile
// boundaries keep per-interval event counts roughly balanced. Duplicate
// quantiles are perturbed by the minimal representable amount that restores
// strict increase.
inline TimeGrid build_time_grid(std::vector<double> event_times, std::size_t k_intervals) {
    if (k_intervals < 2)
        throw ConfigError("build_time_grid: K must be at least 2");
    std::sort(event_times.begin(), event_times.end());
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < event_times.size(); ++i)
        if (i == 0 || event_times[i] != event_times[i - 1]) ++distinct;
    if (distinct < k_intervals)
        throw ConfigError("build_time_grid: need at least " +
                          std::to_string(k_intervals) +
                          " distinct event times, got " + std::to_string(distinct));

    std::vector<double> bounds(k_intervals - 1);
    for (std::size_t j = 1; j < k_intervals; ++j)
        bounds[j - 1] = linear_quantile(
            event_times, static_cast<double>(j) / static_cast<double>(k_intervals));

    double prev = 0.0;
    for (double& b : bounds) {
        while (b <= prev)
            b = std::nextafter(b, std::numeric_limits<double>::infinity());
        prev = b;
    }
    return TimeGrid(std::move(bounds));
}

}  // namespace imlsp
