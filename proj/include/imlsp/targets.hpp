#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "imlsp/error.hpp"
#include "imlsp/time_grid.hpp"

namespace imlsp {

// The four survival outcomes predicted jointly. Label indices are stable and
// used everywhere (loss weights, reports, file names).
namespace labels {
inline constexpr std::size_t kOs = 0;    // overall survival
inline constexpr std::size_t kLffs = 1;  // local failure free survival
inline constexpr std::size_t kRffs = 2;  // regional failure free survival
inline constexpr std::size_t kDffs = 3;  // distant failure free survival
inline constexpr std::size_t kCount = 4;

inline const std::array<std::string, kCount>& names() {
    static const std::array<std::string, kCount> n = {"os", "lffs", "rffs", "dffs"};
    return n;
}

inline std::size_t from_name(const std::string& name) {
    const auto& n = names();
    for (std::size_t i = 0; i < n.size(); ++i)
        if (n[i] == name) return i;
    throw DataError("unknown survival label '" + name + "'");
}
}  // namespace labels

// One (time, event) observation for one survival label. event=false means
// right-censored at `time_years`.
struct OutcomeRecord {
    std::size_t label = 0;
    double time_years = 0.0;
    bool event = false;
};

// Binary target sequence over the K-1 interior time points, under the
// cumulative convention: an event in interval i sets bits i..K-1, so the
// reference sequence for interval K is all zeros. Censored targets store the
// censoring interval c instead of a single sequence; the event is then
// admissible in any interval of {c, ..., K}.
class TargetSequence {
public:
    enum class Kind { kExact, kCensored };

    static TargetSequence exact(std::size_t interval, std::size_t k_intervals) {
        return TargetSequence(Kind::kExact, interval, k_intervals);
    }
    static TargetSequence censored(std::size_t interval, std::size_t k_intervals) {
        return TargetSequence(Kind::kCensored, interval, k_intervals);
    }

    Kind kind() const { return kind_; }
    bool is_censored() const { return kind_ == Kind::kCensored; }

    // Event interval for exact targets, censoring interval c for censored.
    std::size_t interval() const { return interval_; }
    std::size_t k_intervals() const { return k_; }

    // The legal bit sequence (length K-1) for an exact target.
    std::vector<double> bits() const {
        if (kind_ != Kind::kExact)
            throw UsageError("bits() is only defined for exact-interval targets");
        std::vector<double> b(k_ - 1, 0.0);
        for (std::size_t j = interval_; j <= k_ - 1; ++j) b[j - 1] = 1.0;
        return b;
    }

    // First admissible event interval: the event interval itself for exact
    // targets, c for censored ones (the event may still occur within the
    // censoring interval).
    std::size_t first_admissible() const { return interval_; }

private:
    TargetSequence(Kind kind, std::size_t interval, std::size_t k_intervals)
        : kind_(kind), interval_(interval), k_(k_intervals) {
        if (k_intervals < 2)
            throw ConfigError("target sequence needs K >= 2");
        if (interval < 1 || interval > k_intervals)
            throw UsageError("target interval " + std::to_string(interval) +
                             " out of range 1.." + std::to_string(k_intervals));
    }

    Kind kind_;
    std::size_t interval_;
    std::size_t k_;
};

// Position of the first set bit (1-based), K if none. Inverse of
// TargetSequence::bits on exact targets.
inline std::size_t decode_event_interval(const std::vector<double>& bits) {
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] != 0.0) return i + 1;
    return bits.size() + 1;
}

inline TargetSequence encode_event(const TimeGrid& grid, const OutcomeRecord& rec) {
    const std::size_t k = interval_index(grid, rec.time_years);
    return rec.event ? TargetSequence::exact(k, grid.intervals())
                     : TargetSequence::censored(k, grid.intervals());
}

}  // namespace imlsp
