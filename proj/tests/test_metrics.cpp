#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "imlsp/metrics.hpp"
#include "imlsp/rng.hpp"

using namespace imlsp;

namespace {

// Brute-force oracle over unordered pairs, written straight from the pair
// rules: comparable when the earlier time has an event (strictly earlier, or
// tied with both events), risk ties and tied-event-time pairs credit 0.5.
double brute_force_cindex(const std::vector<double>& risks,
                          const std::vector<OutcomeRecord>& o) {
    double comparable = 0.0, credit = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        for (std::size_t j = i + 1; j < o.size(); ++j) {
            const bool i_first = o[i].time_years < o[j].time_years && o[i].event;
            const bool j_first = o[j].time_years < o[i].time_years && o[j].event;
            const bool tied =
                o[i].time_years == o[j].time_years && o[i].event && o[j].event;
            if (tied) {
                comparable += 1.0;
                credit += 0.5;
            } else if (i_first || j_first) {
                comparable += 1.0;
                const double early = i_first ? risks[i] : risks[j];
                const double late = i_first ? risks[j] : risks[i];
                if (early > late) credit += 1.0;
                else if (early == late) credit += 0.5;
            }
        }
    }
    if (comparable == 0.0) throw MetricUndefinedError("no comparable pairs");
    return credit / comparable;
}

double brute_force_auroc(const std::vector<double>& scores,
                         const std::vector<OutcomeRecord>& o, double tau) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (o[i].event && o[i].time_years <= tau) pos.push_back(scores[i]);
        else if (o[i].time_years > tau) neg.push_back(scores[i]);
    }
    if (pos.empty() || neg.empty()) throw MetricUndefinedError("degenerate");
    double credit = 0.0;
    for (double p : pos)
        for (double q : neg) credit += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return credit / (double)(pos.size() * neg.size());
}

std::vector<OutcomeRecord> outcomes_of(const std::vector<double>& times,
                                       const std::vector<bool>& events) {
    std::vector<OutcomeRecord> o;
    for (std::size_t i = 0; i < times.size(); ++i)
        o.push_back({0, times[i], static_cast<bool>(events[i])});
    return o;
}

}  // namespace

TEST_CASE("concordance index basics") {
    SECTION("perfect ordering") {
        const auto o = outcomes_of({1, 2, 3}, {true, true, true});
        CHECK(concordance_index({3, 2, 1}, o) == 1.0);
    }

    SECTION("hand-enumerated censored example") {
        // A(t=1,event,r=.8), B(t=2,censored,r=.9), C(t=3,event,r=.5):
        // comparable pairs {(A,B),(A,C)}; only (A,C) concordant.
        const auto o = outcomes_of({1, 2, 3}, {true, false, true});
        CHECK(concordance_index({0.8, 0.9, 0.5}, o) == 0.5);
    }

    SECTION("negating risks of a tie-free series flips concordance") {
        Rng rng(2);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> risks, times;
            std::vector<bool> events;
            for (int i = 0; i < 12; ++i) {
                risks.push_back(rng.normal());
                times.push_back(rng.uniform(0.1, 5.0));
                events.push_back(rng.uniform() < 0.7);
            }
            const auto o = outcomes_of(times, events);
            std::vector<double> negated = risks;
            for (auto& r : negated) r = -r;
            CHECK(concordance_index(risks, o) + concordance_index(negated, o) ==
                  Catch::Approx(1.0).margin(1e-15));
        }
    }

    SECTION("no comparable pairs is undefined") {
        const auto o = outcomes_of({1, 2}, {false, false});
        CHECK_THROWS_AS(concordance_index({1, 2}, o), MetricUndefinedError);
    }
}

TEST_CASE("concordance index equals brute force on random censored data") {
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.uniform_index(49);
        std::vector<double> risks, times;
        std::vector<bool> events;
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse grids force time and risk ties.
            risks.push_back(static_cast<double>(rng.uniform_index(6)) / 2.0);
            times.push_back(static_cast<double>(1 + rng.uniform_index(8)) / 2.0);
            events.push_back(rng.uniform() < 0.65);
        }
        const auto o = outcomes_of(times, events);
        double expect = -1.0, got = -1.0;
        bool expect_defined = true, got_defined = true;
        try { expect = brute_force_cindex(risks, o); }
        catch (const MetricUndefinedError&) { expect_defined = false; }
        try { got = concordance_index(risks, o); }
        catch (const MetricUndefinedError&) { got_defined = false; }
        INFO("seed " << seed);
        REQUIRE(expect_defined == got_defined);
        if (expect_defined) CHECK(got == expect);
    }
}

TEST_CASE("kaplan-meier estimator") {
    SECTION("all censored keeps survival at one") {
        const auto curve = kaplan_meier(outcomes_of({1, 2, 3}, {false, false, false}));
        CHECK(curve.times.empty());
        CHECK(km_survival_at(curve, 10.0) == 1.0);
    }

    SECTION("three-patient product-limit hand computation") {
        const auto curve =
            kaplan_meier(outcomes_of({1, 2, 3}, {true, false, true}));
        REQUIRE(curve.times == std::vector<double>{1.0, 3.0});
        CHECK(curve.survival[0] == Catch::Approx(2.0 / 3.0).margin(1e-15));
        CHECK(curve.survival[1] == Catch::Approx(0.0).margin(1e-15));
        CHECK(curve.at_risk == std::vector<std::size_t>{3, 1});
    }

    SECTION("no censoring matches the empirical survival function") {
        const std::size_t n = 7;
        std::vector<double> times;
        for (std::size_t i = 0; i < n; ++i) times.push_back(double(i + 1));
        const auto curve = kaplan_meier(outcomes_of(times, std::vector<bool>(n, true)));
        REQUIRE(curve.times.size() == n);
        for (std::size_t j = 0; j < n; ++j)
            CHECK(curve.survival[j] ==
                  Catch::Approx(double(n - j - 1) / double(n)).margin(1e-12));
    }

    SECTION("curve is non-increasing and starts at one") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> times;
            std::vector<bool> events;
            for (int i = 0; i < 30; ++i) {
                times.push_back(double(1 + rng.uniform_index(10)) / 2.0);
                events.push_back(rng.uniform() < 0.6);
            }
            const auto curve = kaplan_meier(outcomes_of(times, events));
            double prev = 1.0;
            for (double s : curve.survival) {
                CHECK(s <= prev + 1e-15);
                CHECK(s >= 0.0);
                prev = s;
            }
        }
    }
}

TEST_CASE("log-rank test") {
    SECTION("identical groups give statistic zero and p one") {
        const auto g = outcomes_of({1, 2, 3, 4}, {true, false, true, true});
        const auto res = log_rank(g, g);
        CHECK(res.statistic == 0.0);
        CHECK(res.p_value == 1.0);
    }

    SECTION("separated groups match the direct O/E/V tabulation") {
        std::vector<OutcomeRecord> a, b;
        for (int i = 0; i < 5; ++i) {
            a.push_back({0, 1.0, true});
            b.push_back({0, 10.0, true});
        }
        // Oracle tabulation: at t=1, O-E = 5 - 5*(5/10) = 2.5,
        // V = 5*(1/2)*(1/2)*(10-5)/(10-1); at t=10 group A is exhausted so
        // both terms vanish.
        const double v = 5.0 * 0.25 * 5.0 / 9.0;
        const double expect = 2.5 * 2.5 / v;
        const auto res = log_rank(a, b);
        CHECK(res.statistic == Catch::Approx(expect).margin(1e-12));
        CHECK(res.p_value < 0.01);
    }

    SECTION("statistic is invariant to swapping the groups") {
        Rng rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<OutcomeRecord> a, b;
            for (int i = 0; i < 15; ++i) {
                a.push_back({0, rng.uniform(0.2, 5.0), rng.uniform() < 0.7});
                b.push_back({0, rng.uniform(0.2, 8.0), rng.uniform() < 0.5});
            }
            const auto ab = log_rank(a, b);
            const auto ba = log_rank(b, a);
            CHECK(ab.statistic == Catch::Approx(ba.statistic).margin(1e-12));
            CHECK(ab.statistic >= 0.0);
        }
    }

    SECTION("no events anywhere is undefined") {
        const auto g = outcomes_of({1, 2}, {false, false});
        CHECK_THROWS_AS(log_rank(g, g), MetricUndefinedError);
    }
}

TEST_CASE("chi-square(1) tail matches the erfc identity") {
    // Q(1/2, x/2) == erfc(sqrt(x/2)); two independent evaluation routes.
    for (double x : {1e-8, 0.01, 0.5, 1.0, 2.0, 3.84, 9.0, 25.0, 60.0}) {
        CHECK(chi_square_1df_sf(x) ==
              Catch::Approx(std::erfc(std::sqrt(0.5 * x))).margin(1e-10));
    }
    CHECK(chi_square_1df_sf(0.0) == 1.0);
}

TEST_CASE("horizon auroc") {
    SECTION("perfect separation") {
        const auto o = outcomes_of({0.5, 0.9, 3.0, 4.0}, {true, true, false, false});
        CHECK(auroc_at_horizon({0.9, 0.8, 0.3, 0.2}, o, 2.0) == 1.0);
    }

    SECTION("four-pair rank oracle gives 0.75") {
        const auto o = outcomes_of({0.5, 0.9, 3.0, 4.0}, {true, true, true, true});
        CHECK(auroc_at_horizon({0.9, 0.3, 0.6, 0.2}, o, 2.0) == 0.75);
    }

    SECTION("censored just before the horizon is excluded") {
        // Patient 2 censored at tau-eps: dropping it leaves a perfect pair.
        const auto o = outcomes_of({1.0, 1.99, 3.0}, {true, false, false});
        CHECK(auroc_at_horizon({0.9, 0.1, 0.5}, o, 2.0) == 1.0);
        // With no other negative the metric is undefined.
        const auto o2 = outcomes_of({1.0, 1.99}, {true, false});
        CHECK_THROWS_AS(auroc_at_horizon({0.9, 0.1}, o2, 2.0),
                        MetricUndefinedError);
    }

    SECTION("matches brute force on random instances") {
        for (int seed = 0; seed < 100; ++seed) {
            Rng rng(seed + 1000);
            const std::size_t n = 4 + rng.uniform_index(47);
            std::vector<double> scores, times;
            std::vector<bool> events;
            for (std::size_t i = 0; i < n; ++i) {
                scores.push_back(static_cast<double>(rng.uniform_index(5)) / 4.0);
                times.push_back(static_cast<double>(1 + rng.uniform_index(10)) / 2.0);
                events.push_back(rng.uniform() < 0.6);
            }
            const auto o = outcomes_of(times, events);
            const double tau = 2.0;
            double expect = -1, got = -1;
            bool expect_defined = true, got_defined = true;
            try { expect = brute_force_auroc(scores, o, tau); }
            catch (const MetricUndefinedError&) { expect_defined = false; }
            try { got = auroc_at_horizon(scores, o, tau); }
            catch (const MetricUndefinedError&) { got_defined = false; }
            INFO("seed " << seed);
            REQUIRE(expect_defined == got_defined);
            if (expect_defined) CHECK(got == expect);
        }
    }
}

TEST_CASE("bootstrap confidence intervals") {
    SECTION("constant metric collapses the interval") {
        const auto ci = bootstrap_ci([](const std::vector<std::size_t>&) { return 0.7; },
                                     20, 100, 0.95, 42);
        CHECK(ci.estimate == 0.7);
        CHECK(ci.lower == 0.7);
        CHECK(ci.upper == 0.7);
    }

    SECTION("fixed seed reproduces the interval") {
        Rng data_rng(9);
        std::vector<double> values;
        for (int i = 0; i < 25; ++i) values.push_back(data_rng.normal());
        const auto mean_of = [&](const std::vector<std::size_t>& idx) {
            double acc = 0.0;
            for (auto i : idx) acc += values[i];
            return acc / static_cast<double>(idx.size());
        };
        const auto a = bootstrap_ci(mean_of, values.size(), 500, 0.95, 7);
        const auto b = bootstrap_ci(mean_of, values.size(), 500, 0.95, 7);
        CHECK(a.lower == b.lower);
        CHECK(a.upper == b.upper);
        CHECK(a.lower <= a.upper);
        const auto c = bootstrap_ci(mean_of, values.size(), 500, 0.95, 8);
        CHECK((c.lower != a.lower || c.upper != a.upper));
    }

    SECTION("c-index CI brackets the point estimate in most outer trials") {
        int bracketed = 0;
        for (int trial = 0; trial < 50; ++trial) {
            Rng rng(trial * 31 + 5);
            std::vector<double> risks, times;
            std::vector<bool> events;
            for (int i = 0; i < 30; ++i) {
                const double r = rng.normal();
                risks.push_back(r);
                times.push_back(rng.exponential(std::exp(r)));
                events.push_back(rng.uniform() < 0.8);
            }
            const auto o = outcomes_of(times, events);
            const auto cindex_of = [&](const std::vector<std::size_t>& idx) {
                std::vector<double> rr;
                std::vector<OutcomeRecord> oo;
                for (auto i : idx) {
                    rr.push_back(risks[i]);
                    oo.push_back(o[i]);
                }
                return concordance_index(rr, oo);
            };
            const auto ci = bootstrap_ci(cindex_of, 30, 200, 0.95, trial);
            if (ci.lower <= ci.estimate && ci.estimate <= ci.upper) ++bracketed;
        }
        CHECK(bracketed >= 45);  // >= 90% of 50 trials
    }

    SECTION("more resamples shrink endpoint Monte-Carlo variance") {
        Rng data_rng(17);
        std::vector<double> values;
        for (int i = 0; i < 40; ++i) values.push_back(data_rng.normal());
        const auto mean_of = [&](const std::vector<std::size_t>& idx) {
            double acc = 0.0;
            for (auto i : idx) acc += values[i];
            return acc / static_cast<double>(idx.size());
        };
        const auto endpoint_variance = [&](std::size_t resamples) {
            std::vector<double> lows, highs;
            for (int seed = 0; seed < 20; ++seed) {
                const auto ci =
                    bootstrap_ci(mean_of, values.size(), resamples, 0.95, seed);
                lows.push_back(ci.lower);
                highs.push_back(ci.upper);
            }
            const auto var = [](const std::vector<double>& v) {
                double m = 0.0;
                for (double x : v) m += x;
                m /= static_cast<double>(v.size());
                double acc = 0.0;
                for (double x : v) acc += (x - m) * (x - m);
                return acc / static_cast<double>(v.size() - 1);
            };
            return std::pair{var(lows), var(highs)};
        };
        const auto [lo_small, hi_small] = endpoint_variance(100);
        const auto [lo_big, hi_big] = endpoint_variance(1000);
        CHECK(lo_big <= lo_small);
        CHECK(hi_big <= hi_small);
    }

    SECTION("pervasively undefined metric raises a degenerate-data error") {
        const auto metric = [](const std::vector<std::size_t>&) -> double {
            throw MetricUndefinedError("always undefined");
        };
        CHECK_THROWS_AS(bootstrap_ci(metric, 10, 50, 0.95, 3),
                        MetricUndefinedError);
    }
}

TEST_CASE("median risk split") {
    const auto make = [](std::vector<double> risks) {
        RiskSeries s;
        for (std::size_t i = 0; i < risks.size(); ++i)
            s.ids.push_back("p" + std::to_string(i + 1));
        s.risks = std::move(risks);
        return s;
    };

    SECTION("even split") {
        const auto split = median_risk_split(make({1, 2, 3, 4}));
        CHECK(split.high == std::vector<std::string>{"p3", "p4"});
        CHECK(split.low == std::vector<std::string>{"p1", "p2"});
    }

    SECTION("all ties go low") {
        const auto split = median_risk_split(make({2, 2, 2}));
        CHECK(split.high.empty());
        CHECK(split.low.size() == 3);
    }

    SECTION("odd count") {
        const auto split = median_risk_split(make({1, 2, 3}));
        CHECK(split.high == std::vector<std::string>{"p3"});
        CHECK(split.low == std::vector<std::string>{"p1", "p2"});
    }
}

TEST_CASE("concordance is invariant under strictly increasing transforms") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> risks, times;
        std::vector<bool> events;
        for (int i = 0; i < 20; ++i) {
            risks.push_back(static_cast<double>(rng.uniform_index(7)));
            times.push_back(rng.uniform(0.1, 6.0));
            events.push_back(rng.uniform() < 0.7);
        }
        const auto o = outcomes_of(times, events);
        std::vector<double> mapped = risks;
        // exp is strictly increasing and preserves the tie pattern.
        for (auto& r : mapped) r = std::exp(0.5 * r) + 3.0;
        CHECK(concordance_index(risks, o) == concordance_index(mapped, o));
    }
}
