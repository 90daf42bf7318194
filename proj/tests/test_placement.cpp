#include <algorithm>
#include <bit>
#include <random>

#include <gtest/gtest.h>

#include "pmuopp/experiment.hpp"
#include "pmuopp/placement.hpp"
#include "test_support.hpp"

using namespace pmuopp;
using namespace pmuopp::test;

namespace {

// Contributions with W_i = diag(t_i, 0, ...), so trace_i = t_i.
std::vector<GramianContribution> synthetic(const std::vector<double>& t, int n = 3) {
    std::vector<GramianContribution> cs;
    for (std::size_t i = 0; i < t.size(); ++i) {
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
        W(i % n, i % n) = t[i];
        cs.push_back({static_cast<int>(i) + 1, W, 0, W.trace()});
    }
    quantize_traces(cs);
    return cs;
}

// Best p-subset by scanning every bitmask; ties go to the lexicographically smallest set.
std::vector<int> enumerate_best(const std::vector<GramianContribution>& cs, int p) {
    const int N = static_cast<int>(cs.size());
    std::vector<int> best;
    double best_value = -1;
    for (unsigned mask = 0; mask < (1u << N); ++mask) {
        if (std::popcount(mask) != p) continue;
        std::vector<int> Z;
        double v = 0;
        for (int i = 0; i < N; ++i)
            if (mask >> i & 1u) {
                Z.push_back(i + 1);
                v += cs[i].trace;
            }
        if (v > best_value || (v == best_value && Z < best)) {
            best_value = v;
            best = Z;
        }
    }
    return best;
}

const std::vector<GramianContribution>& case9_contributions() {
    static const auto cs = [] {
        const Experiment e = make_experiment(case9(), ExperimentConfig{});
        return contributions_at(e, e.ss.x0);
    }();
    return cs;
}

}  // namespace

TEST(Placement, AllCandidatesAndNone) {
    const auto& cs = case9_contributions();
    const auto all = solve_apriori({cs, 9});
    EXPECT_EQ(all.Z_star, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
    const auto none = solve_apriori({cs, 0});
    EXPECT_TRUE(none.Z_star.empty());
    EXPECT_EQ(none.objective, 0.0);
    EXPECT_TRUE(none.condition_flag());
    EXPECT_TRUE(solve_bruteforce({cs, 0}).Z_star.empty());
}

TEST(Placement, OutOfRangeCountIsDomainError) {
    const auto& cs = case9_contributions();
    EXPECT_THROW(solve_apriori({cs, 10}), DomainError);
    EXPECT_THROW(solve_apriori({cs, -1}), DomainError);
    EXPECT_THROW(solve_bruteforce({cs, 10}), DomainError);
}

TEST(Placement, BadCandidateSetIsValidationError) {
    auto cs = synthetic({1, 2, 3});
    cs[2].bus = 2;
    EXPECT_THROW(solve_apriori({cs, 1}), ValidationError);
    cs[2].bus = 4;
    EXPECT_THROW(solve_apriori({cs, 1}), ValidationError);
}

TEST(Placement, TopTracesOnCase9MatchEnumeration) {
    const auto& cs = case9_contributions();
    for (int p = 0; p <= 9; ++p) {
        const auto a = solve_apriori({cs, p});
        const auto b = solve_bruteforce({cs, p});
        EXPECT_EQ(a.Z_star, enumerate_best(cs, p)) << p;
        EXPECT_EQ(a.Z_star, b.Z_star) << p;
        EXPECT_EQ(a.objective, b.objective) << p;
        EXPECT_EQ(a.method, PlacementMethod::Apriori);
        EXPECT_EQ(b.method, PlacementMethod::BruteForce);
    }
}

TEST(Placement, RandomTracesMatchEnumeration) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> coarse(1, 5);  // small range forces ties
    std::lognormal_distribution<double> wide(0.0, 2.0);
    for (int trial = 0; trial < 40; ++trial) {
        const int N = 4 + trial % 9;
        std::vector<double> t(N);
        for (auto& v : t) v = trial % 2 ? coarse(rng) : wide(rng);
        const auto cs = synthetic(t);
        for (int p = 0; p <= N; ++p) {
            const auto expect = enumerate_best(cs, p);
            EXPECT_EQ(solve_apriori({cs, p}).Z_star, expect) << trial << " p=" << p;
            EXPECT_EQ(solve_bruteforce({cs, p}, 1e6, 1 + trial % 3).Z_star, expect) << trial << " p=" << p;
        }
    }
}

TEST(Placement, TiesGoToLowerBus) {
    const auto cs = synthetic({2, 5, 2, 5, 2});
    EXPECT_EQ(solve_apriori({cs, 1}).Z_star, (std::vector<int>{2}));
    EXPECT_EQ(solve_apriori({cs, 3}).Z_star, (std::vector<int>{1, 2, 4}));
    EXPECT_EQ(solve_bruteforce({cs, 3}).Z_star, (std::vector<int>{1, 2, 4}));
}

TEST(Placement, ObjectiveIsTraceOfSummedGramian) {
    const auto& cs = case9_contributions();
    for (int p = 1; p <= 9; ++p) {
        const auto r = solve_apriori({cs, p});
        const double tr = sum_contributions(cs, r.Z_star).trace();
        EXPECT_NEAR(r.objective, tr, 1e-9 * tr) << p;
        EXPECT_EQ(r.objective, sum_traces(cs, r.Z_star)) << p;
        EXPECT_NEAR(r.conditioning.trace, tr, 1e-9 * tr) << p;
    }
}

TEST(Placement, InputOrderDoesNotMatter) {
    auto cs = case9_contributions();
    const auto ref = solve_apriori({cs, 4});
    std::mt19937_64 rng(5);
    for (int k = 0; k < 5; ++k) {
        std::shuffle(cs.begin(), cs.end(), rng);
        const auto r = solve_apriori({cs, 4});
        EXPECT_EQ(r.Z_star, ref.Z_star);
        EXPECT_EQ(r.objective, ref.objective);
        EXPECT_EQ(r.provenance, ref.provenance);
        EXPECT_EQ(solve_bruteforce({cs, 4}).Z_star, ref.Z_star);
    }
}

TEST(Placement, OptimaAreNested) {
    const auto& cs = case9_contributions();
    std::vector<PlacementResult> rs;
    for (int p = 0; p <= 9; ++p) rs.push_back(solve_apriori({cs, p}));
    EXPECT_TRUE(nesting_check(rs));
    for (std::size_t k = 1; k < rs.size(); ++k) EXPECT_GE(rs[k].objective, rs[k - 1].objective);
}

TEST(Placement, NestingCheckDetectsViolationsAndMixedInputs) {
    const auto cs = synthetic({1, 2, 3, 4});
    PlacementResult a = solve_apriori({cs, 1}), b = solve_apriori({cs, 2});
    b.Z_star = {1, 2};
    EXPECT_FALSE(nesting_check({a, b}));
    EXPECT_TRUE(nesting_check({}));
    const auto other = solve_apriori({synthetic({4, 3, 2, 1}), 2});
    EXPECT_THROW(nesting_check({a, other}), ValidationError);
    EXPECT_THROW(nesting_check({solve_apriori({cs, 2}), a}), ValidationError);
}

TEST(Placement, EnumerationCap) {
    const auto cs = synthetic(std::vector<double>(20, 1.0));
    EXPECT_EQ(binomial(20, 10), 184756.0);
    EXPECT_EQ(binomial(39, 16), 37711260990.0);
    EXPECT_THROW(solve_bruteforce({cs, 10}, 1e5), EnumerationCapError);
    try {
        solve_bruteforce({cs, 10}, 1e5);
    } catch (const EnumerationCapError& e) {
        EXPECT_EQ(e.count(), 184756.0);
    }
    EXPECT_EQ(solve_bruteforce({cs, 10}, 184756).Z_star.size(), 10u);
}

TEST(Placement, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> d(1, 3);
    std::vector<double> t(16);
    for (auto& v : t) v = d(rng);
    const auto cs = synthetic(t);
    const auto ref = solve_bruteforce({cs, 6}, 1e6, 1);
    for (int th : {2, 3, 7, 64}) EXPECT_EQ(solve_bruteforce({cs, 6}, 1e6, th).Z_star, ref.Z_star) << th;
}

TEST(Placement, FractionToCount) {
    EXPECT_EQ(p_from_fraction(0.2, 9), 2);
    EXPECT_EQ(p_from_fraction(0.4, 9), 4);
    EXPECT_EQ(p_from_fraction(0.6, 9), 5);
    EXPECT_EQ(p_from_fraction(0.8, 9), 7);
    EXPECT_EQ(p_from_fraction(0.5, 9), 5);
    EXPECT_EQ(p_from_fraction(0.2, 39), 8);
    EXPECT_EQ(p_from_fraction(0.4, 39), 16);
    EXPECT_EQ(p_from_fraction(0.0, 9), 0);
    EXPECT_EQ(p_from_fraction(1.0, 9), 9);
    EXPECT_THROW(p_from_fraction(1.5, 9), ConfigError);
    EXPECT_THROW(p_from_fraction(-0.1, 9), ConfigError);
}

TEST(Placement, JsonShape) {
    const auto r = solve_apriori({case9_contributions(), 2});
    const auto j = to_json(r);
    EXPECT_EQ(j["p"], 2);
    EXPECT_EQ(j["Z_star"].size(), 2u);
    EXPECT_EQ(j["method"], "apriori");
    EXPECT_TRUE(j["condition_flag"].is_boolean());
}
