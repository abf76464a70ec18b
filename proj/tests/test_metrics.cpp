#include <gtest/gtest.h>

#include "ebrm/core.hpp"
#include "ebrm/metrics.hpp"
#include "ebrm/rng.hpp"

using namespace ebrm;

TEST(Evaluate, PerfectPredictions) {
    const std::vector<int> y{1, 0, 1, 1, 0};
    const auto r = evaluate(y, y);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
}

TEST(Evaluate, HandComputedConfusion) {
    // gold {1,1,0,0}, pred {1,0,0,0}: TP 1, FN 1, TN 2, FP 0.
    const auto r = evaluate(std::vector<int>{1, 0, 0, 0}, std::vector<int>{1, 1, 0, 0});
    EXPECT_EQ(r.tp, 1u);
    EXPECT_EQ(r.fn, 1u);
    EXPECT_EQ(r.tn, 2u);
    EXPECT_EQ(r.fp, 0u);
    EXPECT_NEAR(r.accuracy, 0.75, 1e-12);
    EXPECT_NEAR(r.pos_acc, 0.5, 1e-12);
    EXPECT_NEAR(r.neg_acc, 1.0, 1e-12);
    EXPECT_NEAR(r.macro_f1, (2.0 / 3.0 + 4.0 / 5.0) / 2.0, 1e-12);
}

TEST(Evaluate, SingleClassGoldHalvesMacroF1) {
    const std::vector<int> y{1, 1, 1};
    EXPECT_DOUBLE_EQ(evaluate(y, y).macro_f1, 0.5);
}

TEST(Evaluate, RejectsBadInput) {
    EXPECT_THROW(evaluate(std::vector<int>{1}, std::vector<int>{1, 0}), ValidationError);
    EXPECT_THROW(evaluate(std::vector<int>{}, std::vector<int>{}), ValidationError);
    EXPECT_THROW(evaluate(std::vector<int>{2}, std::vector<int>{1}), ValidationError);
}

TEST(Evaluate, MatchesIndependentCountAndIsPermutationInvariant) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        std::vector<int> p(n), g(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng.below(2));
            g[i] = static_cast<int>(rng.below(2));
        }
        double tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            tp += p[i] && g[i];
            fp += p[i] && !g[i];
            tn += !p[i] && !g[i];
            fn += !p[i] && g[i];
        }
        const auto f1 = [](double a, double b, double c) { return a == 0 ? 0.0 : 2 * a / (2 * a + b + c); };
        const auto r = evaluate(p, g);
        EXPECT_NEAR(r.accuracy, (tp + tn) / n, 1e-12);
        EXPECT_NEAR(r.macro_f1, 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp)), 1e-12);

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(std::span<std::size_t>(order));
        std::vector<int> p2(n), g2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p2[i] = p[order[i]];
            g2[i] = g[order[i]];
        }
        const auto r2 = evaluate(p2, g2);
        EXPECT_EQ(r2.macro_f1, r.macro_f1);
        EXPECT_EQ(r2.tp, r.tp);
    }
}
