#include "vaal/pool/pool.hpp"
#include "vaal/pool/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace vaal;
using vaal::test_util::label_only_dataset;

TEST(InitPools, TenPercentOfFiftyThousand) {
    const Dataset ds = label_only_dataset(5000, 10);
    const PoolState pool = init_pools(ds, 0.10, std::nullopt, 1);
    EXPECT_EQ(pool.labeled.size(), 5000u);
    EXPECT_EQ(pool.unlabeled.size(), 45000u);
    EXPECT_EQ(audit_partition(pool, ds), "");
    EXPECT_EQ(pool.round, 0);
}

TEST(InitPools, RejectsBadFraction) {
    const Dataset ds = label_only_dataset(10, 10);
    EXPECT_THROW(init_pools(ds, 0.0, std::nullopt, 1), ConfigError);
    EXPECT_THROW(init_pools(ds, 1.0, std::nullopt, 1), ConfigError);
}

TEST(InitPools, AllClassesExcludedIsConfigError) {
    const Dataset ds = label_only_dataset(100, 10);
    EXPECT_THROW(init_pools(ds, 0.10, BiasConfig{10, 3}, 1), ConfigError);
}

TEST(InitPools, BiasedPoolHasExactlyMEmptyClasses) {
    const Dataset ds = label_only_dataset(200, 100);
    const PoolState pool = init_pools(ds, 0.10, BiasConfig{10, 99}, 5);
    ASSERT_EQ(pool.labeled.size(), 2000u);
    std::vector<int> hist(100, 0);
    for (Index i : pool.labeled) ++hist[ds.true_labels[i]];
    std::set<int> empty;
    for (int c = 0; c < 100; ++c) {
        if (hist[c] == 0) empty.insert(c);
    }
    EXPECT_EQ(empty.size(), 10u);
    EXPECT_EQ(empty, std::set<int>(pool.excluded_classes.begin(), pool.excluded_classes.end()));
}

TEST(InitPools, InsufficientEligibleSamples) {
    // 95 of 100 classes excluded leaves 5 * 10 = 50 eligible; need 500
    const Dataset ds = label_only_dataset(50, 100);
    EXPECT_THROW(init_pools(ds, 0.5, BiasConfig{95, 1}, 1), ConfigError);
}

TEST(InitPools, DeterministicUnderSeed) {
    const Dataset ds = label_only_dataset(100, 10);
    EXPECT_EQ(init_pools(ds, 0.2, std::nullopt, 9), init_pools(ds, 0.2, std::nullopt, 9));
    EXPECT_NE(init_pools(ds, 0.2, std::nullopt, 9).labeled, init_pools(ds, 0.2, std::nullopt, 10).labeled);
}

TEST(Annotate, BudgetOfFivePercent) {
    const Dataset ds = label_only_dataset(5000, 10);
    const Oracle oracle({}, ds);
    PoolState pool = init_pools(ds, 0.10, std::nullopt, 1);
    IndexList batch(pool.unlabeled.begin(), pool.unlabeled.begin() + 2500);
    pool = annotate(pool, batch, oracle, ds);
    EXPECT_EQ(pool.labeled.size(), 7500u);
    EXPECT_EQ(pool.unlabeled.size(), 42500u);
    EXPECT_EQ(pool.round, 1);
    EXPECT_EQ(audit_partition(pool, ds), "");
}

TEST(Annotate, EmptyBatchRejected) {
    const Dataset ds = label_only_dataset(10, 10);
    const Oracle oracle({}, ds);
    const PoolState pool = init_pools(ds, 0.1, std::nullopt, 1);
    EXPECT_THROW(annotate(pool, {}, oracle, ds), ContractViolation);
}

TEST(Annotate, TwoDisjointBatchesAdd) {
    const Dataset ds = label_only_dataset(100, 10);
    const Oracle oracle({}, ds);
    PoolState pool = init_pools(ds, 0.1, std::nullopt, 1);
    const auto before = pool.labeled.size();
    IndexList a(pool.unlabeled.begin(), pool.unlabeled.begin() + 150);
    IndexList b(pool.unlabeled.begin() + 150, pool.unlabeled.begin() + 300);
    pool = annotate(pool, a, oracle, ds);
    pool = annotate(pool, b, oracle, ds);
    EXPECT_EQ(pool.labeled.size(), before + 300);
    EXPECT_EQ(pool.round, 2);
    EXPECT_EQ(audit_partition(pool, ds), "");
}

TEST(Annotate, RejectsLabeledOrDuplicateIndices) {
    const Dataset ds = label_only_dataset(10, 10);
    const Oracle oracle({}, ds);
    const PoolState pool = init_pools(ds, 0.1, std::nullopt, 1);
    EXPECT_THROW(annotate(pool, {pool.labeled.front()}, oracle, ds), ContractViolation);
    EXPECT_THROW(annotate(pool, {pool.unlabeled[0], pool.unlabeled[0]}, oracle, ds), ContractViolation);
}

TEST(Oracle, ZeroNoiseIsIdeal) {
    const Dataset ds = label_only_dataset(100, 10, 5);
    const Oracle noisy({OracleKind::Noisy, 0.0, 1}, ds);
    for (Index i = 0; i < ds.size(); ++i) EXPECT_EQ(noisy.label(i), ds.true_labels[i]);
}

TEST(Oracle, TenPercentOfFortyFiveThousand) {
    const Dataset ds = label_only_dataset(450, 100, 5);
    ASSERT_EQ(ds.split.train.size(), 45000u);
    const Oracle oracle({OracleKind::Noisy, 0.10, 17}, ds);
    std::size_t wrong = 0;
    for (Index i : ds.split.train) {
        const int y = oracle.label(i);
        if (y != ds.true_labels[i]) {
            ++wrong;
            EXPECT_EQ((*ds.superclass_map)[y], (*ds.superclass_map)[ds.true_labels[i]]);
        }
    }
    EXPECT_EQ(wrong, 4500u);
    EXPECT_EQ(oracle.passthrough_count(), 0u);
}

TEST(Oracle, RepeatedQueriesAgree) {
    const Dataset ds = label_only_dataset(100, 10, 5);
    const Oracle oracle({OracleKind::Noisy, 0.3, 2}, ds);
    for (Index i = 0; i < ds.size(); ++i) EXPECT_EQ(oracle.label(i), oracle.label(i));
    const Oracle again({OracleKind::Noisy, 0.3, 2}, ds);
    for (Index i = 0; i < ds.size(); ++i) EXPECT_EQ(oracle.label(i), again.label(i));
}

TEST(Oracle, SingletonSuperclassPassesThrough) {
    // superclass size 1: every class is alone in its superclass
    const Dataset ds = label_only_dataset(20, 5, 1);
    const Oracle oracle({OracleKind::Noisy, 0.5, 4}, ds);
    for (Index i = 0; i < ds.size(); ++i) EXPECT_EQ(oracle.label(i), ds.true_labels[i]);
    EXPECT_EQ(oracle.passthrough_count(), 50u);
}

TEST(Oracle, NoisyWithoutSuperclassesIsConfigError) {
    const Dataset ds = label_only_dataset(10, 10);
    EXPECT_THROW(Oracle({OracleKind::Noisy, 0.1, 1}, ds), ConfigError);
}

TEST(Oracle, NoisyPoolCorruptionMatchesDesignation) {
    const Dataset ds = label_only_dataset(100, 20, 4);
    const Oracle oracle({OracleKind::Noisy, 0.2, 8}, ds);
    PoolState pool = init_pools(ds, 0.1, std::nullopt, 3, &oracle);
    Rng rng(1);
    for (int round = 0; round < 5; ++round) {
        auto batch = sample_without_replacement(pool.unlabeled, 100, rng);
        pool = annotate(pool, batch, oracle, ds);
    }
    std::size_t designated = 0, corrupted = 0;
    for (Index i : pool.labeled) {
        designated += oracle.is_designated(i);
        corrupted += pool.acquired_labels.at(i) != ds.true_labels[i];
    }
    EXPECT_GT(designated, 0u);
    EXPECT_EQ(corrupted, designated);
}

TEST(PoolSnapshot, JsonRoundTrip) {
    const Dataset ds = label_only_dataset(30, 10);
    const Oracle oracle({}, ds);
    PoolState pool = init_pools(ds, 0.1, std::nullopt, 1);
    pool = annotate(pool, {pool.unlabeled[3], pool.unlabeled[7]}, oracle, ds);
    const PoolState back = pool_from_json(nlohmann::json::parse(pool_to_json(pool).dump()), ds.split.train);
    EXPECT_EQ(back.labeled, pool.labeled);
    EXPECT_EQ(back.unlabeled, pool.unlabeled);
    EXPECT_EQ(back.acquired_labels, pool.acquired_labels);
    EXPECT_EQ(back.round, pool.round);
}

TEST(Synthetic, ShapeAndSplits) {
    SyntheticSpec spec;
    spec.classes = 8;
    spec.dim = 32;
    spec.per_class = 250;
    spec.test_per_class = 62;
    const Dataset ds = make_gaussian_mixture(spec);
    EXPECT_EQ(ds.split.train.size(), 2000u);
    EXPECT_EQ(ds.split.test.size(), 496u);
    EXPECT_EQ(ds.feature_dim(), 32u);
    EXPECT_NO_THROW(validate(ds));
    const Dataset again = make_gaussian_mixture(spec);
    EXPECT_EQ(ds.samples, again.samples);
}
