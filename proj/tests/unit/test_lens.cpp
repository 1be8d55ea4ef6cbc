#include "../support/oracles.hpp"
#include "../support/test_util.hpp"
#include "ckptscope/lens.hpp"
#include "ckptscope/synth.hpp"

#include <gtest/gtest.h>

using namespace ckptscope;

namespace {

LensBundle random_bundle(std::uint64_t seed, Index S = 40, Index D = 12, Index vocab = 30) {
    Rng rng(seed);
    LensBundle b;
    b.hidden = rng.normal_matrix(S, D);
    b.norm_gain = (rng.uniform_matrix(D, 1).col(0).array() + 0.5).matrix();
    b.unembed = rng.normal_matrix(vocab, D);
    for (Index s = 0; s < S; ++s) b.gold_token.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(vocab))));
    return b;
}

}  // namespace

TEST(Lens, IdentityProjectionPicksTheHotCoordinate) {
    LensBundle b;
    b.hidden = Matrix::Zero(1, 5);
    b.hidden(0, 3) = 1.0;
    b.norm_gain = Vector::Ones(5);
    b.unembed = Matrix::Identity(5, 5);
    EXPECT_EQ(lens_project(b), (std::vector<Index>{3}));
}

TEST(Lens, EqualLogitsTieToTokenZero) {
    LensBundle b;
    b.hidden = Matrix::Ones(2, 3);
    b.norm_gain = Vector::Ones(3);
    b.unembed = Matrix::Ones(6, 3);
    EXPECT_EQ(lens_project(b), (std::vector<Index>{0, 0}));
}

TEST(Lens, MatchesDenseOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto b = random_bundle(seed);
        EXPECT_EQ(lens_project(b), oracle::lens_argmax(b.hidden, b.norm_gain, b.unembed, b.eps));
    }
}

TEST(Lens, PositiveScalingOfHiddenStatesIsInvisible) {
    auto b = random_bundle(11);
    b.eps = 0.0;
    const auto base = lens_project(b);
    for (double c : {1e-3, 2.0, 1e4}) {
        auto scaled = b;
        scaled.hidden *= c;
        EXPECT_EQ(lens_project(scaled), base) << c;
    }
}

TEST(Lens, VocabularyPermutationPermutesPredictions) {
    const auto b = random_bundle(12);
    auto perm = iota_indices(b.unembed.rows());
    Rng(13).shuffle(perm);
    auto p = b;
    p.unembed = select_rows(b.unembed, perm);  // new row i is old row perm[i]
    const auto base = lens_project(b), permuted = lens_project(p);
    for (std::size_t s = 0; s < base.size(); ++s) EXPECT_EQ(perm[static_cast<std::size_t>(permuted[s])], base[s]);
}

TEST(Lens, HandBuiltAccuracy) {
    LensBundle b;
    b.hidden = Matrix::Identity(4, 4);
    b.norm_gain = Vector::Ones(4);
    b.unembed = Matrix::Identity(4, 4);
    b.gold_token = {0, 1, 2, 0};
    EXPECT_DOUBLE_EQ(layer_accuracy(b), 0.75);
    b.gold_token = {0, 1, 2, 3};
    EXPECT_DOUBLE_EQ(layer_accuracy(b), 1.0);
}

TEST(Lens, UnreachableGoldGivesZero) {
    LensBundle b;
    b.hidden = Matrix::Identity(3, 3);
    b.norm_gain = Vector::Ones(3);
    b.unembed = Matrix::Zero(4, 3);
    b.unembed.topRows(3) = Matrix::Identity(3, 3);  // token 3 has zero logits, never the argmax
    b.gold_token = {3, 3, 3};
    EXPECT_DOUBLE_EQ(layer_accuracy(b), 0.0);
}

TEST(Lens, AccuracyIsOneMinusHammingRate) {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        const auto b = random_bundle(seed);
        const auto pred = lens_project(b);
        std::size_t wrong = 0;
        for (std::size_t s = 0; s < pred.size(); ++s) wrong += pred[s] != b.gold_token[s];
        EXPECT_NEAR(layer_accuracy(b), 1.0 - static_cast<double>(wrong) / static_cast<double>(pred.size()), 1e-15);
    }
}

TEST(Lens, NormCanBeDisabled) {
    LensBundle b;
    b.hidden = Matrix(1, 2);
    b.hidden << 1.0, 1.0;
    b.norm_gain = Vector(2);
    b.norm_gain << 1.0, 10.0;
    b.unembed = Matrix::Identity(2, 2);
    EXPECT_EQ(lens_project(b), (std::vector<Index>{1}));
    b.apply_norm = false;
    EXPECT_EQ(lens_project(b), (std::vector<Index>{0}));
}

TEST(Lens, BundleValidation) {
    auto b = random_bundle(30);
    auto bad = b;
    bad.norm_gain = Vector::Ones(3);
    EXPECT_THROW(lens_project(bad), std::invalid_argument);
    bad = b;
    bad.unembed = Matrix::Ones(5, 3);
    EXPECT_THROW(lens_project(bad), std::invalid_argument);
    bad = b;
    bad.gold_token[0] = 1000;
    EXPECT_THROW(layer_accuracy(bad), std::invalid_argument);
    bad = b;
    bad.hidden = Matrix(0, b.hidden.cols());
    bad.gold_token.clear();
    EXPECT_THROW(layer_accuracy(bad), std::invalid_argument);
}

TEST(ExactMatch, TrimAndCaseRules) {
    EXPECT_DOUBLE_EQ(exact_match_score({"A "}, {"A"}), 1.0);
    EXPECT_DOUBLE_EQ(exact_match_score({"\t A\n"}, {"A"}), 1.0);
    EXPECT_DOUBLE_EQ(exact_match_score({"a"}, {"A"}), 0.0);
    EXPECT_DOUBLE_EQ(exact_match_score({"A", "B", "C", "D"}, {"A", "B", "X", "D"}), 0.75);
    EXPECT_THROW(exact_match_score({"A"}, {"A", "B"}), std::invalid_argument);
    EXPECT_THROW(exact_match_score({}, {}), std::invalid_argument);
}

TEST(LensSeries, AccuracyRisesWithTheSignalSchedule) {
    testutil::TempDir dir("lens");
    const auto manifest = load_manifest(write_synth_dataset(SynthDatasetSpec{}, dir.path()));
    const auto series = lens_series(manifest, 25, "arith");
    ASSERT_EQ(series.size(), 8u);
    const auto v = series.values();
    EXPECT_LT(v.front(), 0.35);
    EXPECT_GT(v.back(), 0.9);
    for (double a : v) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
    EXPECT_THROW(lens_series(manifest, 25, "nope"), DataError);
    EXPECT_THROW(lens_series(manifest, 3, "arith"), DataError);
}
