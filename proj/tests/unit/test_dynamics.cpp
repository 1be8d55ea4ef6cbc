#include "../support/oracles.hpp"
#include "ckptscope/dynamics.hpp"
#include "ckptscope/synth.hpp"

#include <gtest/gtest.h>

using namespace ckptscope;

namespace {

CheckpointSeries series_of(const std::vector<double>& values, const std::string& prefix = "c") {
    CheckpointSeries s{"m", {}};
    const auto tokens = log_spaced_tokens(values.size(), 1e9, 1e12);
    for (std::size_t i = 0; i < values.size(); ++i) s.points.push_back({prefix + std::to_string(i), tokens[i], values[i]});
    return s;
}

}  // namespace

TEST(Xckpt, IdenticalAndNegatedMatrices) {
    Rng rng(1);
    const Matrix M = rng.normal_matrix(20, 5);
    const Matrix same = xckpt_correlation({M, M});
    EXPECT_EQ(same, Matrix::Ones(2, 2));
    const Matrix neg = xckpt_correlation({M, Matrix(-M)});
    EXPECT_NEAR(neg(0, 1), -1.0, 1e-15);
    EXPECT_EQ(neg(0, 1), neg(1, 0));
    EXPECT_EQ(neg(0, 0), 1.0);
}

TEST(Xckpt, MatchesFlattenOracleAndIsSymmetric) {
    Rng rng(2);
    std::vector<Matrix> acts{rng.normal_matrix(30, 4), rng.normal_matrix(30, 4), rng.normal_matrix(30, 4)};
    acts[2] += acts[0];
    const Matrix C = xckpt_correlation(acts);
    for (Index a = 0; a < 3; ++a)
        for (Index b = 0; b < 3; ++b) {
            EXPECT_EQ(C(a, b), C(b, a));
            if (a != b) EXPECT_NEAR(C(a, b), oracle::flatten_corr(acts[static_cast<std::size_t>(a)], acts[static_cast<std::size_t>(b)]), 1e-12);
            else EXPECT_EQ(C(a, a), 1.0);
        }
}

TEST(Xckpt, PerNeuronMeanMode) {
    Rng rng(3);
    const Matrix A = rng.normal_matrix(25, 3);
    Matrix B = A;
    B.col(1) = -B.col(1);
    B.col(2).setConstant(1.0);  // constant neuron is skipped
    const Matrix C = xckpt_correlation({A, B}, XcorrMode::per_neuron_mean);
    EXPECT_NEAR(C(0, 1), 0.0, 1e-15);
    EXPECT_EQ(parse_xcorr_mode("per_neuron_mean"), XcorrMode::per_neuron_mean);
    EXPECT_THROW(parse_xcorr_mode("rank"), std::invalid_argument);
}

TEST(Xckpt, ShapeMismatchAndConstantDiagonal) {
    EXPECT_THROW(xckpt_correlation({Matrix::Ones(3, 2), Matrix::Ones(2, 3)}), std::invalid_argument);
    EXPECT_EQ(xckpt_correlation({Matrix::Ones(3, 2)})(0, 0), 0.0);
}

TEST(Segmentation, PiecewiseConstantSteps) {
    const auto seg = segment_phases(series_of({0, 0, 0, 1, 1, 1, 2, 2, 2}));
    EXPECT_EQ(seg.boundaries, (std::vector<std::size_t>{3, 6}));
    EXPECT_NEAR(seg.sse, 0.0, 1e-20);
}

TEST(Segmentation, LinearSeriesTakesEarliestBoundaries) {
    std::vector<double> y;
    const auto base = series_of(std::vector<double>(10, 0.0));
    for (const auto& p : base.points) y.push_back(3.0 * std::log10(static_cast<double>(p.training_tokens)) - 1.0);
    const auto seg = segment_phases(series_of(y));
    EXPECT_EQ(seg.boundaries, (std::vector<std::size_t>{1, 2}));
    EXPECT_NEAR(seg.sse, 0.0, 1e-18);
}

TEST(Segmentation, DynamicProgramEqualsExhaustiveSearch) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 6 + static_cast<std::size_t>(rng.below(10));
        std::vector<double> x, y;
        for (std::size_t i = 0; i < n; ++i) {
            x.push_back(9.0 + 0.2 * static_cast<double>(i) + 0.05 * rng.uniform());
            y.push_back(rng.normal());
        }
        const auto dp = segment_phases_xy(x, y);
        const auto ex = oracle::segment3(x, y);
        ASSERT_NEAR(dp.sse, ex.sse, 1e-9 * (1.0 + ex.sse));
        ASSERT_EQ(dp.boundaries, ex.boundaries) << "n=" << n;
    }
}

TEST(Segmentation, AffineTransformsKeepBoundaries) {
    PhaseCurveSpec spec;
    spec.noise_sigma = 0.1;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        spec.seed = seed;
        const auto s = gen_phase_curve(spec).series;
        const auto base = segment_phases(s);
        for (double alpha : {-2.0, 0.3, 1e3}) {
            auto t = s;
            for (auto& p : t.points) p.value = alpha * p.value + 7.0;
            EXPECT_EQ(segment_phases(t).boundaries, base.boundaries) << seed << " " << alpha;
        }
    }
}

TEST(Segmentation, NoiselessGeneratorIsRecoveredExactly) {
    PhaseCurveSpec spec;
    const auto seg = segment_phases(gen_phase_curve(spec).series);
    EXPECT_EQ(seg.boundaries, spec.boundaries);
    EXPECT_NEAR(seg.segments[0].slope, 1.0, 1e-9);
    EXPECT_NEAR(seg.segments[1].slope, -0.5, 1e-9);
    EXPECT_NEAR(seg.segments[2].slope, 1.0, 1e-9);
}

TEST(Segmentation, MinLengthAndErrors) {
    SegmentOptions opt;
    opt.min_length = 3;
    const auto seg = segment_phases(series_of({0, 5, 0, 0, 0, 0, 0, 0, 9}), opt);
    EXPECT_GE(seg.boundaries[0], 3u);
    EXPECT_LE(seg.boundaries[1], 6u);
    EXPECT_THROW(segment_phases(series_of({1, 2, 3, 4, 5})), std::invalid_argument);
    auto bad = series_of({1, 2, 3, 4, 5, 6});
    bad.points[3].training_tokens = bad.points[2].training_tokens;
    EXPECT_THROW(segment_phases(bad), DataError);
    auto nan = series_of({1, 2, 3, 4, 5, 6});
    nan.points[1].value = NAN;
    EXPECT_THROW(segment_phases(nan), NumericalError);
}

TEST(AlignSeries, SelfNegationAndDisjoint) {
    const auto a = series_of({0.1, 0.5, 0.2, 0.9});
    EXPECT_NEAR(align_series(a, a).r, 1.0, 1e-15);
    auto neg = a;
    for (auto& p : neg.points) p.value = -p.value;
    EXPECT_NEAR(align_series(a, neg).r, -1.0, 1e-15);
    EXPECT_THROW(align_series(a, series_of({1, 2, 3, 4}, "other")), std::invalid_argument);
}

TEST(AlignSeries, InnerJoinOnCheckpointIds) {
    auto a = series_of({1, 2, 3, 4, 5});
    auto b = series_of({10, 20, 30, 40, 50});
    b.points.erase(b.points.begin() + 1);
    const auto joined = align_series(a, b);
    EXPECT_EQ(joined.checkpoint_ids, (std::vector<std::string>{"c0", "c2", "c3", "c4"}));
    EXPECT_EQ(joined.b, (std::vector<double>{10, 30, 40, 50}));
}
