#include "../support/oracles.hpp"
#include "../support/test_util.hpp"
#include "ckptscope/idim.hpp"
#include "ckptscope/synth.hpp"

#include <gtest/gtest.h>

using namespace ckptscope;

namespace {

NeighborRatios ratios(int k, std::vector<double> mu) {
    NeighborRatios r;
    r.k = k;
    r.mu = Eigen::Map<Vector>(mu.data(), static_cast<Index>(mu.size()));
    return r;
}

/// log of prod_i d (mu^d - 1)^(k-1) / (B(k,k) mu^(d(2k-1)+1)), multiplied out in long double.
long double density_product_log(const NeighborRatios& r, long double d) {
    const long double k = r.k;
    const long double beta = std::tgamma(k) * std::tgamma(k) / std::tgamma(2 * k);
    long double log_prod = 0;
    for (Index i = 0; i < r.n(); ++i) {
        const long double mu = r.mu(i);
        const long double f = d * std::pow(std::pow(mu, d) - 1, k - 1) / (beta * std::pow(mu, d * (2 * k - 1) + 1));
        log_prod += std::log(f);
    }
    return log_prod;
}

Matrix manifold(Index dim, Index ambient, std::uint64_t seed, ManifoldKind kind = ManifoldKind::uniform_cube, Index n = 1000) {
    ManifoldSpec spec;
    spec.seed = seed;
    spec.points = n;
    spec.true_dim = dim;
    spec.ambient_dim = ambient;
    spec.kind = kind;
    return gen_manifold(spec).points;
}

}  // namespace

TEST(Knn, HandDistancesOnALine) {
    Matrix pts(3, 1);
    pts << 0, 1, 3;
    const auto nd = knn_distances(pts, 2);
    EXPECT_EQ(nd.dist(0, 0), 1.0);
    EXPECT_EQ(nd.dist(0, 1), 3.0);
    EXPECT_EQ(nd.dist(2, 0), 2.0);
    EXPECT_EQ(nd.dist(2, 1), 3.0);
}

TEST(Knn, GridMatchesBruteForceOracle) {
    Matrix pts(36, 2);
    for (Index i = 0; i < 36; ++i) pts.row(i) << static_cast<double>(i % 6), 1.5 * static_cast<double>(i / 6);
    const auto nd = knn_distances(pts, 6);
    for (Index i = 0; i < 36; ++i) {
        std::vector<double> all;
        for (Index j = 0; j < 36; ++j)
            if (j != i) all.push_back(std::sqrt((pts.row(i) - pts.row(j)).squaredNorm()));
        std::sort(all.begin(), all.end());
        for (Index r = 0; r < 6; ++r) ASSERT_EQ(nd.dist(i, r), all[static_cast<std::size_t>(r)]);
    }
}

TEST(Knn, DuplicatesAreDroppedWithAWarning) {
    Matrix pts(5, 2);
    pts << 0, 0, 1, 0, 0, 1, 1, 0, 3, 3;
    testutil::WarningCapture warnings;
    const auto nd = knn_distances(pts, 2);
    EXPECT_EQ(nd.duplicates_dropped, 1);
    EXPECT_EQ(nd.dist.rows(), 4);
    EXPECT_EQ(nd.kept, (std::vector<Index>{0, 1, 2, 4}));
    EXPECT_TRUE(warnings.contains("duplicate"));
}

TEST(Knn, TooFewDistinctPoints) {
    Matrix pts(4, 1);
    pts << 0, 1, 1, 2;
    testutil::WarningCapture warnings;
    EXPECT_THROW(knn_distances(pts, 3), std::invalid_argument);
}

TEST(GrideLoglik, TwoNnHandValue) {
    const double e = std::exp(1.0);
    EXPECT_NEAR(gride_loglik(ratios(1, {e, e}), 1.0), -4.0, 1e-14);
    EXPECT_THROW(gride_loglik(ratios(1, {e}), 0.0), std::invalid_argument);
}

TEST(GrideLoglik, MatchesTheDensityProductForLargerK) {
    Rng rng(1);
    for (int k : {2, 3, 5}) {
        std::vector<double> mu;
        for (int i = 0; i < 40; ++i) mu.push_back(1.0 + 2.0 * rng.uniform() + 1e-3);
        const auto r = ratios(k, mu);
        for (double d : {0.5, 1.0, 2.5, 7.0})
            EXPECT_NEAR(gride_loglik(r, d), static_cast<double>(density_product_log(r, d)), 1e-9 * std::max(1.0, std::abs(gride_loglik(r, d))));
    }
}

TEST(GrideLoglik, DerivativeMatchesFiniteDifferences) {
    Rng rng(2);
    std::vector<double> mu;
    for (int i = 0; i < 50; ++i) mu.push_back(1.05 + rng.uniform());
    for (int k : {1, 2, 8}) {
        const auto r = ratios(k, mu);
        for (double d : {0.7, 2.0, 5.0}) {
            const double h = 1e-5;
            const double fd = (gride_loglik(r, d + h) - gride_loglik(r, d - h)) / (2 * h);
            EXPECT_NEAR(gride_loglik_derivative(r, d), fd, 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(GrideMle, TwoNnClosedFormOnRandomSets) {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> mu;
        const int n = 5 + static_cast<int>(rng.below(200));
        double sum_log = 0.0;
        for (int i = 0; i < n; ++i) {
            mu.push_back(1.0 + 3.0 * rng.uniform() + 1e-6);
            sum_log += std::log(mu.back());
        }
        const double closed = n / sum_log;
        if (closed >= 50.0) continue;
        EXPECT_NEAR(gride_mle(ratios(1, mu), 50.0).d_hat, closed, 1e-6);
    }
}

TEST(GrideMle, UnitSumOfLogsGivesOne) {
    const double e = std::exp(1.0);
    EXPECT_NEAR(gride_mle(ratios(1, {e, e, e}), 10.0).d_hat, 1.0, 1e-6);
}

TEST(GrideMle, BoundaryIsFlaggedWithAWarning) {
    testutil::WarningCapture warnings;
    const auto est = gride_mle(ratios(1, {1.0001, 1.0002}), 3.0);
    EXPECT_TRUE(est.at_boundary);
    EXPECT_EQ(est.d_hat, 3.0);
    EXPECT_TRUE(warnings.contains("boundary"));
}

TEST(GrideMle, MatchesTwoNnOracleOnPoints) {
    const Matrix pts = manifold(3, 10, 4, ManifoldKind::gaussian, 400);
    EXPECT_NEAR(gride(pts, 1).d_hat, oracle::twonn_closed_form(pts), 1e-6);
}

TEST(GrideMle, TiedRatiosAreDroppedForLargerK) {
    Matrix pts(9, 2);  // 3x3 lattice: the center's four nearest neighbors are all at distance 1
    for (Index i = 0; i < 9; ++i) pts.row(i) << static_cast<double>(i / 3), static_cast<double>(i % 3);
    testutil::WarningCapture warnings;
    const auto r = neighbor_ratios(knn_distances(pts, 4), 2);
    for (Index i = 0; i < r.n(); ++i) EXPECT_GT(r.mu(i), 1.0);
    EXPECT_EQ(r.n(), 8);
    EXPECT_EQ(neighbor_ratios(knn_distances(pts, 4), 1).n(), 9);
    EXPECT_TRUE(warnings.contains("tied"));
}

TEST(GrideMle, SquareInFiftyDimensions) {
    const Matrix pts = manifold(2, 50, 5);
    for (int k : {1, 2, 4, 8}) {
        const double d = gride(pts, k).d_hat;
        EXPECT_GE(d, 1.7) << k;
        EXPECT_LE(d, 2.3) << k;
    }
}

TEST(GrideMle, FiveDimensionalGaussian) {
    const Matrix pts = manifold(5, 50, 6, ManifoldKind::gaussian);
    for (int k : {1, 2, 4, 8}) {
        const double d = gride(pts, k).d_hat;
        EXPECT_GE(d, 4.2) << k;
        EXPECT_LE(d, 5.8) << k;
    }
}

TEST(GrideMle, ScaleAndRotationInvariance) {
    const Matrix pts = manifold(3, 8, 7, ManifoldKind::gaussian, 300);
    Rng rng(8);
    const Matrix rotated = pts * random_orthogonal(8, rng);
    for (int k : {1, 4}) {
        const double base = gride(pts, k).d_hat;
        EXPECT_NEAR(gride(Matrix(pts * 13.7), k).d_hat, base, 1e-9);
        EXPECT_NEAR(gride(rotated, k).d_hat, base, 1e-6);
    }
}

TEST(SelectK, PlateauRule) {
    // Strictly decreasing with a small first step: plateau at k=1.
    auto sel = choose_plateau_k({{1, 5.0, 0, false}, {2, 4.9, 0, false}, {4, 4.0, 0, false}}, 0.05);
    EXPECT_EQ(sel.k_star, 1);
    EXPECT_TRUE(sel.plateau_found);
    // Strictly decreasing with large steps: argmax fallback, no plateau.
    sel = choose_plateau_k({{1, 5.0, 0, false}, {2, 4.0, 0, false}, {4, 3.0, 0, false}}, 0.05);
    EXPECT_EQ(sel.k_star, 1);
    EXPECT_FALSE(sel.plateau_found);
    // Rising then stable: the highest plateau wins.
    sel = choose_plateau_k({{1, 3.0, 0, false}, {2, 3.05, 0, false}, {4, 6.0, 0, false}, {8, 6.1, 0, false}, {16, 9.0, 0, false}}, 0.05);
    EXPECT_EQ(sel.k_star, 4);
    EXPECT_DOUBLE_EQ(sel.d_hat, 6.0);
    EXPECT_TRUE(sel.profile[0].plateau);
    EXPECT_FALSE(sel.profile[1].plateau);
    EXPECT_FALSE(sel.profile[4].plateau);
}

TEST(SelectK, LayerMeanProfile) {
    const auto a = choose_plateau_k({{1, 2.0, 0, false}, {2, 4.0, 0, false}, {4, 4.1, 0, false}}, 0.05);
    const auto b = choose_plateau_k({{1, 4.0, 0, false}, {2, 6.0, 0, false}, {4, 6.1, 0, false}}, 0.05);
    const auto mean = select_k_layer_mean({a, b});
    EXPECT_EQ(mean.k_star, 2);
    EXPECT_DOUBLE_EQ(mean.d_hat, 5.0);
    const auto c = choose_plateau_k({{1, 2.0, 0, false}}, 0.05);
    EXPECT_THROW(select_k_layer_mean({a, c}), std::invalid_argument);
}

TEST(SelectK, FlatProfileOnUniformSquare) {
    const auto sel = select_k(manifold(2, 10, 9, ManifoldKind::uniform_cube, 1500), {1, 2, 4, 8, 16});
    EXPECT_NEAR(sel.d_hat, 2.0, 0.3);
    for (const auto& row : sel.profile)
        if (row.plateau) {
            EXPECT_NEAR(row.d_hat, 2.0, 0.3);
        }
}

TEST(SelectK, GridLargerThanHalfTheSampleIsAnError) {
    EXPECT_THROW(select_k(manifold(2, 5, 10, ManifoldKind::uniform_cube, 100)), std::invalid_argument);
}

TEST(IdSeries, TracksARampingDimension) {
    testutil::TempDir dir("idseries");
    std::vector<ManifestEntry> entries;
    const std::vector<Index> dims{2, 4, 6, 8};
    for (std::size_t c = 0; c < dims.size(); ++c) {
        const std::string name = "a" + std::to_string(c) + ".amx";
        write_matrix(manifold(dims[c], 20, 20 + c, ManifoldKind::gaussian, 1500), dir / name);
        entries.push_back({name, "c" + std::to_string(c), 100 * (c + 1), 3, EntryKind::activation, "stim", SplitKind::test, ""});
    }
    IdConfig cfg;
    cfg.k_grid = {1, 2, 4};
    const auto series = id_series(Manifest(entries, dir.path()), 3, cfg);
    ASSERT_EQ(series.d_hat.size(), dims.size());
    const auto v = series.d_hat.values();
    for (std::size_t c = 0; c < dims.size(); ++c) {
        EXPECT_NEAR(v[c], static_cast<double>(dims[c]), 0.2 * static_cast<double>(dims[c])) << c;
        if (c > 0) {
            EXPECT_GT(v[c], v[c - 1]);
        }
    }
}

TEST(IdSeries, ConstantActivationsGiveAConstantSeries) {
    testutil::TempDir dir("idconst");
    write_matrix(manifold(3, 6, 30, ManifoldKind::gaussian, 300), dir / "a.amx");
    std::vector<ManifestEntry> entries;
    for (int c = 0; c < 3; ++c)
        entries.push_back({"a.amx", "c" + std::to_string(c), static_cast<std::uint64_t>(10 + c), 1, EntryKind::activation, "s", SplitKind::test, ""});
    IdConfig cfg;
    cfg.k_grid = {1, 2, 4};
    const auto v = id_series(Manifest(entries, dir.path()), 1, cfg).d_hat.values();
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0], v[1]);
    EXPECT_EQ(v[1], v[2]);
    EXPECT_THROW(id_series(Manifest(entries, dir.path()), 2, cfg), DataError);
}

TEST(IdSeries, SubsampleIsSeededAndSorted) {
    const auto a = subsample_rows(100, 10, 4), b = subsample_rows(100, 10, 4);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(subsample_rows(5, 0, 1).size(), 5u);
}
