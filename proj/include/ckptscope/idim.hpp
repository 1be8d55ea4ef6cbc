#ifndef CKPTSCOPE_IDIM_HPP
#define CKPTSCOPE_IDIM_HPP

// GRIDE intrinsic-dimension estimation. For the ratio mu = r_{2k} / r_k the density is the
// generalized Pareto form
//     f(mu) = d (mu^d - 1)^{k-1} / (B(k, k) mu^{d(2k-1)+1}),
// which reduces to TwoNN (f = d mu^{-d-1}) at k = 1. Writing (mu^{d-1})^{k-1} in place of
// (mu^d - 1)^{k-1} would make the maximizer closed-form; that variant is not implemented.

#include "encoding.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "series.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ckptscope {

struct NeighborDistances {
    Matrix dist;               // n_kept x max_rank, ascending per row
    std::vector<Index> kept;   // original row index of each kept point
    Index duplicates_dropped = 0;
};

/// Row indices of the first occurrence of each distinct point.
inline std::vector<Index> unique_rows(const Matrix& points) {
    auto order = iota_indices(points.rows());
    auto less = [&](Index a, Index b) {
        for (Index j = 0; j < points.cols(); ++j)
            if (points(a, j) != points(b, j)) return points(a, j) < points(b, j);
        return a < b;
    };
    std::sort(order.begin(), order.end(), less);
    std::vector<Index> keep;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && points.row(order[i]) == points.row(order[i - 1])) continue;
        keep.push_back(order[i]);
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

/// Exact brute-force Euclidean neighbor distances r_{i,1..max_rank}, self excluded,
/// ties broken by point index. Duplicate points are dropped (with a warning) first.
inline NeighborDistances knn_distances(const Matrix& points, Index max_rank) {
    if (max_rank < 1) throw std::invalid_argument("knn_distances: max_rank must be >= 1");
    require_finite(points, "points");
    NeighborDistances out;
    out.kept = unique_rows(points);
    out.duplicates_dropped = points.rows() - static_cast<Index>(out.kept.size());
    if (out.duplicates_dropped > 0)
        warn("knn_distances: dropped " + std::to_string(out.duplicates_dropped) + " duplicate points");
    const Index n = static_cast<Index>(out.kept.size());
    if (n <= max_rank)
        throw std::invalid_argument("knn_distances: need more than " + std::to_string(max_rank) + " distinct points, have " +
                                    std::to_string(n));

    // Column-major D x n so each point is contiguous.
    Matrix pts(points.cols(), n);
    for (Index i = 0; i < n; ++i) pts.col(i) = points.row(out.kept[static_cast<std::size_t>(i)]).transpose();

    out.dist.resize(n, max_rank);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t qb, std::size_t qe) {
        std::vector<std::pair<double, Index>> cand(static_cast<std::size_t>(n - 1));
        for (auto q = static_cast<Index>(qb); q < static_cast<Index>(qe); ++q) {
            std::size_t c = 0;
            for (Index j = 0; j < n; ++j) {
                if (j == q) continue;
                cand[c++] = {(pts.col(q) - pts.col(j)).squaredNorm(), j};
            }
            std::partial_sort(cand.begin(), cand.begin() + max_rank, cand.end());
            for (Index r = 0; r < max_rank; ++r) out.dist(q, r) = std::sqrt(cand[static_cast<std::size_t>(r)].first);
        }
    });
    return out;
}

struct NeighborRatios {
    int k = 1;
    Vector mu;  // r_{2k} / r_k per point
    Index n() const { return mu.size(); }
};

/// mu_i = r_{i,2k} / r_{i,k}. For k > 1, points with mu = 1 (tied distances) are dropped with a warning.
inline NeighborRatios neighbor_ratios(const NeighborDistances& nd, int k) {
    if (k < 1) throw std::invalid_argument("neighbor_ratios: k must be >= 1");
    if (nd.dist.cols() < 2 * k) throw std::invalid_argument("neighbor_ratios: distances do not reach rank 2k");
    std::vector<double> mu;
    Index dropped = 0;
    for (Index i = 0; i < nd.dist.rows(); ++i) {
        const double m = nd.dist(i, 2 * k - 1) / nd.dist(i, k - 1);
        if (k > 1 && !(m > 1.0)) {
            ++dropped;
            continue;
        }
        mu.push_back(m);
    }
    if (dropped > 0) warn("neighbor_ratios: dropped " + std::to_string(dropped) + " points with tied distances at k=" + std::to_string(k));
    NeighborRatios out;
    out.k = k;
    out.mu = Eigen::Map<Vector>(mu.data(), static_cast<Index>(mu.size()));
    return out;
}

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// L(d) = n log d + (k-1) sum log(mu^d - 1) - (d(2k-1)+1) sum log mu - n log B(k,k).
inline double gride_loglik(const NeighborRatios& ratios, double d) {
    if (!(d > 0.0)) throw std::invalid_argument("gride_loglik: d must be positive");
    const double k = ratios.k;
    const auto n = static_cast<double>(ratios.n());
    double sum_log = 0.0, sum_pow = 0.0;
    for (Index i = 0; i < ratios.n(); ++i) {
        const double lm = std::log(ratios.mu(i));
        sum_log += lm;
        if (ratios.k > 1) {
            if (!(lm > 0.0)) throw std::invalid_argument("gride_loglik: mu must exceed 1 when k > 1");
            sum_pow += std::log(std::expm1(d * lm));
        }
    }
    return n * std::log(d) + (k - 1.0) * sum_pow - (d * (2.0 * k - 1.0) + 1.0) * sum_log - n * log_beta(k, k);
}

/// dL/dd; positive left of the maximizer since L is concave in d.
inline double gride_loglik_derivative(const NeighborRatios& ratios, double d) {
    const double k = ratios.k;
    double sum_log = 0.0, sum_term = 0.0;
    for (Index i = 0; i < ratios.n(); ++i) {
        const double lm = std::log(ratios.mu(i));
        sum_log += lm;
        if (ratios.k > 1) sum_term += lm / -std::expm1(-d * lm);
    }
    return static_cast<double>(ratios.n()) / d + (k - 1.0) * sum_term - (2.0 * k - 1.0) * sum_log;
}

struct IdEstimate {
    double d_hat = 0.0;
    int k_used = 1;
    double loglik_at_max = 0.0;
    Index n_used = 0;
    bool at_boundary = false;
};

inline constexpr double kMinDimension = 1e-3;

/// Golden-section maximization of the GRIDE likelihood over d in (1e-3, d_max].
inline IdEstimate gride_mle(const NeighborRatios& ratios, double d_max, double tolerance = 1e-6) {
    if (ratios.n() < 1) throw std::invalid_argument("gride_mle: no ratios");
    if (!(d_max > kMinDimension)) throw std::invalid_argument("gride_mle: d_max must exceed 1e-3");
    for (Index i = 0; i < ratios.n(); ++i)
        if (!std::isfinite(ratios.mu(i)) || ratios.mu(i) < 1.0) throw std::invalid_argument("gride_mle: invalid ratio");

    IdEstimate est;
    est.k_used = ratios.k;
    est.n_used = ratios.n();
    if (gride_loglik_derivative(ratios, d_max) >= 0.0) {
        warn("gride_mle: likelihood still increasing at d_max=" + format_double(d_max) + "; returning the boundary");
        est.d_hat = d_max;
        est.at_boundary = true;
        est.loglik_at_max = gride_loglik(ratios, d_max);
        return est;
    }
    if (gride_loglik_derivative(ratios, kMinDimension) <= 0.0) {
        warn("gride_mle: likelihood decreasing at the lower bracket end; returning the boundary");
        est.d_hat = kMinDimension;
        est.at_boundary = true;
        est.loglik_at_max = gride_loglik(ratios, kMinDimension);
        return est;
    }

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = kMinDimension, b = d_max;
    double c = b - inv_phi * (b - a), e = a + inv_phi * (b - a);
    double fc = gride_loglik(ratios, c), fe = gride_loglik(ratios, e);
    while (b - a > tolerance) {
        if (fc >= fe) {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = gride_loglik(ratios, c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = gride_loglik(ratios, e);
        }
    }
    // Near the optimum L is too flat for value comparisons to resolve d much below ~1e-6, so the
    // golden-section bracket is finished by bisection on the sign of dL/dd (monotone for concave L).
    double lo = std::max(kMinDimension, a - 4.0 * tolerance), hi = std::min(d_max, b + 4.0 * tolerance);
    if (gride_loglik_derivative(ratios, lo) > 0.0 && gride_loglik_derivative(ratios, hi) < 0.0) {
        for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (gride_loglik_derivative(ratios, mid) > 0.0 ? lo : hi) = mid;
        }
        est.d_hat = 0.5 * (lo + hi);
    } else {
        est.d_hat = 0.5 * (a + b);
    }
    est.loglik_at_max = gride_loglik(ratios, est.d_hat);
    return est;
}

inline IdEstimate gride(const NeighborDistances& nd, int k, double d_max) { return gride_mle(neighbor_ratios(nd, k), d_max); }

inline IdEstimate gride(const Matrix& points, int k) {
    return gride(knn_distances(points, 2 * k), k, static_cast<double>(points.cols()));
}

struct KProfileRow {
    int k = 1;
    double d_hat = 0.0;
    double loglik = 0.0;
    bool plateau = false;  // relative change to the next grid scale is below the threshold
};

struct KSelection {
    std::vector<KProfileRow> profile;
    int k_star = 1;
    double d_hat = 0.0;
    bool plateau_found = false;
};

/// Among scales whose successor changes d_hat by less than `threshold` (relative), pick the one with
/// the largest d_hat. Without any plateau fall back to the overall argmax and report plateau_found = false.
inline KSelection choose_plateau_k(std::vector<KProfileRow> profile, double threshold) {
    if (profile.empty()) throw std::invalid_argument("choose_plateau_k: empty profile");
    KSelection sel;
    for (std::size_t i = 0; i + 1 < profile.size(); ++i)
        profile[i].plateau = std::abs(profile[i + 1].d_hat - profile[i].d_hat) / profile[i].d_hat < threshold;
    std::size_t best = profile.size();
    for (std::size_t i = 0; i < profile.size(); ++i)
        if (profile[i].plateau && (best == profile.size() || profile[i].d_hat > profile[best].d_hat)) best = i;
    sel.plateau_found = best != profile.size();
    if (!sel.plateau_found) {
        best = 0;
        for (std::size_t i = 1; i < profile.size(); ++i)
            if (profile[i].d_hat > profile[best].d_hat) best = i;
    }
    sel.k_star = profile[best].k;
    sel.d_hat = profile[best].d_hat;
    sel.profile = std::move(profile);
    return sel;
}

inline std::vector<int> default_k_grid() { return {1, 2, 4, 8, 16, 32, 64}; }

inline KSelection select_k(const Matrix& points, const std::vector<int>& k_grid = default_k_grid(), double threshold = 0.05) {
    if (k_grid.empty()) throw std::invalid_argument("select_k: empty k grid");
    const int k_max = *std::max_element(k_grid.begin(), k_grid.end());
    if (points.rows() <= 2 * static_cast<Index>(k_max))
        throw std::invalid_argument("select_k: k grid reaches " + std::to_string(k_max) + " but only " +
                                    std::to_string(points.rows()) + " points");
    const auto nd = knn_distances(points, 2 * k_max);
    std::vector<KProfileRow> profile;
    for (int k : k_grid) {
        const auto est = gride(nd, k, static_cast<double>(points.cols()));
        profile.push_back({k, est.d_hat, est.loglik_at_max, false});
    }
    return choose_plateau_k(std::move(profile), threshold);
}

/// Same rule applied to the mean d_hat profile across layers (profiles must share the k grid).
inline KSelection select_k_layer_mean(const std::vector<KSelection>& layers, double threshold = 0.05) {
    if (layers.empty()) throw std::invalid_argument("select_k_layer_mean: no layers");
    std::vector<KProfileRow> mean = layers.front().profile;
    for (auto& row : mean) row.d_hat = row.loglik = 0.0;
    for (const auto& l : layers) {
        if (l.profile.size() != mean.size()) throw std::invalid_argument("select_k_layer_mean: k grids differ");
        for (std::size_t i = 0; i < mean.size(); ++i) {
            if (l.profile[i].k != mean[i].k) throw std::invalid_argument("select_k_layer_mean: k grids differ");
            mean[i].d_hat += l.profile[i].d_hat / static_cast<double>(layers.size());
            mean[i].loglik += l.profile[i].loglik / static_cast<double>(layers.size());
        }
    }
    return choose_plateau_k(std::move(mean), threshold);
}

struct IdConfig {
    std::vector<int> k_grid = default_k_grid();
    double plateau_threshold = 0.05;
    Index subsample = 0;  // 0 keeps every row
    std::uint64_t seed = 0;
    std::vector<std::string> groups;  // restrict to these activation group labels; empty = all
};

struct IdSeries {
    std::vector<CheckpointRef> checkpoints;
    std::vector<KSelection> selections;
    CheckpointSeries d_hat{"idim", {}};
};

/// Rows kept by a seeded subsample (identical across checkpoints since rows are aligned).
inline std::vector<Index> subsample_rows(Index n, Index keep, std::uint64_t seed) {
    auto rows = iota_indices(n);
    if (keep <= 0 || keep >= n) return rows;
    Rng rng(seed);
    rng.shuffle(rows);
    rows.resize(static_cast<std::size_t>(keep));
    std::sort(rows.begin(), rows.end());
    return rows;
}

inline IdSeries id_series(const Manifest& manifest, int layer, const IdConfig& cfg) {
    IdSeries out;
    for (const auto& c : manifest.checkpoints()) {
        auto entries = manifest.select([&](const ManifestEntry& e) {
            return e.kind == EntryKind::activation && e.layer == layer && e.checkpoint_id == c.checkpoint_id &&
                   (cfg.groups.empty() || std::find(cfg.groups.begin(), cfg.groups.end(), e.group_label) != cfg.groups.end());
        });
        if (entries.empty()) continue;
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::tie(a.split, a.group_label) < std::tie(b.split, b.group_label);
        });
        const auto stacked = stack_entries(manifest, entries, false);
        const Matrix pts = select_rows(stacked.data, subsample_rows(stacked.data.rows(), cfg.subsample, cfg.seed));
        auto sel = select_k(pts, cfg.k_grid, cfg.plateau_threshold);
        out.d_hat.points.push_back({c.checkpoint_id, c.training_tokens, sel.d_hat});
        out.checkpoints.push_back(c);
        out.selections.push_back(std::move(sel));
    }
    if (out.checkpoints.size() < 2)
        throw DataError("id_series: need at least 2 checkpoints with activations at layer " + std::to_string(layer));
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_IDIM_HPP
