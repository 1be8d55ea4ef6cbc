#ifndef CKPTSCOPE_STATS_HPP
#define CKPTSCOPE_STATS_HPP

#include "parallel.hpp"
#include "rng.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace ckptscope {

struct Correlation {
    double r = 0.0;
    bool degenerate = false;
};

/// Sample Pearson correlation (two-pass). Zero variance in either input gives r = 0, degenerate.
template <typename X, typename Y>
Correlation pearson(const Eigen::DenseBase<X>& x, const Eigen::DenseBase<Y>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 samples");
    const Index n = x.size();
    double mx = 0.0, my = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double a = x.derived().coeff(i), b = y.derived().coeff(i);
        if (!std::isfinite(a) || !std::isfinite(b)) throw NumericalError("pearson: non-finite input");
        mx += a;
        my += b;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double a = x.derived().coeff(i) - mx, b = y.derived().coeff(i) - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

inline Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
    using Map = Eigen::Map<const Eigen::VectorXd>;
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    return pearson(Map(x.data(), static_cast<Index>(x.size())), Map(y.data(), static_cast<Index>(y.size())));
}

/// Column-by-column Pearson r between two same-shape matrices. Degenerate columns get r = 0.
inline Vector column_correlations(const Matrix& a, const Matrix& b, std::vector<bool>* degenerate = nullptr) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("column_correlations: shape mismatch");
    Vector r(a.cols());
    if (degenerate) degenerate->assign(static_cast<std::size_t>(a.cols()), false);
    for (Index j = 0; j < a.cols(); ++j) {
        const auto c = pearson(a.col(j), b.col(j));
        r(j) = c.r;
        if (degenerate) (*degenerate)[static_cast<std::size_t>(j)] = c.degenerate;
    }
    return r;
}

struct PermConfig {
    Index block_len = 10;
    int n_perm = 1000;
    std::uint64_t seed = 0;
    double alpha = 0.05;  // q threshold for the significance mask
};

struct SignificanceResult {
    Vector r;
    Vector p;
    Vector q;
    std::vector<bool> significant;
    std::vector<bool> degenerate;
};

/// Block order for one permutation draw: block b covers [b*len, min(T, (b+1)*len)).
inline std::vector<Index> block_permutation(Index n_samples, Index block_len, std::uint64_t draw_seed) {
    const Index n_blocks = (n_samples + block_len - 1) / block_len;
    auto blocks = iota_indices(n_blocks);
    Rng rng(draw_seed);
    rng.shuffle(blocks);
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(n_samples));
    for (Index b : blocks)
        for (Index t = b * block_len; t < std::min(n_samples, (b + 1) * block_len); ++t) rows.push_back(t);
    return rows;
}

/// One-sided blockwise permutation test of column correlations between pred and meas.
///
/// Every draw reorders the blocks of `meas` with one permutation shared by all targets;
/// draw i uses seed derive_seed(cfg.seed, i), so results do not depend on the worker count.
/// p = (1 + #{r_null >= r_obs}) / (1 + n_perm). Zero-variance targets get p = 1 and a degenerate flag.
inline SignificanceResult block_permutation_pvalues(const Matrix& pred, const Matrix& meas, const PermConfig& cfg) {
    if (pred.rows() != meas.rows() || pred.cols() != meas.cols())
        throw std::invalid_argument("block_permutation_pvalues: shape mismatch");
    if (cfg.block_len < 1) throw std::invalid_argument("block_permutation_pvalues: block_len must be >= 1");
    if (cfg.n_perm < 100) throw std::invalid_argument("block_permutation_pvalues: n_perm must be >= 100");
    const Index T = pred.rows(), V = pred.cols();
    if (T < 2 * cfg.block_len)
        throw std::invalid_argument("block_permutation_pvalues: need at least two blocks (T >= 2*block_len)");
    require_finite(pred, "predictions");
    require_finite(meas, "measurements");

    // Unit-norm centered columns: r = dot product.
    auto normalize = [](const Matrix& m, std::vector<bool>& flat) {
        Matrix z = m.rowwise() - m.colwise().mean();
        flat.assign(static_cast<std::size_t>(m.cols()), false);
        for (Index j = 0; j < z.cols(); ++j) {
            const double norm = z.col(j).norm();
            if (norm <= 0.0) {
                flat[static_cast<std::size_t>(j)] = true;
                z.col(j).setZero();
            } else {
                z.col(j) /= norm;
            }
        }
        return z;
    };
    std::vector<bool> flat_pred, flat_meas;
    const Matrix zp = normalize(pred, flat_pred);
    const Matrix zm = normalize(meas, flat_meas);

    SignificanceResult res;
    res.r = (zp.cwiseProduct(zm)).colwise().sum().transpose();
    res.degenerate.resize(static_cast<std::size_t>(V));
    for (Index v = 0; v < V; ++v) {
        const auto vi = static_cast<std::size_t>(v);
        res.degenerate[vi] = flat_pred[vi] || flat_meas[vi];
        if (res.degenerate[vi]) res.r(v) = 0.0;
        res.r(v) = std::clamp(res.r(v), -1.0, 1.0);
    }

    const auto n_perm = static_cast<std::size_t>(cfg.n_perm);
    const auto workers = static_cast<std::size_t>(std::max(1, thread_count()));
    std::vector<std::vector<std::int64_t>> partial(std::min(workers, n_perm),
                                                   std::vector<std::int64_t>(static_cast<std::size_t>(V), 0));
    const std::size_t chunk = (n_perm + partial.size() - 1) / partial.size();
    parallel_for(partial.size(), [&](std::size_t wb, std::size_t we) {
        Matrix shuffled(T, V);
        for (std::size_t w = wb; w < we; ++w) {
            auto& counts = partial[w];
            for (std::size_t draw = w * chunk; draw < std::min(n_perm, (w + 1) * chunk); ++draw) {
                const auto rows = block_permutation(T, cfg.block_len, derive_seed(cfg.seed, draw));
                for (Index t = 0; t < T; ++t) shuffled.row(t) = zm.row(rows[static_cast<std::size_t>(t)]);
                const Eigen::RowVectorXd null_r = zp.cwiseProduct(shuffled).colwise().sum();
                for (Index v = 0; v < V; ++v)
                    if (null_r(v) >= res.r(v)) ++counts[static_cast<std::size_t>(v)];
            }
        }
    });

    res.p.resize(V);
    for (Index v = 0; v < V; ++v) {
        std::int64_t exceed = 0;
        for (const auto& c : partial) exceed += c[static_cast<std::size_t>(v)];
        res.p(v) = res.degenerate[static_cast<std::size_t>(v)]
                       ? 1.0
                       : static_cast<double>(1 + exceed) / static_cast<double>(1 + cfg.n_perm);
    }
    return res;
}

/// Benjamini-Hochberg step-up adjusted values: q_(i) = min_{j>=i} m p_(j) / j, clipped to 1.
inline Vector bh_fdr(const Vector& p) {
    const Index m = p.size();
    for (Index i = 0; i < m; ++i)
        if (!(p(i) > 0.0 && p(i) <= 1.0)) throw std::invalid_argument("bh_fdr: p-values must lie in (0, 1]");
    auto order = iota_indices(m);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return p(a) < p(b); });
    Vector q(m);
    double running = 1.0;
    for (Index rank = m; rank >= 1; --rank) {
        const Index idx = order[static_cast<std::size_t>(rank - 1)];
        running = std::min(running, static_cast<double>(m) * p(idx) / static_cast<double>(rank));
        q(idx) = running;
    }
    return q;
}

/// Fill q and the significance mask (q <= alpha, never for degenerate targets).
inline void apply_fdr(SignificanceResult& res, double alpha) {
    res.q = bh_fdr(res.p);
    res.significant.assign(static_cast<std::size_t>(res.q.size()), false);
    for (Index v = 0; v < res.q.size(); ++v) {
        const auto vi = static_cast<std::size_t>(v);
        const bool degenerate = vi < res.degenerate.size() && res.degenerate[vi];
        res.significant[vi] = !degenerate && res.q(v) <= alpha;
    }
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_STATS_HPP
