#ifndef CKPTSCOPE_DYNAMICS_HPP
#define CKPTSCOPE_DYNAMICS_HPP

#include "parallel.hpp"
#include "series.hpp"
#include "stats.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace ckptscope {

enum class XcorrMode { flattened, per_neuron_mean };

inline XcorrMode parse_xcorr_mode(std::string_view s) {
    if (s == "flattened") return XcorrMode::flattened;
    if (s == "per_neuron_mean") return XcorrMode::per_neuron_mean;
    throw std::invalid_argument("unknown xcorr mode '" + std::string(s) + "'");
}

namespace detail {

inline Correlation flattened_correlation(const Matrix& a, const Matrix& b) {
    using Map = Eigen::Map<const Vector>;
    return pearson(Map(a.data(), a.size()), Map(b.data(), b.size()));
}

inline Correlation per_neuron_mean_correlation(const Matrix& a, const Matrix& b) {
    double sum = 0.0;
    Index used = 0;
    for (Index j = 0; j < a.cols(); ++j) {
        const auto c = pearson(a.col(j), b.col(j));
        if (c.degenerate) continue;
        sum += c.r;
        ++used;
    }
    if (used == 0) return {0.0, true};
    return {sum / static_cast<double>(used), false};
}

}  // namespace detail

/// C x C matrix of activation correlations between checkpoints. `flattened` correlates the whole
/// mean-centered matrices; `per_neuron_mean` averages per-neuron correlations over non-constant neurons.
/// Symmetric by construction; the diagonal is exactly 1 unless a matrix is constant (then 0).
inline Matrix xckpt_correlation(const std::vector<Matrix>& acts, XcorrMode mode = XcorrMode::flattened) {
    if (acts.empty()) throw std::invalid_argument("xckpt_correlation: no matrices");
    for (const auto& m : acts) {
        if (m.rows() != acts.front().rows() || m.cols() != acts.front().cols())
            throw std::invalid_argument("xckpt_correlation: activation shapes differ");
        require_finite(m, "activations");
    }
    const auto C = static_cast<Index>(acts.size());
    Matrix out = Matrix::Zero(C, C);
    std::vector<std::pair<Index, Index>> pairs;
    for (Index a = 0; a < C; ++a)
        for (Index b = a; b < C; ++b) pairs.emplace_back(a, b);
    parallel_for(pairs.size(), [&](std::size_t pb, std::size_t pe) {
        for (std::size_t i = pb; i < pe; ++i) {
            const auto [a, b] = pairs[i];
            const auto& ma = acts[static_cast<std::size_t>(a)];
            const auto& mb = acts[static_cast<std::size_t>(b)];
            const auto c = mode == XcorrMode::flattened ? detail::flattened_correlation(ma, mb)
                                                        : detail::per_neuron_mean_correlation(ma, mb);
            out(a, b) = a == b ? (c.degenerate ? 0.0 : 1.0) : c.r;
        }
    });
    for (Index a = 0; a < C; ++a)
        for (Index b = 0; b < a; ++b) out(a, b) = out(b, a);
    return out;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double sse = 0.0;
};

/// Least-squares line through (x[i], y[i]) for i in [begin, end). One point fits exactly with slope 0.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y, std::size_t begin, std::size_t end) {
    const auto n = static_cast<double>(end - begin);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    for (std::size_t i = begin; i < end; ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        f.sse += r * r;
    }
    return f;
}

struct PhaseSegmentation {
    std::vector<std::size_t> boundaries;  // start index of segments 2..m
    std::vector<LineFit> segments;
    double sse = 0.0;
};

struct SegmentOptions {
    std::size_t segments = 3;
    std::size_t min_length = 1;
    double relative_tie_tolerance = 1e-9;  // of the total sum of squares
};

/// Exact DP minimizing the summed SSE of per-segment lines over x = log10(training_tokens).
/// Segmentations within the tie tolerance of the optimum resolve to the lexicographically earliest boundaries.
inline PhaseSegmentation segment_phases_xy(const std::vector<double>& x, const std::vector<double>& y,
                                           const SegmentOptions& opt = {}) {
    const std::size_t n = y.size(), m = opt.segments;
    if (x.size() != n) throw std::invalid_argument("segment_phases: x and y lengths differ");
    if (m < 1 || opt.min_length < 1) throw std::invalid_argument("segment_phases: invalid options");
    if (n < 2 * m || n < m * opt.min_length)
        throw std::invalid_argument("segment_phases: series of length " + std::to_string(n) + " too short for " +
                                    std::to_string(m) + " segments");
    for (double v : y)
        if (!std::isfinite(v)) throw NumericalError("segment_phases: non-finite value");

    // cost[i][j] = SSE of the segment [i, j)
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, inf));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + opt.min_length; j <= n; ++j) cost[i][j] = fit_line(x, y, i, j).sse;

    // best[s][i] = min cost of splitting [i, n) into s segments
    std::vector<std::vector<double>> best(m + 1, std::vector<double>(n + 1, inf));
    for (std::size_t i = 0; i < n; ++i) best[1][i] = cost[i][n];
    for (std::size_t s = 2; s <= m; ++s)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + opt.min_length; j < n; ++j)
                best[s][i] = std::min(best[s][i], cost[i][j] + best[s - 1][j]);

    double total_ss = 0.0;
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    for (double v : y) total_ss += (v - ym) * (v - ym);
    const double tol = opt.relative_tie_tolerance * total_ss + 1e-300;

    PhaseSegmentation seg;
    std::size_t i = 0;
    for (std::size_t s = m; s > 1; --s) {
        std::size_t pick = n;
        for (std::size_t j = i + opt.min_length; j < n; ++j)
            if (cost[i][j] + best[s - 1][j] <= best[s][i] + tol) {
                pick = j;
                break;
            }
        seg.boundaries.push_back(pick);
        seg.segments.push_back(fit_line(x, y, i, pick));
        i = pick;
    }
    seg.segments.push_back(fit_line(x, y, i, n));
    for (const auto& f : seg.segments) seg.sse += f.sse;
    return seg;
}

inline std::vector<double> log10_tokens(const CheckpointSeries& s) {
    std::vector<double> x;
    for (const auto& p : s.points) {
        if (p.training_tokens == 0) throw std::invalid_argument("segment_phases: training_tokens must be positive");
        x.push_back(std::log10(static_cast<double>(p.training_tokens)));
    }
    return x;
}

inline PhaseSegmentation segment_phases(const CheckpointSeries& series, const SegmentOptions& opt = {}) {
    series.validate();
    return segment_phases_xy(log10_tokens(series), series.values(), opt);
}

struct AlignedSeries {
    std::vector<std::string> checkpoint_ids;
    std::vector<double> a, b;
    double r = 0.0;
};

/// Inner join on checkpoint_id in the order of `a`, then Pearson r of the paired values.
inline AlignedSeries align_series(const CheckpointSeries& a, const CheckpointSeries& b) {
    std::map<std::string, double> lookup;
    for (const auto& p : b.points) lookup[p.checkpoint_id] = p.value;
    AlignedSeries out;
    for (const auto& p : a.points) {
        auto it = lookup.find(p.checkpoint_id);
        if (it == lookup.end()) continue;
        out.checkpoint_ids.push_back(p.checkpoint_id);
        out.a.push_back(p.value);
        out.b.push_back(it->second);
    }
    if (out.a.size() < 3)
        throw std::invalid_argument("align_series: need at least 3 common checkpoints, found " + std::to_string(out.a.size()));
    out.r = pearson(out.a, out.b).r;
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_DYNAMICS_HPP
