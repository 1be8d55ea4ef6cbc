#ifndef CKPTSCOPE_RIDGE_HPP
#define CKPTSCOPE_RIDGE_HPP

#include "parallel.hpp"
#include "split.hpp"
#include "stats.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

namespace ckptscope {

/// Nonnegative sample shifts applied to the feature matrix before fitting.
struct DelaySpec {
    std::vector<Index> delays{8, 9, 10};
};

/// Concatenate delayed copies of X: the block for delay d holds X[t - d] at row t (zero when t < d).
/// Blocks are ordered by ascending delay.
inline Matrix delay_embed(const Matrix& X, const DelaySpec& spec) {
    if (spec.delays.empty()) throw std::invalid_argument("delay_embed: empty delay set");
    std::vector<Index> delays(spec.delays);
    std::sort(delays.begin(), delays.end());
    delays.erase(std::unique(delays.begin(), delays.end()), delays.end());
    const Index T = X.rows(), N = X.cols();
    for (Index d : delays) {
        if (d < 0) throw std::invalid_argument("delay_embed: negative delay");
        if (d >= T) throw std::invalid_argument("delay_embed: delay " + std::to_string(d) + " >= T");
    }
    Matrix out = Matrix::Zero(T, N * static_cast<Index>(delays.size()));
    for (std::size_t b = 0; b < delays.size(); ++b) {
        const Index d = delays[b];
        out.block(d, static_cast<Index>(b) * N, T - d, N) = X.topRows(T - d);
    }
    return out;
}

/// 20 log-spaced values from 1e-3 to 1e7.
inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid(20);
    for (int i = 0; i < 20; ++i) grid[static_cast<std::size_t>(i)] = std::pow(10.0, -3.0 + 10.0 * i / 19.0);
    return grid;
}

struct RidgeOptions {
    bool center_features = true;
    bool scale_features = true;
    bool center_targets = true;
};

/// Per-feature centering/scaling learned on training rows. Zero-variance features keep scale 1.
struct Standardizer {
    Vector mean;
    Vector scale;
    std::vector<bool> constant;

    static Standardizer fit(const Matrix& X, const RidgeOptions& opt) {
        Standardizer s;
        const auto F = X.cols();
        s.mean = opt.center_features ? Vector(X.colwise().mean().transpose()) : Vector::Zero(F);
        s.scale = Vector::Ones(F);
        s.constant.assign(static_cast<std::size_t>(F), false);
        for (Index j = 0; j < F; ++j) {
            const double var = (X.col(j).array() - X.col(j).mean()).square().mean();
            const double mu = X.col(j).mean();
            if (X.col(j).maxCoeff() == X.col(j).minCoeff() || !(var > 1e-28 * mu * mu)) {
                s.constant[static_cast<std::size_t>(j)] = true;
                continue;
            }
            if (opt.scale_features) s.scale(j) = std::sqrt(var);
        }
        return s;
    }

    Matrix apply(const Matrix& X) const {
        if (X.cols() != mean.size()) throw std::invalid_argument("standardize: column count mismatch");
        Matrix out = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
        for (Index j = 0; j < out.cols(); ++j)
            if (constant[static_cast<std::size_t>(j)]) out.col(j).setZero();
        return out;
    }
};

struct RidgeFit {
    Matrix weights;        // features x targets, in standardized feature space
    Vector lambda;         // per target
    Vector feature_mean;
    Vector feature_scale;
    Vector target_mean;
};

namespace detail {

struct SvdFactors {
    Matrix U;  // T x r
    Vector s;  // r
    Matrix V;  // F x r
    double cutoff = 0.0;
};

inline SvdFactors thin_svd(const Matrix& X) {
    Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdFactors f{svd.matrixU(), svd.singularValues(), svd.matrixV(), 0.0};
    const double smax = f.s.size() > 0 ? f.s(0) : 0.0;
    f.cutoff = smax * static_cast<double>(std::max(X.rows(), X.cols())) * std::numeric_limits<double>::epsilon();
    return f;
}

/// sigma / (sigma^2 + lambda), with singular values below the cutoff dropped (pseudo-inverse at lambda = 0).
inline Vector shrink_factors(const SvdFactors& f, double lambda) {
    Vector out(f.s.size());
    for (Index i = 0; i < f.s.size(); ++i) {
        const double s = f.s(i);
        out(i) = s > f.cutoff ? s / (s * s + lambda) : 0.0;
    }
    return out;
}

inline void check_lambda(double lambda) {
    if (!std::isfinite(lambda) || lambda < 0.0) throw std::invalid_argument("ridge: lambda must be finite and >= 0");
}

}  // namespace detail

/// Per-target ridge from one thin SVD of the standardized training features:
/// W_v = V diag(s / (s^2 + lambda_v)) U^T Y_v.
inline RidgeFit fit_ridge_svd(const Matrix& X, const Matrix& Y, const Vector& lambda_per_target,
                              const RidgeOptions& opt = {}) {
    if (X.rows() != Y.rows()) throw std::invalid_argument("fit_ridge_svd: X and Y row counts differ");
    if (X.rows() < 2) throw std::invalid_argument("fit_ridge_svd: need at least 2 samples");
    if (X.cols() < 1 || Y.cols() < 1) throw std::invalid_argument("fit_ridge_svd: empty features or targets");
    if (lambda_per_target.size() != Y.cols()) throw std::invalid_argument("fit_ridge_svd: one lambda per target");
    require_finite(X, "ridge features");
    require_finite(Y, "ridge targets");
    for (Index v = 0; v < lambda_per_target.size(); ++v) detail::check_lambda(lambda_per_target(v));

    const auto scaler = Standardizer::fit(X, opt);
    RidgeFit fit;
    fit.feature_mean = scaler.mean;
    fit.feature_scale = scaler.scale;
    fit.lambda = lambda_per_target;
    fit.target_mean = opt.center_targets ? Vector(Y.colwise().mean().transpose()) : Vector::Zero(Y.cols());

    const Matrix Xs = scaler.apply(X);
    const Matrix Yc = Y.rowwise() - fit.target_mean.transpose();
    const auto svd = detail::thin_svd(Xs);
    const Matrix UtY = svd.U.transpose() * Yc;

    fit.weights = Matrix::Zero(X.cols(), Y.cols());
    std::map<double, std::vector<Index>> by_lambda;
    for (Index v = 0; v < Y.cols(); ++v) by_lambda[lambda_per_target(v)].push_back(v);
    for (const auto& [lambda, targets] : by_lambda) {
        const Vector f = detail::shrink_factors(svd, lambda);
        const Matrix W = svd.V * (f.asDiagonal() * select_cols(UtY, targets));
        for (std::size_t i = 0; i < targets.size(); ++i) fit.weights.col(targets[i]) = W.col(static_cast<Index>(i));
    }
    for (Index j = 0; j < X.cols(); ++j)
        if (scaler.constant[static_cast<std::size_t>(j)]) fit.weights.row(j).setZero();
    require_finite(fit.weights, "ridge weights");
    return fit;
}

inline RidgeFit fit_ridge_svd(const Matrix& X, const Matrix& Y, double lambda, const RidgeOptions& opt = {}) {
    return fit_ridge_svd(X, Y, Vector::Constant(Y.cols(), lambda), opt);
}

/// Yhat = ((X_new - mean) / scale) W + target_mean, using training statistics only.
inline Matrix predict(const RidgeFit& fit, const Matrix& X_new) {
    if (X_new.cols() != fit.weights.rows())
        throw std::invalid_argument("predict: expected " + std::to_string(fit.weights.rows()) + " features, got " +
                                    std::to_string(X_new.cols()));
    const Matrix Xs = (X_new.rowwise() - fit.feature_mean.transpose()).array().rowwise() /
                      fit.feature_scale.transpose().array();
    return (Xs * fit.weights).rowwise() + fit.target_mean.transpose();
}

struct LambdaSweep {
    std::vector<double> grid;
    Matrix scores;                    // grid.size() x targets, mean validation r over folds
    std::vector<std::size_t> best_index;
    Vector best_lambda;
};

/// Grouped-CV lambda selection with one thin SVD per fold shared by every lambda.
/// Each fold standardizes on its own training rows. Per target the lambda with the highest mean
/// validation correlation wins; ties go to the smaller lambda.
inline LambdaSweep sweep_lambdas_cv(const Matrix& X, const Matrix& Y, const std::vector<double>& grid,
                                    const std::vector<CvFold>& folds, const RidgeOptions& opt = {}) {
    if (X.rows() != Y.rows()) throw std::invalid_argument("sweep_lambdas_cv: X and Y row counts differ");
    if (grid.empty()) throw std::invalid_argument("sweep_lambdas_cv: empty lambda grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        detail::check_lambda(grid[i]);
        if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("sweep_lambdas_cv: grid must be ascending");
    }
    if (folds.empty()) throw std::invalid_argument("sweep_lambdas_cv: no folds");
    require_finite(X, "ridge features");
    require_finite(Y, "ridge targets");

    const Index V = Y.cols();
    const auto L = grid.size();
    LambdaSweep out;
    out.grid = grid;
    out.scores = Matrix::Zero(static_cast<Index>(L), V);

    for (const auto& fold : folds) {
        if (fold.validation.size() < 2) throw std::invalid_argument("sweep_lambdas_cv: fold with < 2 validation samples");
        if (fold.train.size() < 2) throw std::invalid_argument("sweep_lambdas_cv: fold with < 2 training samples");
        const Matrix Xtr = select_rows(X, fold.train);
        const Matrix Ytr = select_rows(Y, fold.train);
        const Matrix Yval = select_rows(Y, fold.validation);
        const auto scaler = Standardizer::fit(Xtr, opt);
        const Vector ymean = opt.center_targets ? Vector(Ytr.colwise().mean().transpose()) : Vector::Zero(V);
        const auto svd = detail::thin_svd(scaler.apply(Xtr));
        const Matrix UtY = svd.U.transpose() * (Ytr.rowwise() - ymean.transpose());
        Matrix Vs = svd.V;
        for (Index j = 0; j < Vs.rows(); ++j)
            if (scaler.constant[static_cast<std::size_t>(j)]) Vs.row(j).setZero();
        const Matrix P = scaler.apply(select_rows(X, fold.validation)) * Vs;

        Matrix fold_scores(static_cast<Index>(L), V);
        parallel_for(L, [&](std::size_t lb, std::size_t le) {
            for (std::size_t l = lb; l < le; ++l) {
                const Vector f = detail::shrink_factors(svd, grid[l]);
                const Matrix pred = (P * (f.asDiagonal() * UtY)).rowwise() + ymean.transpose();
                fold_scores.row(static_cast<Index>(l)) = column_correlations(pred, Yval).transpose();
            }
        });
        out.scores += fold_scores;
    }
    out.scores /= static_cast<double>(folds.size());

    out.best_index.assign(static_cast<std::size_t>(V), 0);
    out.best_lambda.resize(V);
    for (Index v = 0; v < V; ++v) {
        std::size_t best = 0;
        for (std::size_t l = 1; l < L; ++l)
            if (out.scores(static_cast<Index>(l), v) > out.scores(static_cast<Index>(best), v)) best = l;
        out.best_index[static_cast<std::size_t>(v)] = best;
        out.best_lambda(v) = grid[best];
    }
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_RIDGE_HPP
