#ifndef CKPTSCOPE_PROBING_HPP
#define CKPTSCOPE_PROBING_HPP

// Probing predicts neuron activations FROM the answer matrix (labels -> activations),
// scored by per-neuron correlation on held-out samples.

#include "encoding.hpp"
#include "manifest.hpp"
#include "ridge.hpp"
#include "series.hpp"
#include "stats.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace ckptscope {

struct AnswerSample {
    std::size_t choice_count = 0;
    std::size_t gold_index = 0;
};

/// S x C_max one-hot matrix of correct choices. Cells beyond a sample's choice count are padding.
struct AnswerMatrix {
    Matrix values;
    std::vector<std::size_t> choice_count;
    std::vector<std::size_t> gold_index;

    Index samples() const { return values.rows(); }
    Index max_choices() const { return values.cols(); }
    bool padded(Index s, Index c) const { return static_cast<std::size_t>(c) >= choice_count[static_cast<std::size_t>(s)]; }

    AnswerMatrix rows(const std::vector<Index>& idx) const {
        AnswerMatrix out;
        out.values = select_rows(values, idx);
        for (Index i : idx) {
            out.choice_count.push_back(choice_count[static_cast<std::size_t>(i)]);
            out.gold_index.push_back(gold_index[static_cast<std::size_t>(i)]);
        }
        return out;
    }
};

inline AnswerMatrix build_answer_matrix(const std::vector<AnswerSample>& samples, std::size_t c_max) {
    if (c_max == 0) throw std::invalid_argument("build_answer_matrix: C_max must be positive");
    AnswerMatrix a;
    a.values = Matrix::Zero(static_cast<Index>(samples.size()), static_cast<Index>(c_max));
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& smp = samples[s];
        if (smp.choice_count == 0 || smp.choice_count > c_max)
            throw std::invalid_argument("build_answer_matrix: sample " + std::to_string(s) + " has " +
                                        std::to_string(smp.choice_count) + " choices (C_max " + std::to_string(c_max) + ")");
        if (smp.gold_index >= smp.choice_count)
            throw std::invalid_argument("build_answer_matrix: gold index " + std::to_string(smp.gold_index) +
                                        " out of range for sample " + std::to_string(s));
        a.values(static_cast<Index>(s), static_cast<Index>(smp.gold_index)) = 1.0;
        a.choice_count.push_back(smp.choice_count);
        a.gold_index.push_back(smp.gold_index);
    }
    return a;
}

/// Recover an AnswerMatrix from a stored one-hot matrix (every row counts as fully unpadded).
inline AnswerMatrix answer_matrix_from_values(const Matrix& values) {
    std::vector<AnswerSample> samples;
    for (Index s = 0; s < values.rows(); ++s) {
        Index gold = -1;
        for (Index c = 0; c < values.cols(); ++c) {
            if (values(s, c) == 1.0) {
                if (gold >= 0) throw DataError("answer matrix row " + std::to_string(s) + " has several 1 entries");
                gold = c;
            } else if (values(s, c) != 0.0) {
                throw DataError("answer matrix row " + std::to_string(s) + " is not binary");
            }
        }
        if (gold < 0) throw DataError("answer matrix row " + std::to_string(s) + " has no correct choice");
        samples.push_back({static_cast<std::size_t>(values.cols()), static_cast<std::size_t>(gold)});
    }
    return build_answer_matrix(samples, static_cast<std::size_t>(values.cols()));
}

/// Shuffle under `seed`, then cut into k contiguous folds whose sizes differ by at most one.
inline std::vector<std::vector<Index>> shuffled_kfold(std::vector<Index> indices, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("shuffled_kfold: k must be >= 2");
    if (static_cast<std::size_t>(k) > indices.size())
        throw std::invalid_argument("shuffled_kfold: k exceeds the number of indices");
    Rng rng(seed);
    rng.shuffle(indices);
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
    const std::size_t n = indices.size(), base = n / static_cast<std::size_t>(k), extra = n % static_cast<std::size_t>(k);
    std::size_t at = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].assign(indices.begin() + static_cast<std::ptrdiff_t>(at), indices.begin() + static_cast<std::ptrdiff_t>(at + len));
        at += len;
    }
    return folds;
}

inline std::vector<CvFold> complement_folds(const std::vector<std::vector<Index>>& validation_sets) {
    std::vector<CvFold> out;
    for (std::size_t f = 0; f < validation_sets.size(); ++f) {
        CvFold fold;
        fold.validation = validation_sets[f];
        for (std::size_t g = 0; g < validation_sets.size(); ++g)
            if (g != f) fold.train.insert(fold.train.end(), validation_sets[g].begin(), validation_sets[g].end());
        std::sort(fold.train.begin(), fold.train.end());
        out.push_back(std::move(fold));
    }
    return out;
}

/// Largest deviation of a fold's per-label count from the uniform share, over folds and labels.
/// Exceeding one sample triggers a warning (shuffling does not guarantee balance).
inline double fold_balance_deviation(const std::vector<std::vector<Index>>& folds, const std::vector<std::string>& labels) {
    std::map<std::string, double> total;
    for (const auto& f : folds)
        for (Index i : f) total[labels.at(static_cast<std::size_t>(i))] += 1.0;
    double worst = 0.0;
    for (const auto& f : folds) {
        std::map<std::string, double> count;
        for (Index i : f) count[labels.at(static_cast<std::size_t>(i))] += 1.0;
        for (const auto& [label, n] : total)
            worst = std::max(worst, std::abs(count[label] - n / static_cast<double>(folds.size())));
    }
    if (worst > 1.0) warn("probe folds: per-subject counts deviate from uniform by " + format_double(worst) + " samples");
    return worst;
}

struct ProbeConfig {
    std::vector<double> grid = default_lambda_grid();
    int folds = 4;
    std::uint64_t seed = 0;
};

struct ProbeModel {
    RidgeFit fit;
    LambdaSweep sweep;
    std::vector<Index> kept_columns;  // answer columns used as features
};

/// Answer columns are centered but not scaled; activations are mean-centered per neuron.
inline RidgeOptions probe_ridge_options() { return RidgeOptions{true, false, true}; }

/// Columns that are padding for every sample carry no information and are dropped.
inline std::vector<Index> informative_columns(const AnswerMatrix& a) {
    std::size_t widest = 0;
    for (auto c : a.choice_count) widest = std::max(widest, c);
    std::vector<Index> cols;
    for (Index c = 0; c < static_cast<Index>(widest) && c < a.max_choices(); ++c) cols.push_back(c);
    return cols;
}

/// Ridge from answer features to every neuron; per-neuron lambda by shuffled k-fold CV.
inline ProbeModel fit_probe(const AnswerMatrix& answers, const Matrix& activations, const ProbeConfig& cfg) {
    if (answers.samples() != activations.rows())
        throw std::invalid_argument("fit_probe: answer rows and activation rows are not aligned");
    if (activations.cols() < 1) throw std::invalid_argument("fit_probe: no neurons");
    ProbeModel model;
    model.kept_columns = informative_columns(answers);
    const Matrix features = select_cols(answers.values, model.kept_columns);
    const auto folds = complement_folds(shuffled_kfold(iota_indices(answers.samples()), cfg.folds, cfg.seed));
    const auto opt = probe_ridge_options();
    model.sweep = sweep_lambdas_cv(features, activations, cfg.grid, folds, opt);
    model.fit = fit_ridge_svd(features, activations, model.sweep.best_lambda, opt);
    return model;
}

inline constexpr int kHistogramBins = 200;  // width 0.01 over [-1, 1]

struct ProbeResult {
    std::string checkpoint_id;
    std::uint64_t training_tokens = 0;
    int layer = 0;
    std::string task;
    Vector r;
    Vector lambda;
    std::array<std::int64_t, kHistogramBins> histogram{};

    double mean_r() const { return r.size() > 0 ? r.mean() : std::nan(""); }
};

/// Left edge of histogram bin i, (i - 100) / 100.
inline double histogram_bin_left(int i) { return static_cast<double>(i - kHistogramBins / 2) / 100.0; }

/// Bin [k/100, (k+1)/100); r = 1 lands in the last bin.
inline int histogram_bin(double r) {
    const int b = static_cast<int>(std::floor(r * 100.0 + 1e-9)) + kHistogramBins / 2;
    return std::clamp(b, 0, kHistogramBins - 1);
}

inline std::array<std::int64_t, kHistogramBins> correlation_histogram(const Vector& r) {
    std::array<std::int64_t, kHistogramBins> h{};
    for (Index i = 0; i < r.size(); ++i) ++h[static_cast<std::size_t>(histogram_bin(r(i)))];
    return h;
}

/// Mean of r reconstructed from bin centers.
inline double histogram_mean(const std::array<std::int64_t, kHistogramBins>& h) {
    double sum = 0.0;
    std::int64_t n = 0;
    for (int i = 0; i < kHistogramBins; ++i) {
        sum += static_cast<double>(h[static_cast<std::size_t>(i)]) * (histogram_bin_left(i) + 0.005);
        n += h[static_cast<std::size_t>(i)];
    }
    return n > 0 ? sum / static_cast<double>(n) : std::nan("");
}

inline ProbeResult evaluate_probe(const ProbeModel& model, const AnswerMatrix& answers, const Matrix& activations) {
    if (answers.samples() != activations.rows())
        throw std::invalid_argument("evaluate_probe: answer rows and activation rows are not aligned");
    if (activations.cols() != model.fit.weights.cols())
        throw std::invalid_argument("evaluate_probe: neuron count does not match the fit");
    for (Index c : model.kept_columns)
        if (c >= answers.max_choices()) throw std::invalid_argument("evaluate_probe: test answers have fewer columns");
    const Matrix pred = predict(model.fit, select_cols(answers.values, model.kept_columns));
    ProbeResult res;
    res.r = column_correlations(pred, activations);
    res.lambda = model.fit.lambda;
    res.histogram = correlation_histogram(res.r);
    return res;
}

struct ScatterResult {
    Matrix pairs;  // neurons x 2: (r_A, r_B)
    double r = 0.0;
};

inline ScatterResult cross_task_scatter(const ProbeResult& a, const ProbeResult& b) {
    if (a.r.size() != b.r.size()) throw std::invalid_argument("cross_task_scatter: neuron counts differ");
    if (a.checkpoint_id != b.checkpoint_id || a.layer != b.layer)
        throw std::invalid_argument("cross_task_scatter: results come from different checkpoints or layers");
    ScatterResult out;
    out.pairs.resize(a.r.size(), 2);
    out.pairs.col(0) = a.r;
    out.pairs.col(1) = b.r;
    out.r = pearson(a.r, b.r).r;
    return out;
}

struct ProbeSeries {
    std::vector<ProbeResult> results;
    CheckpointSeries mean_r{"probing", {}};
};

/// One probe per checkpoint for `task` at `layer`. Answers are kind=answer 2-D entries with
/// group_label = task; activations are kind=activation entries with the same group_label and split.
inline ProbeSeries probe_series(const Manifest& manifest, int layer, const std::string& task, const ProbeConfig& cfg) {
    auto answer_entry = [&](SplitKind split) {
        auto found = manifest.select([&](const ManifestEntry& e) {
            return e.kind == EntryKind::answer && e.group_label == task && e.split == split;
        });
        if (found.empty()) throw DataError("probe_series: no " + to_string(split) + " answer matrix for task '" + task + "'");
        return found.front();
    };
    const auto a_train = answer_matrix_from_values(read_matrix(manifest.resolve(answer_entry(SplitKind::train))));
    const auto a_test = answer_matrix_from_values(read_matrix(manifest.resolve(answer_entry(SplitKind::test))));

    ProbeSeries out;
    for (const auto& c : manifest.checkpoints()) {
        auto acts = [&](SplitKind split) {
            return manifest.select([&](const ManifestEntry& e) {
                return e.kind == EntryKind::activation && e.layer == layer && e.checkpoint_id == c.checkpoint_id &&
                       e.group_label == task && e.split == split;
            });
        };
        const auto tr = acts(SplitKind::train), te = acts(SplitKind::test);
        if (tr.empty() && te.empty()) continue;
        if (tr.empty() || te.empty())
            throw DataError("probe_series: checkpoint '" + c.checkpoint_id + "' lacks a train or test activation file");
        const Matrix act_train = read_matrix(manifest.resolve(tr.front()));
        const Matrix act_test = read_matrix(manifest.resolve(te.front()));
        require_finite(act_train, "probe activations");
        require_finite(act_test, "probe activations");
        const auto model = fit_probe(a_train, act_train, cfg);
        auto res = evaluate_probe(model, a_test, act_test);
        res.checkpoint_id = c.checkpoint_id;
        res.training_tokens = c.training_tokens;
        res.layer = layer;
        res.task = task;
        out.mean_r.points.push_back({c.checkpoint_id, c.training_tokens, res.mean_r()});
        out.results.push_back(std::move(res));
    }
    if (out.results.empty())
        throw DataError("probe_series: no checkpoints with '" + task + "' activations at layer " + std::to_string(layer));
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_PROBING_HPP
