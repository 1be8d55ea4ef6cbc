#ifndef CKPTSCOPE_ENCODING_HPP
#define CKPTSCOPE_ENCODING_HPP

#include "manifest.hpp"
#include "ridge.hpp"
#include "series.hpp"
#include "split.hpp"
#include "stats.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ckptscope {

struct EncodingConfig {
    DelaySpec delays;
    std::vector<double> grid = default_lambda_grid();
    int folds = 4;
    PermConfig perm;
    RidgeOptions ridge;
};

struct EncodingModel {
    DelaySpec delays;
    RidgeFit fit;
    LambdaSweep sweep;
};

struct EncodingResult {
    std::string checkpoint_id;
    std::uint64_t training_tokens = 0;
    int layer = 0;
    Vector r, p, q, lambda;
    std::vector<bool> significant;
    std::vector<bool> degenerate;
    double mean_r_all = 0.0;
    double mean_r_sig = std::nan("");  // NaN when nothing is significant
    Index n_significant = 0;
    LambdaSweep sweep;  // CV score surface behind the chosen lambdas
};

struct VoxelDelta {
    Vector delta;               // r_B - r_A where defined, NaN elsewhere
    std::vector<bool> defined;  // significant at either checkpoint
};

/// Delay-embed each contiguous run of equal labels on its own so shifted rows never cross a
/// segment (movie/session) boundary. An empty label list means one segment.
inline Matrix delay_embed_segments(const Matrix& X, const std::vector<std::string>& labels, const DelaySpec& spec) {
    if (labels.empty()) return delay_embed(X, spec);
    if (static_cast<Index>(labels.size()) != X.rows())
        throw std::invalid_argument("delay_embed_segments: one label per row required");
    Matrix out(X.rows(), X.cols() * static_cast<Index>(std::set<Index>(spec.delays.begin(), spec.delays.end()).size()));
    Index start = 0;
    while (start < X.rows()) {
        Index end = start + 1;
        while (end < X.rows() && labels[static_cast<std::size_t>(end)] == labels[static_cast<std::size_t>(start)]) ++end;
        out.middleRows(start, end - start) = delay_embed(X.middleRows(start, end - start), spec);
        start = end;
    }
    return out;
}

/// delay_embed -> grouped-CV lambda sweep -> refit on all training rows with the chosen per-target lambdas.
/// `groups` labels every training row; folds deal the sorted group labels round-robin.
inline EncodingModel fit_encoding(const Matrix& X_train, const Matrix& Y_train, const std::vector<std::string>& groups,
                                  const EncodingConfig& cfg) {
    if (X_train.rows() != Y_train.rows()) throw std::invalid_argument("fit_encoding: X and Y rows are not aligned");
    if (static_cast<Index>(groups.size()) != X_train.rows())
        throw std::invalid_argument("fit_encoding: groups must cover every training row");

    EncodingModel model;
    model.delays = cfg.delays;
    const Matrix Xd = delay_embed_segments(X_train, groups, cfg.delays);

    SplitSpec spec;
    spec.train_indices = iota_indices(X_train.rows());
    for (Index i = 0; i < X_train.rows(); ++i) spec.group_of[i] = groups[static_cast<std::size_t>(i)];
    const auto folds = fold_rows(spec, group_folds(spec, cfg.folds));

    model.sweep = sweep_lambdas_cv(Xd, Y_train, cfg.grid, folds, cfg.ridge);
    model.fit = fit_ridge_svd(Xd, Y_train, model.sweep.best_lambda, cfg.ridge);
    return model;
}

inline void summarize(EncodingResult& res) {
    res.mean_r_all = res.r.size() > 0 ? res.r.mean() : std::nan("");
    double sum = 0.0;
    res.n_significant = 0;
    for (Index v = 0; v < res.r.size(); ++v)
        if (res.significant[static_cast<std::size_t>(v)]) {
            sum += res.r(v);
            ++res.n_significant;
        }
    res.mean_r_sig = res.n_significant > 0 ? sum / static_cast<double>(res.n_significant) : std::nan("");
}

/// Test-set correlations, blockwise permutation p-values, and BH q-values (significant at q <= perm.alpha).
inline EncodingResult evaluate_encoding(const EncodingModel& model, const Matrix& X_test, const Matrix& Y_test,
                                        const PermConfig& perm, const std::vector<std::string>& test_groups = {}) {
    if (X_test.rows() != Y_test.rows()) throw std::invalid_argument("evaluate_encoding: X and Y rows are not aligned");
    if (Y_test.cols() != model.fit.weights.cols())
        throw std::invalid_argument("evaluate_encoding: target count does not match the fit");
    const Matrix pred = predict(model.fit, delay_embed_segments(X_test, test_groups, model.delays));
    auto sig = block_permutation_pvalues(pred, Y_test, perm);
    apply_fdr(sig, perm.alpha);

    EncodingResult res;
    res.r = sig.r;
    res.p = sig.p;
    res.q = sig.q;
    res.lambda = model.fit.lambda;
    res.significant = sig.significant;
    res.degenerate = sig.degenerate;
    summarize(res);
    return res;
}

inline VoxelDelta voxel_delta(const EncodingResult& a, const EncodingResult& b) {
    if (a.r.size() != b.r.size()) throw std::invalid_argument("voxel_delta: target counts differ");
    if (a.layer != b.layer) throw std::invalid_argument("voxel_delta: results come from different layers");
    VoxelDelta d;
    d.delta = Vector::Constant(a.r.size(), std::nan(""));
    d.defined.assign(static_cast<std::size_t>(a.r.size()), false);
    for (Index v = 0; v < a.r.size(); ++v) {
        const auto i = static_cast<std::size_t>(v);
        if (!(a.significant[i] || b.significant[i])) continue;
        d.defined[i] = true;
        d.delta(v) = b.r(v) - a.r(v);
    }
    return d;
}

/// Rows stacked from several manifest entries, with one group label per row.
struct StackedRows {
    Matrix data;
    std::vector<std::string> labels;
};

inline StackedRows stack_entries(const Manifest& m, const std::vector<ManifestEntry>& entries, bool impute_nan) {
    StackedRows out;
    std::vector<Matrix> parts;
    Index rows = 0, cols = -1;
    for (const auto& e : entries) {
        Matrix part = read_matrix(m.resolve(e));
        if (impute_nan) impute_nan_columns(part, e.path);
        else if (!part.allFinite()) throw NumericalError(e.path + " contains non-finite values");
        if (cols >= 0 && part.cols() != cols) throw DataError(e.path + ": column count differs from sibling files");
        cols = part.cols();
        rows += part.rows();
        out.labels.insert(out.labels.end(), static_cast<std::size_t>(part.rows()), e.group_label);
        parts.push_back(std::move(part));
    }
    out.data.resize(rows, std::max<Index>(cols, 0));
    Index at = 0;
    for (const auto& p : parts) {
        out.data.middleRows(at, p.rows()) = p;
        at += p.rows();
    }
    return out;
}

struct EncodingSeries {
    std::vector<EncodingResult> results;
    CheckpointSeries mean_r_all{"encoding", {}};
    CheckpointSeries mean_r_sig{"encoding_sig", {}};
};

/// Fits and evaluates one encoding model per checkpoint for `layer` against a participant's targets.
/// Target entries (kind=target) define the segments; each needs an activation entry with the same
/// group_label and split at every checkpoint.
inline EncodingSeries encoding_series(const Manifest& manifest, int layer, const std::string& participant,
                                      const EncodingConfig& cfg) {
    auto by_label = [](const ManifestEntry& a, const ManifestEntry& b) { return a.group_label < b.group_label; };
    auto targets_of = [&](SplitKind split) {
        auto t = manifest.select([&](const ManifestEntry& e) {
            return e.kind == EntryKind::target && e.split == split && (participant.empty() || e.participant == participant);
        });
        std::sort(t.begin(), t.end(), by_label);
        return t;
    };
    const auto train_targets = targets_of(SplitKind::train);
    const auto test_targets = targets_of(SplitKind::test);
    if (train_targets.empty() || test_targets.empty())
        throw DataError("encoding_series: no train/test target entries" +
                        (participant.empty() ? std::string{} : " for participant '" + participant + "'"));

    const auto Ytr = stack_entries(manifest, train_targets, true);
    const auto Yte = stack_entries(manifest, test_targets, true);

    std::vector<CheckpointRef> ckpts;
    for (const auto& c : manifest.checkpoints()) {
        const bool has = !manifest.select([&](const ManifestEntry& e) {
            return e.kind == EntryKind::activation && e.layer == layer && e.checkpoint_id == c.checkpoint_id;
        }).empty();
        if (has) ckpts.push_back(c);
    }
    if (ckpts.size() < 2) throw DataError("encoding_series: need at least 2 checkpoints with activations at layer " + std::to_string(layer));

    auto activations_for = [&](const CheckpointRef& c, const std::vector<ManifestEntry>& targets) {
        std::vector<ManifestEntry> acts;
        for (const auto& t : targets) {
            auto found = manifest.select([&](const ManifestEntry& e) {
                return e.kind == EntryKind::activation && e.layer == layer && e.checkpoint_id == c.checkpoint_id &&
                       e.group_label == t.group_label && e.split == t.split;
            });
            if (found.empty())
                throw DataError("missing activation file for checkpoint '" + c.checkpoint_id + "' layer " +
                                std::to_string(layer) + " group '" + t.group_label + "' (" + to_string(t.split) + ")");
            acts.push_back(found.front());
        }
        return stack_entries(manifest, acts, false);
    };

    EncodingSeries out;
    for (const auto& c : ckpts) {
        const auto Xtr = activations_for(c, train_targets);
        const auto Xte = activations_for(c, test_targets);
        if (Xtr.data.rows() != Ytr.data.rows() || Xte.data.rows() != Yte.data.rows())
            throw DataError("checkpoint '" + c.checkpoint_id + "': activation rows do not match target rows");
        const auto model = fit_encoding(Xtr.data, Ytr.data, Ytr.labels, cfg);
        auto res = evaluate_encoding(model, Xte.data, Yte.data, cfg.perm, Yte.labels);
        res.sweep = model.sweep;
        res.checkpoint_id = c.checkpoint_id;
        res.training_tokens = c.training_tokens;
        res.layer = layer;
        out.mean_r_all.points.push_back({c.checkpoint_id, c.training_tokens, res.mean_r_all});
        out.mean_r_sig.points.push_back({c.checkpoint_id, c.training_tokens, res.mean_r_sig});
        out.results.push_back(std::move(res));
    }
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_ENCODING_HPP
