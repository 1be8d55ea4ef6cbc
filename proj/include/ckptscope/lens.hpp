#ifndef CKPTSCOPE_LENS_HPP
#define CKPTSCOPE_LENS_HPP

#include "manifest.hpp"
#include "parallel.hpp"
#include "series.hpp"

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace ckptscope {

/// Final-token hidden states for one (checkpoint, layer) plus the pieces of the output head.
/// A nonparametric final norm is represented by norm_gain = ones.
struct LensBundle {
    Matrix hidden;            // S x D
    Vector norm_gain;         // D
    Matrix unembed;           // Vocab x D
    std::vector<Index> gold_token;
    double eps = 1e-5;
    bool apply_norm = true;   // RMS-normalize before unembedding

    void validate() const {
        const Index D = hidden.cols();
        if (norm_gain.size() != D || unembed.cols() != D)
            throw std::invalid_argument("lens bundle: hidden width " + std::to_string(D) + ", norm gain " +
                                        std::to_string(norm_gain.size()) + ", unembed width " + std::to_string(unembed.cols()));
        if (!gold_token.empty() && static_cast<Index>(gold_token.size()) != hidden.rows())
            throw std::invalid_argument("lens bundle: one gold token per sample required");
        for (Index g : gold_token)
            if (g < 0 || g >= unembed.rows()) throw std::invalid_argument("lens bundle: gold token outside the vocabulary");
        if (!(eps >= 0.0)) throw std::invalid_argument("lens bundle: eps must be >= 0");
    }
};

/// argmax_v U (h / sqrt(mean(h^2) + eps) * gain); ties go to the smallest token id.
inline std::vector<Index> lens_project(const LensBundle& b) {
    b.validate();
    const Index S = b.hidden.rows();
    std::vector<Index> pred(static_cast<std::size_t>(S), 0);
    parallel_for(static_cast<std::size_t>(S), [&](std::size_t sb, std::size_t se) {
        for (auto s = static_cast<Index>(sb); s < static_cast<Index>(se); ++s) {
            Vector h = b.hidden.row(s).transpose();
            if (b.apply_norm) {
                const double rms = std::sqrt(h.squaredNorm() / static_cast<double>(h.size()) + b.eps);
                h = (h / rms).cwiseProduct(b.norm_gain);
            }
            const Vector logits = b.unembed * h;
            Index best = 0;
            for (Index v = 1; v < logits.size(); ++v)
                if (logits(v) > logits(best)) best = v;
            pred[static_cast<std::size_t>(s)] = best;
        }
    });
    return pred;
}

inline double layer_accuracy(const LensBundle& b) {
    if (b.hidden.rows() < 1) throw std::invalid_argument("layer_accuracy: empty bundle");
    if (static_cast<Index>(b.gold_token.size()) != b.hidden.rows())
        throw std::invalid_argument("layer_accuracy: gold tokens required for every sample");
    const auto pred = lens_project(b);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) correct += pred[s] == b.gold_token[s];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// Case-sensitive equality after trimming surrounding whitespace.
inline double exact_match_score(const std::vector<std::string>& outputs, const std::vector<std::string>& golds) {
    if (outputs.size() != golds.size()) throw std::invalid_argument("exact_match_score: length mismatch");
    if (outputs.empty()) throw std::invalid_argument("exact_match_score: no samples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) hits += trim(outputs[i]) == trim(golds[i]);
    return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

struct LensOptions {
    double eps = 1e-5;
    bool apply_norm = true;
};

/// Per-checkpoint logit-lens accuracy at `layer` for `task`.
/// Uses kind=hidden (S x D, group_label = task) at the layer, kind=unembed and kind=normgain of the
/// checkpoint (any layer), and a 1-D kind=answer entry with group_label = task holding gold token ids.
inline CheckpointSeries lens_series(const Manifest& manifest, int layer, const std::string& task, const LensOptions& opt = {}) {
    auto gold_entries = manifest.select([&](const ManifestEntry& e) {
        return e.kind == EntryKind::answer && e.group_label == task;
    });
    std::vector<Index> gold;
    bool found_gold = false;
    for (const auto& e : gold_entries) {
        const auto arr = read_amx(manifest.resolve(e));
        if (arr.dims.size() != 1) continue;
        for (float v : arr.values) {
            if (!(v >= 0.0f) || v != std::floor(v)) throw DataError(e.path + ": gold token ids must be nonnegative integers");
            gold.push_back(static_cast<Index>(v));
        }
        found_gold = true;
        break;
    }
    if (!found_gold) throw DataError("lens_series: no 1-D gold-token answer entry for task '" + task + "'");

    CheckpointSeries out{"benchmark", {}};
    for (const auto& c : manifest.checkpoints()) {
        auto pick = [&](EntryKind kind, bool match_layer) {
            auto v = manifest.select([&](const ManifestEntry& e) {
                return e.kind == kind && e.checkpoint_id == c.checkpoint_id && (!match_layer || e.layer == layer) &&
                       (kind != EntryKind::hidden || e.group_label == task);
            });
            return v;
        };
        const auto hidden = pick(EntryKind::hidden, true);
        if (hidden.empty()) continue;
        const auto unembed = pick(EntryKind::unembed, false);
        const auto gain = pick(EntryKind::normgain, false);
        if (unembed.empty()) throw DataError("lens_series: checkpoint '" + c.checkpoint_id + "' has no unembed matrix");
        LensBundle b;
        b.hidden = read_matrix(manifest.resolve(hidden.front()));
        b.unembed = read_matrix(manifest.resolve(unembed.front()));
        b.norm_gain = gain.empty() ? Vector::Ones(b.hidden.cols()) : Vector(read_matrix(manifest.resolve(gain.front())).reshaped());
        b.gold_token = gold;
        b.eps = opt.eps;
        b.apply_norm = opt.apply_norm;
        require_finite(b.hidden, "hidden states");
        require_finite(b.unembed, "unembedding");
        out.points.push_back({c.checkpoint_id, c.training_tokens, layer_accuracy(b)});
    }
    if (out.points.empty()) throw DataError("lens_series: no hidden-state entries at layer " + std::to_string(layer));
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_LENS_HPP
