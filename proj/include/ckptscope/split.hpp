#ifndef CKPTSCOPE_SPLIT_HPP
#define CKPTSCOPE_SPLIT_HPP

#include "rng.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ckptscope {

struct SplitSpec {
    std::vector<Index> train_indices;
    std::vector<Index> test_indices;
    std::map<Index, std::string> group_of;  // train index -> group label

    std::vector<std::string> groups() const {
        std::set<std::string> s;
        for (const auto& [_, g] : group_of) s.insert(g);
        return {s.begin(), s.end()};
    }
};

/// Row indices of one cross-validation fold.
struct CvFold {
    std::vector<Index> train;
    std::vector<Index> validation;
};

struct GroupFold {
    std::vector<std::string> train_groups;
    std::vector<std::string> validation_groups;
};

/// Random train/test split at ratio train:test. Sizes are round(n * train / (train + test)) and the rest.
/// Train indices come back sorted; every train index is labeled from `labels` (or "all").
inline SplitSpec split_by_ratio(Index num_samples, std::pair<int, int> ratio, std::uint64_t seed,
                                const std::vector<std::string>& labels = {}) {
    if (num_samples <= 0) throw std::invalid_argument("split_by_ratio: zero samples");
    if (ratio.first <= 0 || ratio.second <= 0) throw std::invalid_argument("split_by_ratio: ratio parts must be positive");
    if (!labels.empty() && static_cast<Index>(labels.size()) != num_samples)
        throw std::invalid_argument("split_by_ratio: one label per sample required");
    const double frac = static_cast<double>(ratio.first) / (ratio.first + ratio.second);
    auto n_train = static_cast<Index>(std::llround(frac * static_cast<double>(num_samples)));
    n_train = std::clamp<Index>(n_train, 1, num_samples);

    auto order = iota_indices(num_samples);
    Rng rng(seed);
    rng.shuffle(order);

    SplitSpec spec;
    spec.train_indices.assign(order.begin(), order.begin() + n_train);
    spec.test_indices.assign(order.begin() + n_train, order.end());
    std::sort(spec.train_indices.begin(), spec.train_indices.end());
    std::sort(spec.test_indices.begin(), spec.test_indices.end());
    for (Index i : spec.train_indices) spec.group_of[i] = labels.empty() ? "all" : labels[static_cast<std::size_t>(i)];
    return spec;
}

/// Groups sorted lexicographically and dealt round-robin, so 9 groups in 4 folds validate on {3,2,2,2} groups.
inline std::vector<GroupFold> group_folds(const SplitSpec& spec, int folds) {
    const auto groups = spec.groups();
    if (folds < 2) throw std::invalid_argument("group_folds: need at least 2 folds");
    if (static_cast<std::size_t>(folds) > groups.size())
        throw std::invalid_argument("group_folds: " + std::to_string(folds) + " folds requested but only " +
                                    std::to_string(groups.size()) + " groups");
    std::vector<GroupFold> out(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto f = i % static_cast<std::size_t>(folds);
        for (std::size_t k = 0; k < out.size(); ++k)
            (k == f ? out[k].validation_groups : out[k].train_groups).push_back(groups[i]);
    }
    return out;
}

/// Translate group folds into row folds over spec.train_indices.
inline std::vector<CvFold> fold_rows(const SplitSpec& spec, const std::vector<GroupFold>& folds) {
    std::vector<CvFold> out;
    for (const auto& gf : folds) {
        std::set<std::string> val(gf.validation_groups.begin(), gf.validation_groups.end());
        CvFold f;
        for (Index i : spec.train_indices) {
            auto it = spec.group_of.find(i);
            if (it == spec.group_of.end()) throw std::invalid_argument("fold_rows: train index without group");
            (val.count(it->second) ? f.validation : f.train).push_back(i);
        }
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_SPLIT_HPP
