#ifndef CKPTSCOPE_MANIFEST_HPP
#define CKPTSCOPE_MANIFEST_HPP

#include "amx.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace ckptscope {

enum class EntryKind { activation, target, answer, hidden, unembed, normgain };
enum class SplitKind { train, test };

inline std::string to_string(EntryKind k) {
    switch (k) {
        case EntryKind::activation: return "activation";
        case EntryKind::target: return "target";
        case EntryKind::answer: return "answer";
        case EntryKind::hidden: return "hidden";
        case EntryKind::unembed: return "unembed";
        case EntryKind::normgain: return "normgain";
    }
    return "?";
}

inline std::string to_string(SplitKind s) { return s == SplitKind::train ? "train" : "test"; }

inline EntryKind parse_entry_kind(std::string_view s) {
    for (auto k : {EntryKind::activation, EntryKind::target, EntryKind::answer, EntryKind::hidden,
                   EntryKind::unembed, EntryKind::normgain})
        if (to_string(k) == s) return k;
    throw DataError("unknown entry kind '" + std::string(s) + "'");
}

inline SplitKind parse_split(std::string_view s) {
    if (s == "train") return SplitKind::train;
    if (s == "test") return SplitKind::test;
    throw DataError("unknown split '" + std::string(s) + "'");
}

/// Targets (response signals) and answers (task labels) do not depend on the checkpoint.
inline bool is_checkpoint_bound(EntryKind k) { return k != EntryKind::target && k != EntryKind::answer; }

struct ManifestEntry {
    std::string path;
    std::string checkpoint_id;
    std::uint64_t training_tokens = 0;
    int layer = 0;
    EntryKind kind = EntryKind::activation;
    std::string group_label;
    SplitKind split = SplitKind::train;
    // Optional: which participant a target file belongs to. Empty for everything else.
    std::string participant;
};

inline nlohmann::json to_json(const ManifestEntry& e, bool with_path = true) {
    nlohmann::json j;
    if (with_path) j["path"] = e.path;
    j["checkpoint_id"] = e.checkpoint_id;
    j["training_tokens"] = e.training_tokens;
    j["layer"] = e.layer;
    j["kind"] = to_string(e.kind);
    j["group_label"] = e.group_label;
    j["split"] = to_string(e.split);
    if (!e.participant.empty()) j["participant"] = e.participant;
    return j;
}

inline ManifestEntry entry_from_json(const nlohmann::json& j) {
    try {
        ManifestEntry e;
        if (j.contains("path")) e.path = j.at("path").get<std::string>();
        e.checkpoint_id = j.at("checkpoint_id").get<std::string>();
        e.training_tokens = j.at("training_tokens").get<std::uint64_t>();
        e.layer = j.at("layer").get<int>();
        e.kind = parse_entry_kind(j.at("kind").get<std::string>());
        e.group_label = j.at("group_label").get<std::string>();
        e.split = parse_split(j.at("split").get<std::string>());
        e.participant = j.value("participant", std::string{});
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed manifest entry: ") + ex.what());
    }
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& amx_path) {
    return amx_path.string() + ".json";
}

inline void write_sidecar(const std::filesystem::path& amx_path, const ManifestEntry& meta) {
    std::ofstream out(sidecar_path(amx_path));
    if (!out) throw DataError("cannot write sidecar for " + amx_path.string());
    out << to_json(meta, false).dump(2) << '\n';
}

inline ManifestEntry read_sidecar(const std::filesystem::path& amx_path) {
    std::ifstream in(sidecar_path(amx_path));
    if (!in) throw DataError("missing sidecar for " + amx_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("bad sidecar for " + amx_path.string() + ": " + ex.what());
    }
    auto e = entry_from_json(j);
    e.path = amx_path.string();
    return e;
}

struct CheckpointRef {
    std::string checkpoint_id;
    std::uint64_t training_tokens = 0;
};

class Manifest {
public:
    Manifest() = default;
    Manifest(std::vector<ManifestEntry> entries, std::filesystem::path base_dir = {})
        : entries_(std::move(entries)), base_dir_(std::move(base_dir)) {}

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    const std::filesystem::path& base_dir() const { return base_dir_; }
    std::optional<std::uint64_t> split_seed;

    void add(ManifestEntry e) { entries_.push_back(std::move(e)); }

    std::filesystem::path resolve(const ManifestEntry& e) const {
        std::filesystem::path p(e.path);
        return p.is_absolute() ? p : base_dir_ / p;
    }

    /// Checkpoints in manifest order (first appearance among checkpoint-bound entries).
    std::vector<CheckpointRef> checkpoints() const {
        std::vector<CheckpointRef> out;
        std::set<std::string> seen;
        for (const auto& e : entries_) {
            if (!is_checkpoint_bound(e.kind)) continue;
            if (seen.insert(e.checkpoint_id).second) out.push_back({e.checkpoint_id, e.training_tokens});
        }
        return out;
    }

    template <typename Pred>
    std::vector<ManifestEntry> select(Pred&& pred) const {
        std::vector<ManifestEntry> out;
        std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out), pred);
        return out;
    }

    /// Throws DataError on the first broken invariant.
    void validate(bool check_paths = true) const {
        std::set<std::tuple<std::string, int, EntryKind, std::string, SplitKind, std::string>> keys;
        std::map<std::string, std::uint64_t> tokens_of;
        bool have_prev = false;
        std::uint64_t prev_tokens = 0;
        for (const auto& e : entries_) {
            if (check_paths && !std::filesystem::exists(resolve(e)))
                throw DataError("manifest path does not exist: " + resolve(e).string());
            if (!keys.emplace(e.checkpoint_id, e.layer, e.kind, e.group_label, e.split, e.participant).second)
                throw DataError("duplicate manifest entry for checkpoint '" + e.checkpoint_id + "' layer " +
                                std::to_string(e.layer) + " kind " + to_string(e.kind));
            if (!is_checkpoint_bound(e.kind)) continue;
            auto [it, inserted] = tokens_of.emplace(e.checkpoint_id, e.training_tokens);
            if (!inserted) {
                if (it->second != e.training_tokens)
                    throw DataError("checkpoint '" + e.checkpoint_id + "' has conflicting training_tokens");
                continue;
            }
            if (have_prev && e.training_tokens <= prev_tokens)
                throw DataError("training_tokens must strictly increase with checkpoint order (checkpoint '" +
                                e.checkpoint_id + "')");
            prev_tokens = e.training_tokens;
            have_prev = true;
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["entries"] = nlohmann::json::array();
        for (const auto& e : entries_) j["entries"].push_back(ckptscope::to_json(e));
        if (split_seed) j["split_seed"] = *split_seed;
        return j;
    }

private:
    std::vector<ManifestEntry> entries_;
    std::filesystem::path base_dir_;
};

inline Manifest load_manifest(const std::filesystem::path& path, bool validate = true) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("manifest " + path.string() + " is not valid JSON: " + ex.what());
    }
    if (!j.contains("entries") || !j["entries"].is_array())
        throw DataError("manifest " + path.string() + " has no 'entries' array");
    std::vector<ManifestEntry> entries;
    for (const auto& item : j["entries"]) entries.push_back(entry_from_json(item));
    Manifest m(std::move(entries), path.parent_path());
    if (j.contains("split_seed")) m.split_seed = j["split_seed"].get<std::uint64_t>();
    if (validate) m.validate();
    return m;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << m.to_json().dump(2) << '\n';
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_MANIFEST_HPP
