#ifndef CKPTSCOPE_CLI_HPP
#define CKPTSCOPE_CLI_HPP

// Config handling and analysis runners behind the ckptscope executable. Kept in the library so
// tests can drive runs without spawning processes.

#include "dynamics.hpp"
#include "encoding.hpp"
#include "idim.hpp"
#include "lens.hpp"
#include "probing.hpp"
#include "report.hpp"
#include "synth.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ckptscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kInvalidConfig = 2,
    kMissingData = 3,
    kNumericalFailure = 4,
    kReplayMismatch = 5,
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& analyses() {
    static const std::vector<std::string> names{"encode", "probe", "idim", "xcorr", "lens", "score", "phases", "synth", "report"};
    return names;
}

inline bool needs_manifest(const std::string& a) {
    return a == "encode" || a == "probe" || a == "idim" || a == "xcorr" || a == "lens";
}

/// Per-analysis defaults. Keys not listed here are rejected.
inline json section_defaults(const std::string& analysis) {
    const auto grid = default_lambda_grid();
    if (analysis == "encode")
        return {{"participant", ""}, {"delays", {8, 9, 10}}, {"folds", 4}, {"lambda_grid", grid},
                {"n_perm", 1000},     {"block_len", 10},      {"alpha", 0.05}};
    if (analysis == "probe") return {{"task", ""}, {"folds", 4}, {"lambda_grid", grid}};
    if (analysis == "idim")
        return {{"k_grid", default_k_grid()}, {"plateau_threshold", 0.05}, {"subsample", 0}, {"groups", json::array()}};
    if (analysis == "xcorr") return {{"mode", "flattened"}, {"groups", json::array()}, {"split", ""}};
    if (analysis == "lens") return {{"task", ""}, {"eps", 1e-5}, {"apply_norm", true}};
    if (analysis == "score") return {{"input", ""}};
    if (analysis == "phases") return {{"series", ""}, {"segments", 3}, {"min_length", 1}};
    if (analysis == "synth") return {{"participant", "sub01"}, {"task", "mmlu"}, {"lens_task", "arith"}};
    if (analysis == "report") return json::object();
    throw ConfigError("unknown analysis '" + analysis + "'");
}

inline json toml_to_json(const toml::node& n) {
    if (auto t = n.as_table()) {
        json j = json::object();
        for (auto&& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
        return j;
    }
    if (auto a = n.as_array()) {
        json j = json::array();
        for (const auto& v : *a) j.push_back(toml_to_json(v));
        return j;
    }
    if (auto s = n.as_string()) return s->get();
    if (auto i = n.as_integer()) return i->get();
    if (auto f = n.as_floating_point()) return f->get();
    if (auto b = n.as_boolean()) return b->get();
    throw ConfigError("unsupported TOML value type (dates and times are not accepted)");
}

inline json load_config_file(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    try {
        return toml_to_json(toml::parse_file(path.string()));
    } catch (const toml::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + std::string(e.description()));
    }
}

/// Values given on the command line; they take precedence over the config file.
struct Overrides {
    std::optional<std::string> config;
    std::optional<std::string> manifest;
    std::optional<int> layer;
    std::optional<std::uint64_t> seed;
};

inline std::string absolute_string(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

/// Defaults, then the TOML file, then command-line overrides. Paths become absolute so the
/// result is a self-contained description of the run.
inline json effective_config(const std::string& analysis, const Overrides& ov) {
    json file = json::object();
    fs::path base = fs::current_path();
    if (ov.config) {
        file = load_config_file(*ov.config);
        base = fs::absolute(*ov.config).parent_path();
    }
    static const std::set<std::string> top_keys{"analysis", "manifest", "layer", "seed"};
    for (auto& [k, v] : file.items()) {
        const bool known_section = std::find(analyses().begin(), analyses().end(), k) != analyses().end();
        if (!top_keys.count(k) && !known_section) throw ConfigError("unknown config key '" + k + "'");
        if (known_section && !v.is_object()) throw ConfigError("config key '" + k + "' must be a table");
    }
    if (file.contains("analysis") && file["analysis"] != analysis)
        throw ConfigError("config is for analysis '" + file["analysis"].dump() + "', not '" + analysis + "'");

    json cfg;
    cfg["analysis"] = analysis;
    try {
        if (ov.manifest) cfg["manifest"] = absolute_string(*ov.manifest);
        else if (file.contains("manifest")) cfg["manifest"] = absolute_string(base / file["manifest"].get<std::string>());
        if (ov.layer) cfg["layer"] = *ov.layer;
        else if (file.contains("layer")) cfg["layer"] = file["layer"].get<int>();
        if (ov.seed) cfg["seed"] = *ov.seed;
        else cfg["seed"] = file.contains("seed") ? file["seed"].get<std::uint64_t>() : std::uint64_t{0};
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    json section = section_defaults(analysis);
    if (file.contains(analysis))
        for (auto& [k, v] : file[analysis].items()) {
            if (!section.contains(k)) throw ConfigError("unknown key '" + k + "' in [" + analysis + "]");
            const auto& d = section[k];
            const bool ok = (d.is_number() && v.is_number()) || d.type() == v.type();
            if (!ok) throw ConfigError("[" + analysis + "] " + k + " has the wrong type");
            section[k] = v;
        }
    for (const char* key : {"input", "series"})
        if (section.contains(key) && !section[key].get<std::string>().empty())
            section[key] = absolute_string(base / section[key].get<std::string>());
    cfg[analysis] = section;

    if (needs_manifest(analysis) && !cfg.contains("manifest")) throw ConfigError(analysis + ": no manifest given (--manifest or 'manifest')");
    if (needs_manifest(analysis) && !cfg.contains("layer")) throw ConfigError(analysis + ": no layer given (--layer or 'layer')");
    return cfg;
}

/// FNV-1a over the bytes of a string.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Seeds each analysis derives from the base seed; recorded so a run can be audited.
inline json derived_seeds(std::uint64_t seed) {
    return {{"base", seed}, {"permutation", derive_seed(seed, 1)}, {"cv", derive_seed(seed, 2)},
            {"subsample", derive_seed(seed, 3)}, {"synth", seed}};
}

class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

    const fs::path& dir() const { return dir_; }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir_ / name).string());
        out << content;
        add(name);
    }

    void add(const std::string& name) { names_.insert(name); }

    json hashes() const {
        json j = json::object();
        for (const auto& n : names_) j[n] = hex64(fnv1a64(read_file(dir_ / n)));
        return j;
    }

private:
    fs::path dir_;
    std::set<std::string> names_;
};

template <class T>
std::vector<T> json_vector(const json& j, const char* what) {
    try {
        return j.get<std::vector<T>>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(what) + " must be an array of numbers");
    }
}

inline std::string bool_str(bool b) { return b ? "1" : "0"; }

inline std::string series_csv(const CheckpointSeries& s) {
    std::string out = "checkpoint_id,training_tokens,value\n";
    for (const auto& p : s.points) out += p.checkpoint_id + ',' + std::to_string(p.training_tokens) + ',' + format_double(p.value) + '\n';
    return out;
}

inline std::string layer_tag(int layer) { return "_L" + std::to_string(layer); }

inline json run_encode(const json& cfg, OutputSet& out) {
    const auto& s = cfg["encode"];
    EncodingConfig ec;
    ec.delays.delays = json_vector<Index>(s["delays"], "delays");
    ec.grid = json_vector<double>(s["lambda_grid"], "lambda_grid");
    ec.folds = s["folds"].get<int>();
    ec.perm.n_perm = s["n_perm"].get<int>();
    ec.perm.block_len = s["block_len"].get<Index>();
    ec.perm.alpha = s["alpha"].get<double>();
    ec.perm.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), 1);
    const int layer = cfg["layer"].get<int>();
    const auto manifest = load_manifest(cfg["manifest"].get<std::string>());
    const auto es = encoding_series(manifest, layer, s["participant"].get<std::string>(), ec);

    for (const auto& r : es.results) {
        std::string csv = "target,r,p,q,lambda,significant,degenerate\n";
        for (Index v = 0; v < r.r.size(); ++v) {
            const auto i = static_cast<std::size_t>(v);
            csv += std::to_string(v) + ',' + format_double(r.r(v)) + ',' + format_double(r.p(v)) + ',' + format_double(r.q(v)) + ',' +
                   format_double(r.lambda(v)) + ',' + bool_str(r.significant[i]) + ',' + bool_str(r.degenerate[i]) + '\n';
        }
        csv += "# mean_r_all=" + format_double(r.mean_r_all) + " mean_r_sig=" + format_double(r.mean_r_sig) +
               " n_significant=" + std::to_string(r.n_significant) + " fdr_scope=checkpoint/layer/participant\n";
        const std::string stem = "encode_" + r.checkpoint_id + layer_tag(layer);
        out.write(stem + ".csv", csv);

        std::string cv = "lambda,mean_cv_r,n_selected\n";
        for (std::size_t l = 0; l < r.sweep.grid.size(); ++l) {
            const auto n_sel = std::count(r.sweep.best_index.begin(), r.sweep.best_index.end(), l);
            cv += format_double(r.sweep.grid[l]) + ',' + format_double(r.sweep.scores.row(static_cast<Index>(l)).mean()) + ',' +
                  std::to_string(n_sel) + '\n';
        }
        out.write(stem + "_cv.csv", cv);
    }
    out.write("encode_series.csv", series_csv(es.mean_r_all));
    out.write("encode_sig_series.csv", series_csv(es.mean_r_sig));
    return {{"fdr_scope", "per (checkpoint, layer, participant)"}, {"checkpoints", es.results.size()}};
}

inline json run_probe(const json& cfg, OutputSet& out) {
    const auto& s = cfg["probe"];
    const auto task = s["task"].get<std::string>();
    if (task.empty()) throw ConfigError("probe: [probe] task is required");
    ProbeConfig pc;
    pc.grid = json_vector<double>(s["lambda_grid"], "lambda_grid");
    pc.folds = s["folds"].get<int>();
    pc.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), 2);
    const int layer = cfg["layer"].get<int>();
    const auto ps = probe_series(load_manifest(cfg["manifest"].get<std::string>()), layer, task, pc);
    for (const auto& r : ps.results) {
        const std::string stem = "probe_" + task + "_" + r.checkpoint_id + layer_tag(layer);
        std::string csv = "neuron,r,lambda\n";
        for (Index j = 0; j < r.r.size(); ++j)
            csv += std::to_string(j) + ',' + format_double(r.r(j)) + ',' + format_double(r.lambda(j)) + '\n';
        out.write(stem + ".csv", csv);
        std::string hist = "bin_left,count\n";
        for (int b = 0; b < kHistogramBins; ++b)
            hist += format_double(histogram_bin_left(b)) + ',' + std::to_string(r.histogram[static_cast<std::size_t>(b)]) + '\n';
        out.write(stem + "_hist.csv", hist);
    }
    out.write("probe_series.csv", series_csv(ps.mean_r));
    return {{"checkpoints", ps.results.size()}};
}

inline json run_idim(const json& cfg, OutputSet& out) {
    const auto& s = cfg["idim"];
    IdConfig ic;
    ic.k_grid = json_vector<int>(s["k_grid"], "k_grid");
    ic.plateau_threshold = s["plateau_threshold"].get<double>();
    ic.subsample = s["subsample"].get<Index>();
    ic.seed = derive_seed(cfg["seed"].get<std::uint64_t>(), 3);
    ic.groups = s["groups"].get<std::vector<std::string>>();
    const int layer = cfg["layer"].get<int>();
    const auto is = id_series(load_manifest(cfg["manifest"].get<std::string>()), layer, ic);
    for (std::size_t c = 0; c < is.checkpoints.size(); ++c) {
        const auto& sel = is.selections[c];
        std::string csv = "k,d_hat,loglik,plateau,selected\n";
        for (const auto& row : sel.profile)
            csv += std::to_string(row.k) + ',' + format_double(row.d_hat) + ',' + format_double(row.loglik) + ',' +
                   bool_str(row.plateau) + ',' + bool_str(row.k == sel.k_star) + '\n';
        out.write("idim_" + is.checkpoints[c].checkpoint_id + layer_tag(layer) + "_profile.csv", csv);
    }
    out.write("idim_series.csv", series_csv(is.d_hat));
    return {{"checkpoints", is.checkpoints.size()}};
}

inline json run_xcorr(const json& cfg, OutputSet& out) {
    const auto& s = cfg["xcorr"];
    const auto mode = parse_xcorr_mode(s["mode"].get<std::string>());
    const auto groups = s["groups"].get<std::vector<std::string>>();
    const auto split = s["split"].get<std::string>();
    std::optional<SplitKind> split_kind;
    if (!split.empty()) split_kind = parse_split(split);
    const int layer = cfg["layer"].get<int>();
    const auto manifest = load_manifest(cfg["manifest"].get<std::string>());

    std::vector<Matrix> acts;
    std::vector<std::string> ids;
    for (const auto& c : manifest.checkpoints()) {
        auto entries = manifest.select([&](const ManifestEntry& e) {
            return e.kind == EntryKind::activation && e.layer == layer && e.checkpoint_id == c.checkpoint_id &&
                   (!split_kind || e.split == *split_kind) &&
                   (groups.empty() || std::find(groups.begin(), groups.end(), e.group_label) != groups.end());
        });
        if (entries.empty()) continue;
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::tie(a.split, a.group_label) < std::tie(b.split, b.group_label);
        });
        acts.push_back(stack_entries(manifest, entries, false).data);
        ids.push_back(c.checkpoint_id);
    }
    if (acts.size() < 2) throw DataError("xcorr: need at least 2 checkpoints with activations at layer " + std::to_string(layer));
    const Matrix C = xckpt_correlation(acts, mode);
    std::string csv = "checkpoint_id";
    for (const auto& id : ids) csv += ',' + id;
    csv += '\n';
    for (Index a = 0; a < C.rows(); ++a) {
        csv += ids[static_cast<std::size_t>(a)];
        for (Index b = 0; b < C.cols(); ++b) csv += ',' + format_double(C(a, b));
        csv += '\n';
    }
    out.write("xcorr" + layer_tag(layer) + ".csv", csv);
    return {{"checkpoints", ids.size()}};
}

inline json run_lens(const json& cfg, OutputSet& out) {
    const auto& s = cfg["lens"];
    const auto task = s["task"].get<std::string>();
    if (task.empty()) throw ConfigError("lens: [lens] task is required");
    LensOptions lo;
    lo.eps = s["eps"].get<double>();
    lo.apply_norm = s["apply_norm"].get<bool>();
    const auto series = lens_series(load_manifest(cfg["manifest"].get<std::string>()), cfg["layer"].get<int>(), task, lo);
    out.write("lens_series.csv", series_csv(series));
    return {{"checkpoints", series.size()}};
}

/// Input JSON: {"checkpoints": [{"checkpoint_id", "training_tokens", "outputs": [...], "golds": [...]}]}.
inline json run_score(const json& cfg, OutputSet& out) {
    const auto input = cfg["score"]["input"].get<std::string>();
    if (input.empty()) throw ConfigError("score: [score] input is required");
    if (!fs::exists(input)) throw DataError("score input not found: " + input);
    json doc;
    try {
        doc = json::parse(read_file(input));
    } catch (const json::exception& e) {
        throw DataError("score input " + input + ": " + e.what());
    }
    CheckpointSeries series{"benchmark", {}};
    json summary = json::array();
    try {
        for (const auto& c : doc.at("checkpoints")) {
            const auto outputs = c.at("outputs").get<std::vector<std::string>>();
            const auto golds = c.at("golds").get<std::vector<std::string>>();
            const double score = exact_match_score(outputs, golds);
            const auto id = c.at("checkpoint_id").get<std::string>();
            const auto tokens = c.at("training_tokens").get<std::uint64_t>();
            series.points.push_back({id, tokens, score});
            summary.push_back({{"checkpoint_id", id}, {"training_tokens", tokens}, {"score", score}, {"samples", outputs.size()}});
        }
    } catch (const json::exception& e) {
        throw DataError("score input " + input + ": " + e.what());
    }
    series.validate();
    out.write("score_series.csv", series_csv(series));
    out.write("score.json", json{{"metric", "exact_match"}, {"checkpoints", summary}}.dump(2) + "\n");
    return {{"checkpoints", series.size()}};
}

inline json run_phases(const json& cfg, OutputSet& out) {
    const auto& s = cfg["phases"];
    const auto path = s["series"].get<std::string>();
    if (path.empty()) throw ConfigError("phases: [phases] series is required");
    if (!fs::exists(path)) throw DataError("series file not found: " + path);
    const auto series = read_series_csv(path);
    SegmentOptions opt;
    opt.segments = s["segments"].get<std::size_t>();
    opt.min_length = s["min_length"].get<std::size_t>();
    const auto seg = segment_phases(series, opt);
    json j;
    j["metric"] = series.metric;
    j["boundaries"] = seg.boundaries;
    j["boundary_tokens"] = json::array();
    j["boundary_checkpoints"] = json::array();
    for (auto b : seg.boundaries) {
        j["boundary_tokens"].push_back(series.points[b].training_tokens);
        j["boundary_checkpoints"].push_back(series.points[b].checkpoint_id);
    }
    j["segments"] = json::array();
    std::size_t start = 0;
    for (std::size_t i = 0; i < seg.segments.size(); ++i) {
        const std::size_t end = i < seg.boundaries.size() ? seg.boundaries[i] : series.size();
        j["segments"].push_back({{"start", start}, {"end", end}, {"slope", seg.segments[i].slope},
                                 {"intercept", seg.segments[i].intercept}, {"sse", seg.segments[i].sse}});
        start = end;
    }
    j["sse"] = seg.sse;
    out.write("phases.json", j.dump(2) + "\n");
    return {{"points", series.size()}};
}

inline json run_synth(const json& cfg, OutputSet& out) {
    const auto& s = cfg["synth"];
    SynthDatasetSpec spec;
    spec.seed = cfg["seed"].get<std::uint64_t>();
    if (cfg.contains("layer")) spec.layer = cfg["layer"].get<int>();
    spec.participant = s["participant"].get<std::string>();
    spec.task = s["task"].get<std::string>();
    spec.lens_task = s["lens_task"].get<std::string>();
    const auto manifest_path = write_synth_dataset(spec, out.dir());
    out.add(manifest_path.filename().string());
    const auto m = load_manifest(manifest_path);
    for (const auto& e : m.entries()) {
        out.add(e.path);
        out.add(sidecar_path(e.path).string());
    }
    return {{"entries", m.entries().size()}};
}

inline json run_report(const json&, OutputSet& out) {
    const auto files = write_report(out.dir());
    out.add(files.csv.filename().string());
    out.add(files.svg.filename().string());
    return {{"missing_series", files.missing}};
}

inline std::string record_name(const std::string& analysis) { return "run_" + analysis + ".json"; }

/// Executes the analysis in `cfg` into `out_dir` and writes the run record. Returns the record.
inline json execute(const json& cfg, const fs::path& out_dir) {
    const auto analysis = cfg.at("analysis").get<std::string>();
    if (needs_manifest(analysis) && !fs::exists(cfg["manifest"].get<std::string>()))
        throw DataError("manifest not found: " + cfg["manifest"].get<std::string>());
    fs::create_directories(out_dir);
    OutputSet out(out_dir);
    json notes;
    try {
        if (analysis == "encode") notes = run_encode(cfg, out);
        else if (analysis == "probe") notes = run_probe(cfg, out);
        else if (analysis == "idim") notes = run_idim(cfg, out);
        else if (analysis == "xcorr") notes = run_xcorr(cfg, out);
        else if (analysis == "lens") notes = run_lens(cfg, out);
        else if (analysis == "score") notes = run_score(cfg, out);
        else if (analysis == "phases") notes = run_phases(cfg, out);
        else if (analysis == "synth") notes = run_synth(cfg, out);
        else if (analysis == "report") notes = run_report(cfg, out);
        else throw ConfigError("unknown analysis '" + analysis + "'");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    json record;
    record["analysis"] = analysis;
    record["version"] = kVersion;
    record["config"] = cfg;
    record["config_hash"] = hex64(fnv1a64(cfg.dump()));
    record["seeds"] = derived_seeds(cfg["seed"].get<std::uint64_t>());
    record["notes"] = notes;
    record["outputs"] = out.hashes();
    std::ofstream(out_dir / record_name(analysis), std::ios::binary) << record.dump(2) << '\n';
    return record;
}

struct ReplayResult {
    json record;
    std::vector<std::string> mismatched;
};

/// Re-runs the config stored in a run record and compares every output hash against it.
inline ReplayResult replay(const fs::path& record_path, const fs::path& out_dir) {
    json original;
    try {
        original = json::parse(read_file(record_path));
    } catch (const json::exception& e) {
        throw ConfigError("run record " + record_path.string() + ": " + e.what());
    }
    if (!original.contains("config") || !original.contains("outputs")) throw ConfigError("run record lacks config or outputs");
    ReplayResult res;
    res.record = execute(original["config"], out_dir);
    for (auto& [name, hash] : original["outputs"].items())
        if (!res.record["outputs"].contains(name) || res.record["outputs"][name] != hash) res.mismatched.push_back(name);
    for (auto& [name, hash] : res.record["outputs"].items())
        if (!original["outputs"].contains(name)) res.mismatched.push_back(name);
    return res;
}

/// Maps library exception types to the stable exit codes and prints the message.
template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "error: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const DataError& e) {
        std::cerr << "error: missing or malformed data: " << e.what() << '\n';
        return kMissingData;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure: " << e.what() << '\n';
        return kNumericalFailure;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}

}  // namespace ckptscope::cli

#endif  // CKPTSCOPE_CLI_HPP
