#ifndef CKPTSCOPE_SYNTH_HPP
#define CKPTSCOPE_SYNTH_HPP

// Seeded ground-truth generators. Every output is a pure function of its spec.

#include "dynamics.hpp"
#include "manifest.hpp"
#include "probing.hpp"
#include "ridge.hpp"
#include "rng.hpp"
#include "series.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace ckptscope {

/// Centered copy of `noise` rescaled so var(signal) / var(result) = snr exactly (population variances).
inline Vector noise_at_snr(const Vector& signal, const Vector& noise, double snr) {
    const double var_s = (signal.array() - signal.mean()).square().mean();
    const Vector e = noise.array() - noise.mean();
    const double var_e = e.squaredNorm() / static_cast<double>(e.size());
    if (var_e <= 0.0 || var_s <= 0.0) return Vector::Zero(signal.size());
    return e * std::sqrt(var_s / snr / var_e);
}

struct LinearResponseSpec {
    std::uint64_t seed = 0;
    Index samples = 1000;
    Index features = 10;
    Index targets = 20;
    DelaySpec delays;
    double snr = 4.0;  // sample var(signal) / var(noise) per target; infinity gives noiseless targets
};

struct LinearResponse {
    Matrix X;
    Matrix Y;
    Matrix signal;
    Matrix W_true;  // (|delays| * features) x targets
    DelaySpec delays;
};

/// Y = delay_embed(X) W + e with Gaussian X, W and noise variance var(signal_v) / snr per target.
inline LinearResponse gen_linear_response(const LinearResponseSpec& spec) {
    if (spec.samples <= 0 || spec.features <= 0 || spec.targets <= 0)
        throw std::invalid_argument("gen_linear_response: sizes must be positive");
    if (!(spec.snr > 0.0)) throw std::invalid_argument("gen_linear_response: snr must be positive");
    Rng rng(spec.seed);
    LinearResponse out;
    out.delays = spec.delays;
    out.X = rng.normal_matrix(spec.samples, spec.features);
    const Matrix Xd = delay_embed(out.X, spec.delays);
    out.W_true = rng.normal_matrix(Xd.cols(), spec.targets);
    out.signal = Xd * out.W_true;
    out.Y = out.signal;
    if (std::isfinite(spec.snr)) {
        const Matrix noise = rng.normal_matrix(spec.samples, spec.targets);
        for (Index v = 0; v < spec.targets; ++v) out.Y.col(v) += noise_at_snr(out.signal.col(v), noise.col(v), spec.snr);
    }
    return out;
}

enum class ManifoldKind { uniform_cube, gaussian };

struct ManifoldSpec {
    std::uint64_t seed = 0;
    Index points = 1000;
    Index true_dim = 2;
    Index ambient_dim = 50;
    ManifoldKind kind = ManifoldKind::uniform_cube;
    double noise = 0.0;  // isotropic Gaussian sigma added after embedding
};

struct ManifoldSample {
    Matrix points;     // n x ambient
    Matrix latent;     // n x true_dim
    Matrix embedding;  // ambient x ambient orthogonal
};

/// Haar-random orthogonal matrix (QR of a Gaussian matrix with sign-corrected R diagonal).
inline Matrix random_orthogonal(Index dim, Rng& rng) {
    const Matrix g = rng.normal_matrix(dim, dim);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < dim; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

inline ManifoldSample gen_manifold(const ManifoldSpec& spec) {
    if (spec.points <= 0 || spec.true_dim <= 0) throw std::invalid_argument("gen_manifold: sizes must be positive");
    if (spec.true_dim > spec.ambient_dim) throw std::invalid_argument("gen_manifold: true_dim exceeds ambient_dim");
    Rng rng(spec.seed);
    ManifoldSample out;
    out.latent = spec.kind == ManifoldKind::uniform_cube ? rng.uniform_matrix(spec.points, spec.true_dim)
                                                         : rng.normal_matrix(spec.points, spec.true_dim);
    out.embedding = random_orthogonal(spec.ambient_dim, rng);
    out.points = out.latent * out.embedding.topRows(spec.true_dim);
    if (spec.noise > 0.0) out.points += spec.noise * rng.normal_matrix(spec.points, spec.ambient_dim);
    return out;
}

struct PhaseCurveSpec {
    std::uint64_t seed = 0;
    std::size_t checkpoints = 28;
    double first_tokens = 1e9;
    double last_tokens = 3.896e12;
    std::vector<std::size_t> boundaries{9, 19};  // first index of segments 2 and 3
    std::vector<double> slopes{1.0, -0.5, 1.0};  // per segment, value units per decade
    double start_value = 0.0;
    double noise_sigma = 0.0;
    std::string metric = "synthetic";
};

struct PhaseCurve {
    CheckpointSeries series;
    std::vector<double> clean;
};

/// Log-spaced token counts from first to last (rounded to integers, forced strictly increasing).
inline std::vector<std::uint64_t> log_spaced_tokens(std::size_t n, double first, double last) {
    std::vector<std::uint64_t> t(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double f = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        t[i] = static_cast<std::uint64_t>(std::llround(std::pow(10.0, std::log10(first) + f * (std::log10(last) - std::log10(first)))));
        if (i > 0 && t[i] <= t[i - 1]) t[i] = t[i - 1] + 1;
    }
    return t;
}

/// Continuous piecewise-linear curve in log10(tokens) with the given per-segment slopes, plus Gaussian noise.
/// Each kink sits halfway (in log tokens) between checkpoints b-1 and b, so every checkpoint lies on
/// exactly one segment's line and the noiseless segmentation is unique.
inline PhaseCurve gen_phase_curve(const PhaseCurveSpec& spec) {
    if (spec.slopes.size() != spec.boundaries.size() + 1)
        throw std::invalid_argument("gen_phase_curve: need one slope per segment");
    for (std::size_t i = 0; i < spec.boundaries.size(); ++i) {
        const auto b = spec.boundaries[i];
        if (b == 0 || b >= spec.checkpoints || (i > 0 && b <= spec.boundaries[i - 1]))
            throw std::invalid_argument("gen_phase_curve: boundaries must be strictly increasing interior indices");
    }
    const auto tokens = log_spaced_tokens(spec.checkpoints, spec.first_tokens, spec.last_tokens);
    std::vector<double> x;
    for (auto t : tokens) x.push_back(std::log10(static_cast<double>(t)));
    std::vector<double> kinks;
    for (auto b : spec.boundaries) kinks.push_back(0.5 * (x[b - 1] + x[b]));

    Rng rng(spec.seed);
    PhaseCurve out;
    out.series.metric = spec.metric;
    for (std::size_t i = 0; i < spec.checkpoints; ++i) {
        double value = spec.start_value, from = x.front();
        for (std::size_t s = 0; s < spec.slopes.size(); ++s) {
            const double to = std::min(x[i], s < kinks.size() ? kinks[s] : x[i]);
            if (to > from) value += spec.slopes[s] * (to - from);
            from = std::max(from, to);
        }
        out.clean.push_back(value);
        const double noisy = value + (spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0);
        out.series.points.push_back({"ckpt" + std::to_string(i), tokens[i], noisy});
    }
    return out;
}

inline double value_range(const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
}

struct ProbeDataSpec {
    std::uint64_t seed = 0;
    Index samples = 500;
    Index choices = 4;
    Index neurons = 50;
    double snr = 4.0;          // var(A M) / var(noise) per neuron at strength 1
    double strength = 1.0;     // scales A M; 0 gives activations independent of the answers
};

struct ProbeData {
    AnswerMatrix answers;
    Matrix activations;
    Matrix mapping;  // choices x neurons
};

/// Act = strength * A M + e, with uniformly random gold choices.
inline ProbeData gen_probe_data(const ProbeDataSpec& spec) {
    if (spec.samples <= 0 || spec.choices <= 0 || spec.neurons <= 0) throw std::invalid_argument("gen_probe_data: sizes must be positive");
    Rng rng(spec.seed);
    std::vector<AnswerSample> samples;
    for (Index s = 0; s < spec.samples; ++s)
        samples.push_back({static_cast<std::size_t>(spec.choices), static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(spec.choices)))});
    ProbeData out;
    out.answers = build_answer_matrix(samples, static_cast<std::size_t>(spec.choices));
    out.mapping = rng.normal_matrix(spec.choices, spec.neurons);
    const Matrix signal = out.answers.values * out.mapping;
    const Matrix noise = rng.normal_matrix(spec.samples, spec.neurons);
    out.activations.resize(spec.samples, spec.neurons);
    for (Index j = 0; j < spec.neurons; ++j)
        out.activations.col(j) = spec.strength * signal.col(j) + noise_at_snr(signal.col(j), noise.col(j), spec.snr);
    return out;
}

struct EncodingCheckpointsSpec {
    std::uint64_t seed = 0;
    Index segments = 6;          // groups (movies)
    Index train_rows = 120;      // per segment
    Index test_rows = 60;        // per segment
    Index features = 8;
    Index targets = 30;
    DelaySpec delays;
    double snr = 2.0;
    std::vector<double> alignment{0.1, 0.4, 0.8, 0.5, 0.3, 0.6, 0.85, 0.95};  // one per checkpoint, in [0, 1]
};

struct EncodingCheckpoints {
    Matrix latent;                      // rows = all train segments then all test segments
    Matrix Y;
    std::vector<Matrix> activations;    // per checkpoint
    std::vector<std::string> labels;    // per row
    std::vector<bool> is_test;          // per row
};

/// Targets driven by fixed latent features; checkpoint c exposes a * latent + sqrt(1 - a^2) * noise,
/// so the achievable encoding accuracy follows the alignment template.
inline EncodingCheckpoints gen_encoding_checkpoints(const EncodingCheckpointsSpec& spec) {
    Rng rng(spec.seed);
    EncodingCheckpoints out;
    const Index seg_rows = spec.train_rows + spec.test_rows;
    const Index T = spec.segments * seg_rows;
    out.latent = rng.normal_matrix(T, spec.features);
    const Matrix W = rng.normal_matrix(spec.features * static_cast<Index>(spec.delays.delays.size()), spec.targets);
    out.Y.resize(T, spec.targets);
    // Rows are laid out as train segments first, then test segments.
    for (int pass = 0; pass < 2; ++pass)
        for (Index g = 0; g < spec.segments; ++g) {
            const Index len = pass == 0 ? spec.train_rows : spec.test_rows;
            for (Index i = 0; i < len; ++i) {
                out.labels.push_back("movie" + std::to_string(g));
                out.is_test.push_back(pass == 1);
            }
        }
    Index at = 0;
    for (int pass = 0; pass < 2; ++pass)
        for (Index g = 0; g < spec.segments; ++g) {
            const Index len = pass == 0 ? spec.train_rows : spec.test_rows;
            out.Y.middleRows(at, len) = delay_embed(out.latent.middleRows(at, len), spec.delays) * W;
            at += len;
        }
    const Matrix noise = rng.normal_matrix(T, spec.targets);
    for (Index v = 0; v < spec.targets; ++v) out.Y.col(v) += noise_at_snr(out.Y.col(v), noise.col(v), spec.snr);
    for (double a : spec.alignment) {
        if (a < 0.0 || a > 1.0) throw std::invalid_argument("gen_encoding_checkpoints: alignment must lie in [0, 1]");
        out.activations.push_back(a * out.latent + std::sqrt(1.0 - a * a) * rng.normal_matrix(T, spec.features));
    }
    return out;
}

struct SynthDatasetSpec {
    std::uint64_t seed = 0;
    int layer = 25;
    std::string participant = "sub01";
    std::string task = "mmlu";
    std::string lens_task = "arith";
    EncodingCheckpointsSpec encoding;
    Index probe_samples = 400;
    Index probe_choices = 4;  // probe activations share the encoding feature width, as one layer has one width
    std::vector<double> probe_strength{0.05, 0.1, 0.2, 0.2, 0.25, 0.5, 0.8, 1.0};
    Index lens_samples = 60;
    Index lens_vocab = 12;
    Index lens_width = 16;
    std::vector<double> lens_signal{0.0, 0.2, 0.4, 0.4, 0.5, 0.9, 1.4, 2.0};
    double first_tokens = 1e9;
    double last_tokens = 3.896e12;
};

/// Writes AMX files, sidecars and manifest.json for every analysis into `dir`. Returns the manifest path.
inline std::filesystem::path write_synth_dataset(const SynthDatasetSpec& spec, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const std::size_t K = spec.encoding.alignment.size();
    if (spec.probe_strength.size() != K || spec.lens_signal.size() != K)
        throw std::invalid_argument("write_synth_dataset: per-checkpoint schedules must have equal length");
    fs::create_directories(dir);
    const auto tokens = log_spaced_tokens(K, spec.first_tokens, spec.last_tokens);
    Manifest manifest({}, dir);
    auto emit = [&](const Matrix& m, ManifestEntry meta, bool as_vector = false) {
        const fs::path file = dir / meta.path;
        if (as_vector) write_amx(from_vector(m.reshaped()), file);
        else write_matrix(m, file);
        write_sidecar(file, meta);
        manifest.add(std::move(meta));
    };
    auto ckpt_name = [](std::size_t c) { return "step" + std::to_string(c); };

    // Encoding: targets per (movie, split), activations per (checkpoint, movie, split).
    auto enc_spec = spec.encoding;
    enc_spec.seed = derive_seed(spec.seed, 1);
    const auto enc = gen_encoding_checkpoints(enc_spec);
    auto segment_rows = [&](const std::string& label, bool test) {
        std::vector<Index> rows;
        for (std::size_t i = 0; i < enc.labels.size(); ++i)
            if (enc.labels[i] == label && enc.is_test[i] == test) rows.push_back(static_cast<Index>(i));
        return rows;
    };

    auto probe_base = ProbeDataSpec{derive_seed(spec.seed, 2), spec.probe_samples, spec.probe_choices, spec.encoding.features, 4.0, 1.0};
    const auto probe = gen_probe_data(probe_base);
    const auto probe_split = split_by_ratio(spec.probe_samples, {4, 1}, derive_seed(spec.seed, 3));
    manifest.split_seed = derive_seed(spec.seed, 3);

    Rng lens_rng(derive_seed(spec.seed, 4));
    std::vector<Index> gold(static_cast<std::size_t>(spec.lens_samples));
    for (auto& g : gold) g = static_cast<Index>(lens_rng.below(static_cast<std::uint64_t>(spec.lens_vocab)));

    for (std::size_t c = 0; c < K; ++c) {
        const std::string id = ckpt_name(c);
        for (Index g = 0; g < spec.encoding.segments; ++g) {
            const std::string label = "movie" + std::to_string(g);
            for (bool test : {false, true}) {
                const auto split = test ? SplitKind::test : SplitKind::train;
                const std::string stem = "act_" + id + "_L" + std::to_string(spec.layer) + "_" + label + "_" + to_string(split) + ".amx";
                emit(select_rows(enc.activations[c], segment_rows(label, test)),
                     {stem, id, tokens[c], spec.layer, EntryKind::activation, label, split, ""});
            }
        }
        // Probe activations with a per-checkpoint answer dependence strength.
        Rng noise_rng(derive_seed(spec.seed, 100 + c));
        const Matrix noise = noise_rng.normal_matrix(spec.probe_samples, spec.encoding.features);
        const Matrix signal = probe.answers.values * probe.mapping;
        Matrix act(spec.probe_samples, spec.encoding.features);
        for (Index j = 0; j < spec.encoding.features; ++j) {
            const double sd = std::sqrt((signal.col(j).array() - signal.col(j).mean()).square().mean());
            act.col(j) = spec.probe_strength[c] * signal.col(j) + noise.col(j) * sd;
        }
        for (bool test : {false, true}) {
            const auto split = test ? SplitKind::test : SplitKind::train;
            const auto& rows = test ? probe_split.test_indices : probe_split.train_indices;
            emit(select_rows(act, rows), {"probe_" + id + "_L" + std::to_string(spec.layer) + "_" + spec.task + "_" + to_string(split) + ".amx",
                                          id, tokens[c], spec.layer, EntryKind::activation, spec.task, split, ""});
        }
        // Lens bundle: hidden states lean toward the gold token's unembedding row as training proceeds.
        Rng lr(derive_seed(spec.seed, 200 + c));
        const Matrix U = lr.normal_matrix(spec.lens_vocab, spec.lens_width);
        Matrix hidden = lr.normal_matrix(spec.lens_samples, spec.lens_width);
        for (Index s = 0; s < spec.lens_samples; ++s) hidden.row(s) += spec.lens_signal[c] * U.row(gold[static_cast<std::size_t>(s)]);
        const Vector gain = Vector::Ones(spec.lens_width) + 0.1 * lr.normal_matrix(spec.lens_width, 1);
        emit(hidden, {"hidden_" + id + "_L" + std::to_string(spec.layer) + ".amx", id, tokens[c], spec.layer, EntryKind::hidden, spec.lens_task, SplitKind::test, ""});
        emit(U, {"unembed_" + id + ".amx", id, tokens[c], spec.layer, EntryKind::unembed, "", SplitKind::test, ""});
        emit(gain, {"normgain_" + id + ".amx", id, tokens[c], spec.layer, EntryKind::normgain, "", SplitKind::test, ""}, true);
    }

    for (Index g = 0; g < spec.encoding.segments; ++g) {
        const std::string label = "movie" + std::to_string(g);
        for (bool test : {false, true}) {
            const auto split = test ? SplitKind::test : SplitKind::train;
            emit(select_rows(enc.Y, segment_rows(label, test)),
                 {"target_" + spec.participant + "_" + label + "_" + to_string(split) + ".amx", "", 0, 0, EntryKind::target, label, split, spec.participant});
        }
    }
    emit(select_rows(probe.answers.values, probe_split.train_indices),
         {"answers_" + spec.task + "_train.amx", "", 0, 0, EntryKind::answer, spec.task, SplitKind::train, ""});
    emit(select_rows(probe.answers.values, probe_split.test_indices),
         {"answers_" + spec.task + "_test.amx", "", 0, 0, EntryKind::answer, spec.task, SplitKind::test, ""});
    Vector gold_vec(spec.lens_samples);
    for (Index s = 0; s < spec.lens_samples; ++s) gold_vec(s) = static_cast<double>(gold[static_cast<std::size_t>(s)]);
    emit(gold_vec, {"gold_tokens_" + spec.lens_task + ".amx", "", 0, 0, EntryKind::answer, spec.lens_task, SplitKind::test, ""}, true);

    manifest.validate();
    const auto path = dir / "manifest.json";
    save_manifest(manifest, path);
    return path;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_SYNTH_HPP
