#ifndef CKPTSCOPE_REPORT_HPP
#define CKPTSCOPE_REPORT_HPP

#include "series.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ckptscope {

struct ReportSource {
    std::string metric;
    std::vector<std::string> files;  // first existing file wins
};

/// Series the report looks for, in column order. Benchmark accuracy comes from the lens when
/// available and from exact-match scoring otherwise.
inline std::vector<ReportSource> report_sources() {
    return {{"encoding", {"encode_series.csv"}},
            {"probing", {"probe_series.csv"}},
            {"benchmark", {"lens_series.csv", "score_series.csv"}},
            {"idim", {"idim_series.csv"}}};
}

struct ReportTable {
    std::vector<std::string> metrics;
    std::vector<std::uint64_t> tokens;
    std::vector<std::vector<double>> values;  // [metric][row], NaN where a series has no such checkpoint
    std::vector<std::uint64_t> boundary_tokens;
};

/// Outer join of the series on training tokens, sorted ascending.
inline ReportTable join_series(const std::vector<CheckpointSeries>& series) {
    ReportTable t;
    std::set<std::uint64_t> all;
    for (const auto& s : series)
        for (const auto& p : s.points) all.insert(p.training_tokens);
    t.tokens.assign(all.begin(), all.end());
    for (const auto& s : series) {
        t.metrics.push_back(s.metric);
        std::map<std::uint64_t, double> lookup;
        for (const auto& p : s.points) lookup[p.training_tokens] = p.value;
        std::vector<double> col;
        for (auto tok : t.tokens) {
            auto it = lookup.find(tok);
            col.push_back(it == lookup.end() ? std::nan("") : it->second);
        }
        t.values.push_back(std::move(col));
    }
    return t;
}

inline std::string report_csv(const ReportTable& t) {
    std::ostringstream out;
    out << "training_tokens";
    for (const auto& m : t.metrics) out << ',' << m;
    out << '\n';
    for (std::size_t r = 0; r < t.tokens.size(); ++r) {
        out << t.tokens[r];
        for (const auto& col : t.values) out << ',' << (std::isnan(col[r]) ? std::string{} : format_double(col[r]));
        out << '\n';
    }
    return out.str();
}

/// Standalone SVG: one min-max normalized polyline per metric over log10(tokens), dashed vertical
/// lines at phase boundaries.
inline std::string report_svg(const ReportTable& t) {
    constexpr double W = 720, H = 400, L = 60, R = 150, T = 30, B = 50;
    static const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b"};
    auto fmt = [](double v) {
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(2);
        s << v;
        return s.str();
    };
    double x0 = 0, x1 = 1;
    if (!t.tokens.empty()) {
        x0 = std::log10(static_cast<double>(std::max<std::uint64_t>(t.tokens.front(), 1)));
        x1 = std::log10(static_cast<double>(std::max<std::uint64_t>(t.tokens.back(), 1)));
    }
    if (x1 <= x0) x1 = x0 + 1.0;
    auto px = [&](std::uint64_t tok) {
        return L + (std::log10(static_cast<double>(std::max<std::uint64_t>(tok, 1))) - x0) / (x1 - x0) * (W - L - R);
    };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
        << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << (W - R + L) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">log10(training tokens)</text>\n";
    out << "<text x=\"14\" y=\"" << (H - B + T) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << (H - B + T) / 2
        << ")\" text-anchor=\"middle\">normalized value</text>\n";
    for (int e = static_cast<int>(std::ceil(x0)); e <= static_cast<int>(std::floor(x1)); ++e) {
        const double x = L + (e - x0) / (x1 - x0) * (W - L - R);
        out << "<text x=\"" << fmt(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << e << "</text>\n";
    }
    for (auto b : t.boundary_tokens)
        out << "<line class=\"boundary\" x1=\"" << fmt(px(b)) << "\" y1=\"" << T << "\" x2=\"" << fmt(px(b)) << "\" y2=\"" << H - B
            << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";

    for (std::size_t m = 0; m < t.metrics.size(); ++m) {
        const auto& col = t.values[m];
        double lo = INFINITY, hi = -INFINITY;
        for (double v : col)
            if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
        std::ostringstream pts;
        for (std::size_t r = 0; r < col.size(); ++r) {
            if (!std::isfinite(col[r])) continue;
            const double norm = hi > lo ? (col[r] - lo) / (hi - lo) : 0.5;
            if (pts.tellp() > 0) pts << ' ';
            pts << fmt(px(t.tokens[r])) << ',' << fmt(H - B - norm * (H - B - T));
        }
        const char* color = colors[m % std::size(colors)];
        out << "<polyline data-metric=\"" << t.metrics[m] << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
            << pts.str() << "\"/>\n";
        out << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 18 * (m + 1) << "\" font-size=\"12\" fill=\"" << color << "\">"
            << t.metrics[m] << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

struct ReportFiles {
    std::filesystem::path csv, svg;
    std::vector<std::string> missing;
};

/// Reads the known series files from `dir` and writes report.csv and report.svg there.
/// Missing series are skipped with a warning; phases.json boundaries are drawn when present.
inline ReportFiles write_report(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("results directory not found: " + dir.string());
    ReportFiles out;
    std::vector<CheckpointSeries> series;
    for (const auto& src : report_sources()) {
        auto it = std::find_if(src.files.begin(), src.files.end(), [&](const std::string& f) { return fs::exists(dir / f); });
        if (it == src.files.end()) {
            warn("report: no " + src.metric + " series in " + dir.string() + "; column omitted");
            out.missing.push_back(src.metric);
            continue;
        }
        series.push_back(read_series_csv(dir / *it, src.metric));
    }
    if (series.empty()) throw DataError("report: no series files in " + dir.string());

    auto table = join_series(series);
    if (fs::exists(dir / "phases.json")) {
        std::ifstream in(dir / "phases.json");
        try {
            const auto j = nlohmann::json::parse(in);
            for (const auto& b : j.at("boundary_tokens")) table.boundary_tokens.push_back(b.get<std::uint64_t>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("report: malformed phases.json: " + std::string(e.what()));
        }
    }
    out.csv = dir / "report.csv";
    out.svg = dir / "report.svg";
    std::ofstream(out.csv, std::ios::binary) << report_csv(table);
    std::ofstream(out.svg, std::ios::binary) << report_svg(table);
    return out;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_REPORT_HPP
