#ifndef CKPTSCOPE_SERIES_HPP
#define CKPTSCOPE_SERIES_HPP

#include "common.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ckptscope {

struct SeriesPoint {
    std::string checkpoint_id;
    std::uint64_t training_tokens = 0;
    double value = 0.0;
};

/// Metric values over checkpoints ordered by training tokens.
struct CheckpointSeries {
    std::string metric;  // "encoding", "probing", "benchmark", "idim", ...
    std::vector<SeriesPoint> points;

    std::size_t size() const { return points.size(); }

    std::vector<double> values() const {
        std::vector<double> v;
        for (const auto& p : points) v.push_back(p.value);
        return v;
    }

    void validate() const {
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (!std::isfinite(points[i].value))
                throw NumericalError("series '" + metric + "': non-finite value at checkpoint '" +
                                     points[i].checkpoint_id + "'");
            if (i > 0 && points[i].training_tokens <= points[i - 1].training_tokens)
                throw DataError("series '" + metric + "': training_tokens must strictly increase");
        }
    }
};

/// CSV with header `checkpoint_id,training_tokens,value`.
inline void write_series_csv(const CheckpointSeries& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "checkpoint_id,training_tokens,value\n";
    for (const auto& p : s.points) out << p.checkpoint_id << ',' << p.training_tokens << ',' << format_double(p.value) << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Reads the first three columns of a series CSV (extra columns are ignored).
inline CheckpointSeries read_series_csv(const std::filesystem::path& path, std::string metric = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open series " + path.string());
    CheckpointSeries s;
    s.metric = metric.empty() ? path.stem().string() : std::move(metric);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty series file " + path.string());
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split_csv_line(line);
        if (cells.size() < 3) throw DataError("malformed series row in " + path.string());
        try {
            s.points.push_back({cells[0], std::stoull(cells[1]), parse_double(cells[2])});
        } catch (const std::logic_error&) {
            throw DataError("malformed series row in " + path.string());
        }
    }
    return s;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_SERIES_HPP
