#ifndef CKPTSCOPE_AMX_HPP
#define CKPTSCOPE_AMX_HPP

// AMX binary matrix format, little-endian throughout:
//   magic "AMX1" | dtype_code u32 (1 = binary32) | ndim u32 | dims ndim x u64 | row-major payload

#include "common.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

namespace ckptscope {

inline constexpr std::array<char, 4> kAmxMagic{'A', 'M', 'X', '1'};
inline constexpr std::uint32_t kAmxFloat32 = 1;

struct AmxArray {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    friend bool operator==(const AmxArray&, const AmxArray&) = default;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode_amx(const AmxArray& a) {
    if (a.dims.empty() || a.dims.size() > 3) throw std::invalid_argument("AMX ndim must be 1, 2 or 3");
    std::uint64_t count = 1;
    for (auto d : a.dims) {
        if (d == 0) throw std::invalid_argument("AMX dims must be nonzero");
        if (count > std::numeric_limits<std::uint64_t>::max() / 4 / d)
            throw std::invalid_argument("AMX dimension product overflows");
        count *= d;
    }
    if (count != a.values.size()) throw std::invalid_argument("AMX payload does not match dims");
    for (float v : a.values)
        if (std::isinf(v)) throw std::invalid_argument("AMX values must be finite or NaN");

    std::string out;
    out.reserve(12 + 8 * a.dims.size() + 4 * a.values.size());
    out.append(kAmxMagic.data(), kAmxMagic.size());
    detail::put_le<std::uint32_t>(out, kAmxFloat32);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) detail::put_le<std::uint64_t>(out, d);
    for (float v : a.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline AmxArray decode_amx(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12) throw FormatError("AMX header truncated");
    if (std::memcmp(p, kAmxMagic.data(), 4) != 0) throw FormatError("bad AMX magic");
    const auto dtype = detail::get_le<std::uint32_t>(p + 4);
    if (dtype != kAmxFloat32) throw FormatError("unsupported AMX dtype_code " + std::to_string(dtype));
    const auto ndim = detail::get_le<std::uint32_t>(p + 8);
    if (ndim < 1 || ndim > 3) throw FormatError("unsupported AMX ndim " + std::to_string(ndim));
    const std::size_t header = 12 + 8 * static_cast<std::size_t>(ndim);
    if (bytes.size() < header) throw FormatError("AMX dims truncated");

    AmxArray a;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        auto d = detail::get_le<std::uint64_t>(p + 12 + 8 * i);
        if (d == 0) throw FormatError("AMX dim is zero");
        if (count > std::numeric_limits<std::uint64_t>::max() / 4 / d) throw FormatError("AMX dims overflow");
        count *= d;
        a.dims.push_back(d);
    }
    const std::uint64_t payload = bytes.size() - header;
    if (payload < 4 * count) throw FormatError("AMX payload truncated");
    if (payload > 4 * count) throw FormatError("AMX payload has trailing bytes");

    a.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
        a.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + header + 4 * i));
    return a;
}

inline void write_amx(const AmxArray& a, const std::filesystem::path& path) {
    const std::string bytes = encode_amx(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

inline AmxArray read_amx(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_amx(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

/// 1-D arrays become a column vector; 3-D arrays are rejected.
inline Matrix to_matrix(const AmxArray& a) {
    if (a.dims.size() == 1) {
        Matrix m(static_cast<Index>(a.dims[0]), 1);
        for (Index i = 0; i < m.rows(); ++i) m(i, 0) = a.values[static_cast<std::size_t>(i)];
        return m;
    }
    if (a.dims.size() != 2) throw FormatError("expected a 1-D or 2-D AMX array");
    const auto rows = static_cast<Index>(a.dims[0]);
    const auto cols = static_cast<Index>(a.dims[1]);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = a.values[static_cast<std::size_t>(i * cols + j)];
    return m;
}

inline AmxArray from_matrix(const Matrix& m) {
    AmxArray a;
    a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) a.values.push_back(static_cast<float>(m(i, j)));
    return a;
}

inline AmxArray from_vector(const Vector& v) {
    AmxArray a;
    a.dims = {static_cast<std::uint64_t>(v.size())};
    for (Index i = 0; i < v.size(); ++i) a.values.push_back(static_cast<float>(v(i)));
    return a;
}

inline void write_matrix(const Matrix& m, const std::filesystem::path& path) { write_amx(from_matrix(m), path); }

inline Matrix read_matrix(const std::filesystem::path& path) { return to_matrix(read_amx(path)); }

/// Replace NaNs by their column mean. Returns the number of imputed cells; warns when nonzero.
inline Index impute_nan_columns(Matrix& m, std::string_view what = "matrix") {
    Index imputed = 0;
    for (Index j = 0; j < m.cols(); ++j) {
        double sum = 0.0;
        Index finite = 0;
        for (Index i = 0; i < m.rows(); ++i)
            if (!std::isnan(m(i, j))) {
                sum += m(i, j);
                ++finite;
            }
        const double mean = finite > 0 ? sum / static_cast<double>(finite) : 0.0;
        for (Index i = 0; i < m.rows(); ++i)
            if (std::isnan(m(i, j))) {
                m(i, j) = mean;
                ++imputed;
            }
    }
    if (imputed > 0) warn(std::string(what) + ": mean-imputed " + std::to_string(imputed) + " NaN cells");
    return imputed;
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_AMX_HPP
