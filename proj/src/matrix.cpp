#include "placerank/matrix.hpp"

#include "placerank/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace placerank {

namespace {

constexpr char kMagic[4] = {'M', 'Q', 'B', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

DescriptorMatrix::DescriptorMatrix(std::uint32_t rows, std::uint32_t cols, float fill)
    : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {}

DescriptorMatrix::DescriptorMatrix(std::uint32_t rows, std::uint32_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(rows) * cols) {
        throw ValidationError("matrix value count does not match rows*cols");
    }
}

void DescriptorMatrix::require_finite(const std::string& context) const {
    for (float v : values_) {
        if (!std::isfinite(v)) {
            throw ValidationError(context + ": matrix contains a non-finite value");
        }
    }
}

void DescriptorMatrix::save(const std::filesystem::path& path) const {
    std::string buf;
    buf.reserve(16 + values_.size() * 4);
    buf.append(kMagic, 4);
    put_u32_le(buf, kFormatVersion);
    put_u32_le(buf, rows_);
    put_u32_le(buf, cols_);
    for (float v : values_) {
        put_u32_le(buf, std::bit_cast<std::uint32_t>(v));
    }

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp.string() + " for writing");
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) {
            throw IoError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

DescriptorMatrix DescriptorMatrix::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open matrix file " + path.string());
    }
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16) {
        throw IoError("matrix file " + path.string() + " is truncated (no header)");
    }
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw IoError("matrix file " + path.string() + " has a bad magic tag");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    std::uint32_t version = get_u32_le(p + 4);
    if (version != kFormatVersion) {
        throw IoError("matrix file " + path.string() + " has unsupported version " + std::to_string(version));
    }
    std::uint32_t rows = get_u32_le(p + 8);
    std::uint32_t cols = get_u32_le(p + 12);
    if (rows == 0 || cols == 0) {
        throw ValidationError("matrix file " + path.string() + " has zero rows or columns");
    }
    std::size_t expected = 16 + static_cast<std::size_t>(rows) * cols * 4;
    if (buf.size() != expected) {
        throw IoError("matrix file " + path.string() + " is truncated or oversized (expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(buf.size()) + ")");
    }

    std::vector<float> values(static_cast<std::size_t>(rows) * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<float>(get_u32_le(p + 16 + i * 4));
    }
    DescriptorMatrix m(rows, cols, std::move(values));
    m.require_finite("matrix file " + path.string());
    return m;
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ValidationError("euclidean_distance: length mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

} // namespace placerank
