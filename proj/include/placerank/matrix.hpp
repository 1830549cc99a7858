#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace placerank {

/// Dense row-major matrix of 32-bit floats with a fixed binary file format:
///
///   bytes 0..3   magic "MQBL"
///   bytes 4..7   format version, u32 little-endian (currently 1)
///   bytes 8..11  row count, u32 little-endian
///   bytes 12..15 column count, u32 little-endian
///   then rows*cols IEEE-754 binary32 values, little-endian, row-major
///
/// Values are kept as float in memory so that save followed by load is
/// bit-identical.
class DescriptorMatrix {
public:
    DescriptorMatrix() = default;
    DescriptorMatrix(std::uint32_t rows, std::uint32_t cols, float fill = 0.0f);
    DescriptorMatrix(std::uint32_t rows, std::uint32_t cols, std::vector<float> values);

    std::uint32_t rows() const { return rows_; }
    std::uint32_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    float& at(std::uint32_t r, std::uint32_t c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
    float at(std::uint32_t r, std::uint32_t c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<const float> row(std::uint32_t r) const {
        return {values_.data() + static_cast<std::size_t>(r) * cols_, cols_};
    }
    std::span<float> row(std::uint32_t r) {
        return {values_.data() + static_cast<std::size_t>(r) * cols_, cols_};
    }

    const std::vector<float>& values() const { return values_; }

    bool operator==(const DescriptorMatrix&) const = default;

    /// Throws ValidationError if any stored value is NaN or infinite.
    void require_finite(const std::string& context) const;

    /// Writes the matrix atomically (temp file + rename).
    /// Throws IoError on any filesystem failure.
    void save(const std::filesystem::path& path) const;

    /// Throws IoError for a missing file, bad magic, unsupported version, or
    /// truncation, and ValidationError for zero dimensions or non-finite
    /// values. Every message names the offending path.
    static DescriptorMatrix load(const std::filesystem::path& path);

private:
    std::uint32_t rows_ = 0;
    std::uint32_t cols_ = 0;
    std::vector<float> values_;
};

/// Euclidean distance between two equal-length float rows, accumulated in
/// double precision. Throws ValidationError on length mismatch.
double euclidean_distance(std::span<const float> a, std::span<const float> b);

} // namespace placerank
