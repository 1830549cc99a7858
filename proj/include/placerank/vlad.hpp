#pragma once

#include "placerank/bundle.hpp"
#include "placerank/matrix.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace placerank::vlad {

/// K x D cluster vocabulary with the assignment sharpness used by
/// soft_assign. Serializes as one MQBL matrix file plus a `<path>.json`
/// sidecar carrying k, d, and sharpness.
struct ClusterCenters {
    DescriptorMatrix centers;
    double sharpness = 1.0;

    std::uint32_t cluster_count() const { return centers.rows(); }
    std::uint32_t dim() const { return centers.cols(); }

    void save(const std::filesystem::path& path) const;
    static ClusterCenters load(const std::filesystem::path& path);
};

/// Dense grid of local descriptors for one image: cell (x, y) of a
/// grid_w x grid_h layout is row y*grid_w + x of `cells`. image_w/image_h
/// are the pixel dimensions the grid was computed from, so region boxes in
/// pixel coordinates can be mapped onto cells. Serializes as one MQBL
/// matrix plus a `<path>.json` sidecar.
struct SpatialDescriptorMap {
    int grid_w = 0;
    int grid_h = 0;
    int image_w = 0;
    int image_h = 0;
    DescriptorMatrix cells;

    std::uint32_t dim() const { return cells.cols(); }

    void save(const std::filesystem::path& path) const;
    static SpatialDescriptorMap load(const std::filesystem::path& path);
};

/// PCA whitening transform: out_dim x D projection rows (eigenvectors
/// scaled by inverse square-root eigenvalues) and the 1 x D training mean.
/// Serializes as one MQBL matrix (row 0 = mean, remaining rows = projection)
/// plus a `<path>.json` sidecar.
struct WhiteningTransform {
    DescriptorMatrix mean;
    DescriptorMatrix projection;

    std::uint32_t out_dim() const { return projection.rows(); }
    std::uint32_t dim() const { return projection.cols(); }

    void save(const std::filesystem::path& path) const;
    static WhiteningTransform load(const std::filesystem::path& path);
};

/// Soft cluster assignment: weight_k proportional to
/// exp(-sharpness * ||x - c_k||^2), normalized to sum to 1. Computed with
/// the max logit subtracted before exponentiation so large sharpness cannot
/// overflow. Throws ValidationError on dimension mismatch or non-finite
/// input.
std::vector<double> soft_assign(std::span<const float> x, const ClusterCenters& centers);

/// Aggregates descriptors into a K*D vector of soft-assigned residual sums:
/// block k (elements [k*D, (k+1)*D)) holds sum_u weight_k(x_u) * (x_u - c_k).
/// With normalize=true each block is L2-normalized (zero blocks stay zero)
/// and then the whole vector is L2-normalized; with normalize=false the raw
/// sums are returned. Throws ValidationError for an empty descriptor set or
/// dimension mismatch.
std::vector<float> vlad_aggregate(const DescriptorMatrix& descriptors, const ClusterCenters& centers, bool normalize);

/// Encodes the part of a spatial map covered by `box` (pixel coordinates in
/// the map's source image). The box is scaled proportionally onto the grid
/// and rounded outward so partially covered cells are included; a crop that
/// rounds to nothing falls back to the single cell nearest the box centre.
/// The cropped cells are aggregated with normalization enabled.
std::vector<float> region_encode(const SpatialDescriptorMap& map, const RegionBox& box, const ClusterCenters& centers);

/// Fits PCA whitening on rows of `data`: projection row i is the i-th
/// largest-eigenvalue eigenvector of the sample covariance divided by
/// sqrt(eigenvalue), oriented so its largest-magnitude coefficient is
/// positive (first such index wins ties). Eigenvalues below 1e-12 are
/// treated as rank deficiency and requesting more dimensions than the
/// remaining rank is an error, as is out_dim > D or fewer than two rows.
WhiteningTransform pca_fit(const DescriptorMatrix& data, std::uint32_t out_dim);

/// Projects (v - mean) through the whitening transform; renormalize=true
/// L2-normalizes the result (zero vectors stay zero).
std::vector<float> pca_apply(const WhiteningTransform& t, std::span<const float> v, bool renormalize);

} // namespace placerank::vlad
