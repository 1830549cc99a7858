#include "placerank/vlad.hpp"

#include "placerank/errors.hpp"
#include "json_util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace placerank::vlad {

using placerank::detail::ordered_json;
using placerank::detail::read_json_file;
using placerank::detail::write_json_atomic;

namespace {

constexpr double kEigenvalueFloor = 1e-12;

double squared_distance(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

/// L2-normalizes in place; vectors with norm below 1e-12 are left as zero.
void normalize_or_zero(std::vector<double>& v, std::size_t begin, std::size_t end) {
    double norm = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        for (std::size_t i = begin; i < end; ++i) {
            v[i] = 0.0;
        }
        return;
    }
    for (std::size_t i = begin; i < end; ++i) {
        v[i] /= norm;
    }
}

} // namespace

void ClusterCenters::save(const std::filesystem::path& path) const {
    centers.save(path);
    ordered_json side;
    side["format"] = "placerank-centers";
    side["version"] = 1;
    side["k"] = centers.rows();
    side["d"] = centers.cols();
    side["sharpness"] = sharpness;
    write_json_atomic(std::filesystem::path(path.string() + ".json"), side);
}

ClusterCenters ClusterCenters::load(const std::filesystem::path& path) {
    ClusterCenters c;
    c.centers = DescriptorMatrix::load(path);
    const auto side_path = std::filesystem::path(path.string() + ".json");
    ordered_json side = read_json_file(side_path);
    try {
        if (side.at("format").get<std::string>() != "placerank-centers") {
            throw IoError(side_path.string() + ": not a cluster-centers sidecar");
        }
        c.sharpness = side.at("sharpness").get<double>();
        if (side.at("k").get<std::uint32_t>() != c.centers.rows() ||
            side.at("d").get<std::uint32_t>() != c.centers.cols()) {
            throw ValidationError(side_path.string() + ": sidecar dimensions do not match the matrix file");
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(side_path.string() + ": malformed sidecar: " + e.what());
    }
    if (!(c.sharpness > 0.0) || !std::isfinite(c.sharpness)) {
        throw ValidationError(side_path.string() + ": sharpness must be positive and finite");
    }
    return c;
}

void SpatialDescriptorMap::save(const std::filesystem::path& path) const {
    cells.save(path);
    ordered_json side;
    side["format"] = "placerank-spatial-map";
    side["version"] = 1;
    side["grid_w"] = grid_w;
    side["grid_h"] = grid_h;
    side["image_w"] = image_w;
    side["image_h"] = image_h;
    write_json_atomic(std::filesystem::path(path.string() + ".json"), side);
}

SpatialDescriptorMap SpatialDescriptorMap::load(const std::filesystem::path& path) {
    SpatialDescriptorMap m;
    m.cells = DescriptorMatrix::load(path);
    const auto side_path = std::filesystem::path(path.string() + ".json");
    ordered_json side = read_json_file(side_path);
    try {
        if (side.at("format").get<std::string>() != "placerank-spatial-map") {
            throw IoError(side_path.string() + ": not a spatial-map sidecar");
        }
        m.grid_w = side.at("grid_w").get<int>();
        m.grid_h = side.at("grid_h").get<int>();
        m.image_w = side.at("image_w").get<int>();
        m.image_h = side.at("image_h").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(side_path.string() + ": malformed sidecar: " + e.what());
    }
    if (m.grid_w <= 0 || m.grid_h <= 0 || m.image_w <= 0 || m.image_h <= 0) {
        throw ValidationError(side_path.string() + ": grid and image dimensions must be positive");
    }
    if (m.cells.rows() != static_cast<std::uint32_t>(m.grid_w) * static_cast<std::uint32_t>(m.grid_h)) {
        throw ValidationError(side_path.string() + ": cell matrix rows do not match grid_w*grid_h");
    }
    return m;
}

void WhiteningTransform::save(const std::filesystem::path& path) const {
    DescriptorMatrix packed(projection.rows() + 1, projection.cols());
    std::copy(mean.row(0).begin(), mean.row(0).end(), packed.row(0).begin());
    for (std::uint32_t r = 0; r < projection.rows(); ++r) {
        auto src = projection.row(r);
        std::copy(src.begin(), src.end(), packed.row(r + 1).begin());
    }
    packed.save(path);
    ordered_json side;
    side["format"] = "placerank-whitening";
    side["version"] = 1;
    side["out_dim"] = projection.rows();
    side["d"] = projection.cols();
    write_json_atomic(std::filesystem::path(path.string() + ".json"), side);
}

WhiteningTransform WhiteningTransform::load(const std::filesystem::path& path) {
    DescriptorMatrix packed = DescriptorMatrix::load(path);
    const auto side_path = std::filesystem::path(path.string() + ".json");
    ordered_json side = read_json_file(side_path);
    std::uint32_t out_dim = 0;
    try {
        if (side.at("format").get<std::string>() != "placerank-whitening") {
            throw IoError(side_path.string() + ": not a whitening sidecar");
        }
        out_dim = side.at("out_dim").get<std::uint32_t>();
        if (side.at("d").get<std::uint32_t>() != packed.cols() || out_dim + 1 != packed.rows()) {
            throw ValidationError(side_path.string() + ": sidecar dimensions do not match the matrix file");
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(side_path.string() + ": malformed sidecar: " + e.what());
    }
    WhiteningTransform t;
    t.mean = DescriptorMatrix(1, packed.cols());
    std::copy(packed.row(0).begin(), packed.row(0).end(), t.mean.row(0).begin());
    t.projection = DescriptorMatrix(out_dim, packed.cols());
    for (std::uint32_t r = 0; r < out_dim; ++r) {
        auto src = packed.row(r + 1);
        std::copy(src.begin(), src.end(), t.projection.row(r).begin());
    }
    return t;
}

std::vector<double> soft_assign(std::span<const float> x, const ClusterCenters& centers) {
    if (centers.cluster_count() == 0) {
        throw ValidationError("soft_assign: empty vocabulary");
    }
    if (x.size() != centers.dim()) {
        throw ValidationError("soft_assign: input dimension " + std::to_string(x.size()) +
                              " does not match vocabulary dimension " + std::to_string(centers.dim()));
    }
    for (float v : x) {
        if (!std::isfinite(v)) {
            throw ValidationError("soft_assign: non-finite input");
        }
    }

    const std::uint32_t k = centers.cluster_count();
    std::vector<double> logits(k);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < k; ++i) {
        logits[i] = -centers.sharpness * squared_distance(x, centers.centers.row(i));
        max_logit = std::max(max_logit, logits[i]);
    }
    std::vector<double> weights(k);
    double total = 0.0;
    for (std::uint32_t i = 0; i < k; ++i) {
        weights[i] = std::exp(logits[i] - max_logit);
        total += weights[i];
    }
    for (auto& w : weights) {
        w /= total;
    }
    return weights;
}

std::vector<float> vlad_aggregate(const DescriptorMatrix& descriptors, const ClusterCenters& centers, bool normalize) {
    if (descriptors.rows() == 0) {
        throw ValidationError("vlad_aggregate: empty descriptor set");
    }
    if (descriptors.cols() != centers.dim()) {
        throw ValidationError("vlad_aggregate: descriptor dimension " + std::to_string(descriptors.cols()) +
                              " does not match vocabulary dimension " + std::to_string(centers.dim()));
    }

    const std::uint32_t k = centers.cluster_count();
    const std::uint32_t d = centers.dim();
    std::vector<double> acc(static_cast<std::size_t>(k) * d, 0.0);
    for (std::uint32_t u = 0; u < descriptors.rows(); ++u) {
        auto x = descriptors.row(u);
        std::vector<double> w = soft_assign(x, centers);
        for (std::uint32_t c = 0; c < k; ++c) {
            auto centre = centers.centers.row(c);
            double* block = acc.data() + static_cast<std::size_t>(c) * d;
            for (std::uint32_t j = 0; j < d; ++j) {
                block[j] += w[c] * (static_cast<double>(x[j]) - static_cast<double>(centre[j]));
            }
        }
    }

    if (normalize) {
        for (std::uint32_t c = 0; c < k; ++c) {
            normalize_or_zero(acc, static_cast<std::size_t>(c) * d, static_cast<std::size_t>(c + 1) * d);
        }
        normalize_or_zero(acc, 0, acc.size());
    }

    std::vector<float> out(acc.size());
    std::transform(acc.begin(), acc.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return out;
}

std::vector<float> region_encode(const SpatialDescriptorMap& map, const RegionBox& box, const ClusterCenters& centers) {
    if (map.grid_w <= 0 || map.grid_h <= 0 || map.image_w <= 0 || map.image_h <= 0) {
        throw ValidationError("region_encode: map dimensions must be positive");
    }
    const RegionBox b = clamp_box(box, map.image_w, map.image_h);

    const double sx = static_cast<double>(map.grid_w) / map.image_w;
    const double sy = static_cast<double>(map.grid_h) / map.image_h;
    int x0 = static_cast<int>(std::floor(b.x * sx));
    int x1 = static_cast<int>(std::ceil((b.x + b.w) * sx));
    int y0 = static_cast<int>(std::floor(b.y * sy));
    int y1 = static_cast<int>(std::ceil((b.y + b.h) * sy));
    x0 = std::clamp(x0, 0, map.grid_w);
    x1 = std::clamp(x1, 0, map.grid_w);
    y0 = std::clamp(y0, 0, map.grid_h);
    y1 = std::clamp(y1, 0, map.grid_h);

    if (x1 <= x0 || y1 <= y0) {
        // Degenerate crop: fall back to the single cell nearest the box centre.
        int cx = std::clamp(static_cast<int>(std::floor((b.x + b.w / 2.0) * sx)), 0, map.grid_w - 1);
        int cy = std::clamp(static_cast<int>(std::floor((b.y + b.h / 2.0) * sy)), 0, map.grid_h - 1);
        x0 = cx;
        x1 = cx + 1;
        y0 = cy;
        y1 = cy + 1;
    }

    DescriptorMatrix crop(static_cast<std::uint32_t>((x1 - x0) * (y1 - y0)), map.dim());
    std::uint32_t r = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            auto src = map.cells.row(static_cast<std::uint32_t>(y) * map.grid_w + x);
            std::copy(src.begin(), src.end(), crop.row(r++).begin());
        }
    }
    return vlad_aggregate(crop, centers, true);
}

WhiteningTransform pca_fit(const DescriptorMatrix& data, std::uint32_t out_dim) {
    const std::uint32_t n = data.rows();
    const std::uint32_t d = data.cols();
    if (n < 2) {
        throw ValidationError("pca_fit: need at least two rows, got " + std::to_string(n));
    }
    if (out_dim == 0 || out_dim > d) {
        throw ValidationError("pca_fit: out_dim must be in [1, " + std::to_string(d) + "], got " +
                              std::to_string(out_dim));
    }
    data.require_finite("pca_fit input");

    Eigen::MatrixXd x(n, d);
    for (std::uint32_t r = 0; r < n; ++r) {
        for (std::uint32_t c = 0; c < d; ++c) {
            x(r, c) = data.at(r, c);
        }
    }
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw ValidationError("pca_fit: eigendecomposition failed");
    }
    // Eigen returns eigenvalues in ascending order; walk from the top.
    Eigen::MatrixXd proj(out_dim, d);
    for (std::uint32_t i = 0; i < out_dim; ++i) {
        const Eigen::Index src = static_cast<Eigen::Index>(d) - 1 - i;
        double lambda = solver.eigenvalues()(src);
        if (lambda < kEigenvalueFloor) {
            throw ValidationError("pca_fit: requested " + std::to_string(out_dim) +
                                  " dimensions but data rank is only " + std::to_string(i));
        }
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index flip_idx = 0;
        v.cwiseAbs().maxCoeff(&flip_idx);
        if (v(flip_idx) < 0.0) {
            v = -v;
        }
        proj.row(i) = v.transpose() / std::sqrt(lambda);
    }

    // The rows must be orthogonal under the covariance metric: P*cov*P^T = I.
    Eigen::MatrixXd check = proj * cov * proj.transpose();
    if ((check - Eigen::MatrixXd::Identity(out_dim, out_dim)).cwiseAbs().maxCoeff() > 1e-6) {
        throw ValidationError("pca_fit: whitening self-check failed (ill-conditioned input)");
    }

    WhiteningTransform t;
    t.mean = DescriptorMatrix(1, d);
    for (std::uint32_t c = 0; c < d; ++c) {
        t.mean.at(0, c) = static_cast<float>(mean(c));
    }
    t.projection = DescriptorMatrix(out_dim, d);
    for (std::uint32_t r = 0; r < out_dim; ++r) {
        for (std::uint32_t c = 0; c < d; ++c) {
            t.projection.at(r, c) = static_cast<float>(proj(r, c));
        }
    }
    return t;
}

std::vector<float> pca_apply(const WhiteningTransform& t, std::span<const float> v, bool renormalize) {
    if (v.size() != t.dim()) {
        throw ValidationError("pca_apply: input dimension " + std::to_string(v.size()) +
                              " does not match transform dimension " + std::to_string(t.dim()));
    }
    std::vector<double> out(t.out_dim(), 0.0);
    for (std::uint32_t r = 0; r < t.out_dim(); ++r) {
        auto row = t.projection.row(r);
        double acc = 0.0;
        for (std::uint32_t c = 0; c < t.dim(); ++c) {
            acc += static_cast<double>(row[c]) * (static_cast<double>(v[c]) - static_cast<double>(t.mean.at(0, c)));
        }
        out[r] = acc;
    }
    if (renormalize) {
        normalize_or_zero(out, 0, out.size());
    }
    std::vector<float> result(out.size());
    std::transform(out.begin(), out.end(), result.begin(), [](double x) { return static_cast<float>(x); });
    return result;
}

} // namespace placerank::vlad
