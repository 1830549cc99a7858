#pragma once

#include "placerank/bundle.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace placerank::edgebox {

/// One edge pixel: position and gradient magnitude.
struct EdgePixel {
    double x = 0.0;
    double y = 0.0;
    double m = 0.0;
};

/// A connected group of edge pixels summarized by its centroid, mean
/// orientation theta (radians, normalized to [-pi, pi)), and total
/// magnitude. The stored magnitude must equal the pixel sum within 1e-6.
struct EdgeGroup {
    double cx = 0.0;
    double cy = 0.0;
    double theta = 0.0;
    double magnitude = 0.0;
    std::vector<EdgePixel> pixels;
};

/// Pairwise orientation affinity |cos(theta_i - theta_ij) *
/// cos(theta_j - theta_ij)|^gamma, where theta_ij is the direction of the
/// line joining the two centroids. Computed from unit vectors (dot products)
/// rather than angle subtraction so exactly orthogonal configurations yield
/// exactly zero. Coincident centroids score 1. gamma must be positive.
double group_affinity(const EdgeGroup& a, const EdgeGroup& b, double gamma);

/// Edge groups of one image plus the thresholded affinity adjacency used for
/// path searches. Affinities below `affinity_threshold` are dropped.
class EdgeGroupGraph {
public:
    EdgeGroupGraph() = default;
    EdgeGroupGraph(std::vector<EdgeGroup> groups, double gamma = 2.0, double affinity_threshold = 0.05);

    const std::vector<EdgeGroup>& groups() const { return groups_; }
    double gamma() const { return gamma_; }
    double affinity_threshold() const { return affinity_threshold_; }
    const std::vector<std::vector<std::pair<std::uint32_t, double>>>& neighbors() const { return neighbors_; }

private:
    std::vector<EdgeGroup> groups_;
    double gamma_ = 2.0;
    double affinity_threshold_ = 0.05;
    std::vector<std::vector<std::pair<std::uint32_t, double>>> neighbors_;
};

/// Contribution weight of group `index` for a candidate box: 1 minus the
/// best path affinity product from any group straddling the box border,
/// where a path multiplies consecutive pairwise affinities. Groups that
/// straddle the border weigh 0, groups wholly outside contribute nothing
/// (also reported as 0), and with no straddling group the weight is 1.
double group_weight(const EdgeGroupGraph& graph, std::uint32_t index, const RegionBox& box);

struct BoxScore {
    double h = 0.0;     ///< weighted magnitude sum over the box perimeter term
    double h_in = 0.0;  ///< h minus the centred inner-box magnitude over the same term
};

/// Scores one candidate box: h = sum over fully-inside groups of
/// weight * magnitude, divided by 2*(w+h)^kappa; h_in additionally subtracts
/// the magnitudes of all edge pixels falling in the centred inner box whose
/// sides are scaled by inner_fraction. Throws ValidationError for a
/// zero-perimeter box or parameters out of range.
BoxScore box_score(const EdgeGroupGraph& graph, const RegionBox& box, double kappa, double inner_fraction);

/// Greedy non-maximum suppression on boxes scored by their objectness
/// field: boxes are visited in descending score order (ties toward the
/// lower input index) and a box is dropped when its IoU with an already
/// kept box strictly exceeds the threshold. Returns kept input indices in
/// selection order.
std::vector<std::uint32_t> nms(const std::vector<RegionBox>& boxes, double iou_threshold);

/// Intersection-over-union of two boxes; pairs with empty union score 0.
double iou(const RegionBox& a, const RegionBox& b);

/// Sliding-window proposal parameters. Window sizes derive from
/// scale * min(image_w, image_h) stretched by sqrt(aspect), and windows
/// advance by step_fraction of their own side (at least one pixel).
struct ProposalParams {
    int image_w = 0;
    int image_h = 0;
    std::vector<double> scales = {0.15, 0.25, 0.4, 0.6, 0.8};
    std::vector<double> aspects = {0.5, 1.0, 2.0};
    double step_fraction = 0.25;
    int max_proposals = 50;
    double iou_threshold = 0.5;
    double kappa = 1.5;
    double inner_fraction = 0.5;
};

/// Scores every sliding window with box_score, discards non-positive
/// scores, applies nms, and returns the best max_proposals windows as a
/// RegionSet whose objectness is the window's h_in score.
RegionSet propose(const EdgeGroupGraph& graph, const ProposalParams& params);

/// Edge groups serialized per image as one structured-text document.
struct EdgeGroupDocument {
    int image_w = 0;
    int image_h = 0;
    std::vector<EdgeGroup> groups;
};

EdgeGroupDocument load_edge_groups(const std::filesystem::path& path);
void save_edge_groups(const EdgeGroupDocument& doc, const std::filesystem::path& path);

} // namespace placerank::edgebox
