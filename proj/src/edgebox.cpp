#include "placerank/edgebox.hpp"

#include "placerank/errors.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

namespace placerank::edgebox {

using placerank::detail::ordered_json;
using placerank::detail::read_json_file;
using placerank::detail::write_json_atomic;

namespace {

enum class Placement { outside, straddling, inside };

Placement classify(const EdgeGroup& g, const RegionBox& box) {
    std::size_t in = 0;
    for (const auto& p : g.pixels) {
        if (p.x >= box.x && p.x <= box.x + box.w && p.y >= box.y && p.y <= box.y + box.h) {
            ++in;
        }
    }
    if (in == 0) return Placement::outside;
    if (in == g.pixels.size()) return Placement::inside;
    return Placement::straddling;
}

void validate_group(const EdgeGroup& g, std::size_t index) {
    const std::string where = "edge group " + std::to_string(index);
    if (g.pixels.empty()) {
        throw ValidationError(where + ": group has no pixels");
    }
    if (!std::isfinite(g.cx) || !std::isfinite(g.cy) || !std::isfinite(g.theta) || !std::isfinite(g.magnitude)) {
        throw ValidationError(where + ": non-finite field");
    }
    if (g.theta < -std::numbers::pi || g.theta >= std::numbers::pi) {
        throw ValidationError(where + ": theta must lie in [-pi, pi)");
    }
    double sum = 0.0;
    for (const auto& p : g.pixels) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.m) || p.m < 0.0) {
            throw ValidationError(where + ": pixel with non-finite or negative fields");
        }
        sum += p.m;
    }
    if (std::abs(sum - g.magnitude) > 1e-6) {
        throw ValidationError(where + ": magnitude " + std::to_string(g.magnitude) +
                              " does not match pixel sum " + std::to_string(sum));
    }
}

/// Highest path affinity product from the straddling seed set to every
/// group, over edges of the thresholded graph. One run serves all targets.
std::vector<double> best_path_products(const EdgeGroupGraph& graph, const std::vector<Placement>& placement) {
    const auto& groups = graph.groups();
    std::vector<double> best(groups.size(), 0.0);
    std::priority_queue<std::pair<double, std::uint32_t>> heap;
    for (std::uint32_t i = 0; i < groups.size(); ++i) {
        if (placement[i] == Placement::straddling) {
            best[i] = 1.0;
            heap.emplace(1.0, i);
        }
    }
    // Affinities lie in (0, 1], so products never grow along a path and the
    // greedy extraction is exact (Dijkstra in -log space).
    while (!heap.empty()) {
        auto [prod, u] = heap.top();
        heap.pop();
        if (prod < best[u]) {
            continue;
        }
        for (const auto& [v, a] : graph.neighbors()[u]) {
            double candidate = prod * a;
            if (candidate > best[v]) {
                best[v] = candidate;
                heap.emplace(candidate, v);
            }
        }
    }
    return best;
}

} // namespace

double group_affinity(const EdgeGroup& a, const EdgeGroup& b, double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw ValidationError("group_affinity: gamma must be positive and finite");
    }
    const double dx = b.cx - a.cx;
    const double dy = b.cy - a.cy;
    const double r = std::hypot(dx, dy);
    if (r == 0.0) {
        return 1.0;
    }
    const double ux = dx / r;
    const double uy = dy / r;
    // cos(theta - theta_ij) expanded as a dot product with the unit
    // centroid-line vector.
    const double ci = std::cos(a.theta) * ux + std::sin(a.theta) * uy;
    const double cj = std::cos(b.theta) * ux + std::sin(b.theta) * uy;
    // The dot products are bounded by 1 mathematically but can creep an ulp
    // past it in floating point; clamp so the affinity stays in [0, 1].
    return std::min(1.0, std::pow(std::abs(ci * cj), gamma));
}

EdgeGroupGraph::EdgeGroupGraph(std::vector<EdgeGroup> groups, double gamma, double affinity_threshold)
    : groups_(std::move(groups)), gamma_(gamma), affinity_threshold_(affinity_threshold) {
    if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) {
        throw ValidationError("edge group graph: gamma must be positive and finite");
    }
    if (affinity_threshold_ < 0.0 || affinity_threshold_ > 1.0) {
        throw ValidationError("edge group graph: affinity threshold must lie in [0, 1]");
    }
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        validate_group(groups_[i], i);
    }
    neighbors_.assign(groups_.size(), {});
    for (std::uint32_t i = 0; i < groups_.size(); ++i) {
        for (std::uint32_t j = i + 1; j < groups_.size(); ++j) {
            double a = group_affinity(groups_[i], groups_[j], gamma_);
            if (a >= affinity_threshold_ && a > 0.0) {
                neighbors_[i].emplace_back(j, a);
                neighbors_[j].emplace_back(i, a);
            }
        }
    }
}

double group_weight(const EdgeGroupGraph& graph, std::uint32_t index, const RegionBox& box) {
    if (index >= graph.groups().size()) {
        throw ValidationError("group_weight: group index " + std::to_string(index) + " out of range");
    }
    std::vector<Placement> placement(graph.groups().size());
    for (std::uint32_t i = 0; i < graph.groups().size(); ++i) {
        placement[i] = classify(graph.groups()[i], box);
    }
    if (placement[index] != Placement::inside) {
        return 0.0;
    }
    return 1.0 - best_path_products(graph, placement)[index];
}

BoxScore box_score(const EdgeGroupGraph& graph, const RegionBox& box, double kappa, double inner_fraction) {
    if (!(box.w + box.h > 0.0)) {
        throw ValidationError("box_score: box perimeter must be positive");
    }
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
        throw ValidationError("box_score: kappa must be non-negative and finite");
    }
    if (!(inner_fraction >= 0.0) || inner_fraction > 1.0) {
        throw ValidationError("box_score: inner_fraction must lie in [0, 1]");
    }

    std::vector<Placement> placement(graph.groups().size());
    for (std::uint32_t i = 0; i < graph.groups().size(); ++i) {
        placement[i] = classify(graph.groups()[i], box);
    }
    const std::vector<double> best = best_path_products(graph, placement);

    const double denom = 2.0 * std::pow(box.w + box.h, kappa);
    double weighted = 0.0;
    for (std::uint32_t i = 0; i < graph.groups().size(); ++i) {
        if (placement[i] == Placement::inside) {
            weighted += (1.0 - best[i]) * graph.groups()[i].magnitude;
        }
    }

    const double in_w = box.w * inner_fraction;
    const double in_h = box.h * inner_fraction;
    const double in_x = box.x + (box.w - in_w) / 2.0;
    const double in_y = box.y + (box.h - in_h) / 2.0;
    double inner = 0.0;
    for (const auto& g : graph.groups()) {
        for (const auto& p : g.pixels) {
            if (p.x >= in_x && p.x <= in_x + in_w && p.y >= in_y && p.y <= in_y + in_h) {
                inner += p.m;
            }
        }
    }

    BoxScore s;
    s.h = weighted / denom;
    s.h_in = s.h - inner / denom;
    return s;
}

double iou(const RegionBox& a, const RegionBox& b) {
    const double ix = std::max(a.x, b.x);
    const double iy = std::max(a.y, b.y);
    const double ix2 = std::min(a.x + a.w, b.x + b.w);
    const double iy2 = std::min(a.y + a.h, b.y + b.h);
    const double inter = std::max(0.0, ix2 - ix) * std::max(0.0, iy2 - iy);
    const double uni = a.w * a.h + b.w * b.h - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return inter / uni;
}

std::vector<std::uint32_t> nms(const std::vector<RegionBox>& boxes, double iou_threshold) {
    if (!(iou_threshold > 0.0) || iou_threshold > 1.0) {
        throw ValidationError("nms: iou threshold must lie in (0, 1]");
    }
    std::vector<std::uint32_t> order(boxes.size());
    for (std::uint32_t i = 0; i < boxes.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return boxes[a].objectness > boxes[b].objectness;
    });

    std::vector<std::uint32_t> kept;
    for (std::uint32_t idx : order) {
        bool suppressed = false;
        for (std::uint32_t k : kept) {
            if (iou(boxes[idx], boxes[k]) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(idx);
        }
    }
    return kept;
}

RegionSet propose(const EdgeGroupGraph& graph, const ProposalParams& params) {
    if (params.image_w <= 0 || params.image_h <= 0) {
        throw ValidationError("propose: image dimensions must be positive");
    }
    if (params.max_proposals <= 0) {
        throw ValidationError("propose: max_proposals must be positive");
    }
    if (params.scales.empty() || params.aspects.empty()) {
        throw ValidationError("propose: scales and aspects must be non-empty");
    }
    if (!(params.step_fraction > 0.0) || params.step_fraction > 1.0) {
        throw ValidationError("propose: step_fraction must lie in (0, 1]");
    }

    const double base_side = static_cast<double>(std::min(params.image_w, params.image_h));
    std::vector<RegionBox> windows;
    for (double scale : params.scales) {
        for (double aspect : params.aspects) {
            if (!(scale > 0.0) || !(aspect > 0.0)) {
                throw ValidationError("propose: scales and aspects must be positive");
            }
            double w = std::min(scale * base_side * std::sqrt(aspect), static_cast<double>(params.image_w));
            double h = std::min(scale * base_side / std::sqrt(aspect), static_cast<double>(params.image_h));
            if (w < 1.0 || h < 1.0) {
                continue;
            }
            const double step_x = std::max(1.0, params.step_fraction * w);
            const double step_y = std::max(1.0, params.step_fraction * h);
            for (double y = 0.0;; y += step_y) {
                y = std::min(y, params.image_h - h);
                for (double x = 0.0;; x += step_x) {
                    x = std::min(x, params.image_w - w);
                    windows.push_back(RegionBox{x, y, w, h, 0.0});
                    if (x >= params.image_w - w) {
                        break;
                    }
                }
                if (y >= params.image_h - h) {
                    break;
                }
            }
        }
    }

    for (auto& win : windows) {
        win.objectness = box_score(graph, win, params.kappa, params.inner_fraction).h_in;
    }
    std::vector<RegionBox> positive;
    positive.reserve(windows.size());
    for (const auto& win : windows) {
        if (win.objectness > 0.0) {
            positive.push_back(win);
        }
    }

    RegionSet result;
    result.image_w = params.image_w;
    result.image_h = params.image_h;
    for (std::uint32_t idx : nms(positive, params.iou_threshold)) {
        if (result.boxes.size() == static_cast<std::size_t>(params.max_proposals)) {
            break;
        }
        result.boxes.push_back(positive[idx]);
    }
    return result;
}

EdgeGroupDocument load_edge_groups(const std::filesystem::path& path) {
    ordered_json doc = read_json_file(path);
    EdgeGroupDocument out;
    try {
        if (doc.at("format").get<std::string>() != "placerank-edge-groups") {
            throw IoError(path.string() + ": not an edge-groups document");
        }
        out.image_w = doc.at("image_w").get<int>();
        out.image_h = doc.at("image_h").get<int>();
        for (const auto& gj : doc.at("groups")) {
            EdgeGroup g;
            g.cx = gj.at("cx").get<double>();
            g.cy = gj.at("cy").get<double>();
            g.theta = gj.at("theta").get<double>();
            g.magnitude = gj.at("magnitude").get<double>();
            for (const auto& pj : gj.at("pixels")) {
                if (!pj.is_array() || pj.size() != 3) {
                    throw IoError(path.string() + ": pixels must be [x, y, m] triples");
                }
                g.pixels.push_back(EdgePixel{pj.at(0).get<double>(), pj.at(1).get<double>(), pj.at(2).get<double>()});
            }
            out.groups.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed edge-groups document: " + e.what());
    }
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
        validate_group(out.groups[i], i);
    }
    return out;
}

void save_edge_groups(const EdgeGroupDocument& doc, const std::filesystem::path& path) {
    ordered_json j;
    j["format"] = "placerank-edge-groups";
    j["version"] = 1;
    j["image_w"] = doc.image_w;
    j["image_h"] = doc.image_h;
    j["groups"] = ordered_json::array();
    for (const auto& g : doc.groups) {
        ordered_json gj;
        gj["cx"] = g.cx;
        gj["cy"] = g.cy;
        gj["theta"] = g.theta;
        gj["magnitude"] = g.magnitude;
        ordered_json pixels = ordered_json::array();
        for (const auto& p : g.pixels) {
            pixels.push_back(ordered_json::array({p.x, p.y, p.m}));
        }
        gj["pixels"] = std::move(pixels);
        j["groups"].push_back(std::move(gj));
    }
    write_json_atomic(path, j);
}

} // namespace placerank::edgebox
