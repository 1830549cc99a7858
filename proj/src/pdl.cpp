#include "placerank/pdl.hpp"

#include "placerank/errors.hpp"
#include "placerank/rng.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

namespace placerank::pdl {

using placerank::detail::ordered_json;
using placerank::detail::read_json_file;
using placerank::detail::write_json_atomic;

namespace {

constexpr double kVarianceFloor = 1e-9;

void validate_training_set(const TrainingSet& data) {
    if (data.rows() == 0) {
        throw ValidationError("training set is empty");
    }
    if (data.feature_count == 0) {
        throw ValidationError("training set has no features");
    }
    if (data.features.size() != data.rows() * data.feature_count) {
        throw ValidationError("training set feature storage does not match rows * feature_count");
    }
    for (double v : data.features) {
        if (!std::isfinite(v)) {
            throw ValidationError("training set contains a non-finite feature");
        }
    }
    for (int label : data.labels) {
        if (label != 1 && label != 2) {
            throw ValidationError("training labels must be 1 or 2, got " + std::to_string(label));
        }
    }
}

double gini(std::size_t c1, std::size_t c2) {
    const double n = static_cast<double>(c1 + c2);
    const double p1 = static_cast<double>(c1) / n;
    const double p2 = static_cast<double>(c2) / n;
    return 1.0 - p1 * p1 - p2 * p2;
}

int majority_label(std::size_t c1, std::size_t c2) {
    return c2 > c1 ? 2 : 1;
}

struct SplitChoice {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double impurity = 0.0;
};

SplitChoice best_split(const TrainingSet& data, const std::vector<std::size_t>& sample, std::uint32_t min_leaf) {
    const std::size_t n = sample.size();
    SplitChoice best;
    std::vector<std::pair<double, int>> column(n);
    for (std::size_t f = 0; f < data.feature_count; ++f) {
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = {data.row(sample[i])[f], data.labels[sample[i]]};
        }
        std::sort(column.begin(), column.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });

        std::size_t left1 = 0, left2 = 0;
        std::size_t total1 = 0, total2 = 0;
        for (const auto& [value, label] : column) {
            (label == 1 ? total1 : total2) += 1;
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            (column[i].second == 1 ? left1 : left2) += 1;
            if (column[i + 1].first <= column[i].first) {
                continue;
            }
            const std::size_t nl = i + 1;
            const std::size_t nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) {
                continue;
            }
            double threshold = column[i].first + (column[i + 1].first - column[i].first) / 2.0;
            if (threshold <= column[i].first) {
                threshold = column[i + 1].first;  // midpoint rounded down to the lower value
            }
            const double weighted = (static_cast<double>(nl) * gini(left1, left2) +
                                     static_cast<double>(nr) * gini(total1 - left1, total2 - left2)) /
                                    static_cast<double>(n);
            if (!best.found || weighted < best.impurity) {
                best = SplitChoice{true, f, threshold, weighted};
            }
        }
    }
    return best;
}

std::int32_t grow(const TrainingSet& data, std::vector<std::size_t> sample, std::uint32_t min_leaf,
                  std::vector<TreeNode>& nodes) {
    std::size_t c1 = 0, c2 = 0;
    for (std::size_t idx : sample) {
        (data.labels[idx] == 1 ? c1 : c2) += 1;
    }

    const auto make_leaf = [&](int label) {
        TreeNode leaf;
        leaf.label = label;
        nodes.push_back(leaf);
        return static_cast<std::int32_t>(nodes.size() - 1);
    };

    if (c1 == 0 || c2 == 0 || sample.size() < 2 * static_cast<std::size_t>(min_leaf)) {
        return make_leaf(majority_label(c1, c2));
    }
    const SplitChoice split = best_split(data, sample, min_leaf);
    if (!split.found) {
        return make_leaf(majority_label(c1, c2));
    }

    std::vector<std::size_t> left, right;
    left.reserve(sample.size());
    right.reserve(sample.size());
    for (std::size_t idx : sample) {
        (data.row(idx)[split.feature] < split.threshold ? left : right).push_back(idx);
    }
    sample.clear();
    sample.shrink_to_fit();

    const std::int32_t self = static_cast<std::int32_t>(nodes.size());
    nodes.push_back(TreeNode{});
    const std::int32_t left_id = grow(data, std::move(left), min_leaf, nodes);
    const std::int32_t right_id = grow(data, std::move(right), min_leaf, nodes);
    nodes[self].feature = static_cast<std::int32_t>(split.feature);
    nodes[self].threshold = split.threshold;
    nodes[self].left = left_id;
    nodes[self].right = right_id;
    return self;
}

} // namespace

void TrainingSet::add_row(std::span<const double> row, int label) {
    if (feature_count == 0) {
        feature_count = row.size();
    }
    if (row.size() != feature_count) {
        throw ValidationError("training row length " + std::to_string(row.size()) +
                              " does not match feature count " + std::to_string(feature_count));
    }
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(label);
}

int DecisionTree::predict(std::span<const double> x) const {
    if (nodes.empty()) {
        throw ValidationError("decision tree has no nodes");
    }
    std::int32_t cur = 0;
    while (nodes[cur].feature >= 0) {
        const TreeNode& node = nodes[cur];
        if (static_cast<std::size_t>(node.feature) >= x.size()) {
            throw ValidationError("decision tree feature index out of range for input");
        }
        cur = x[node.feature] < node.threshold ? node.left : node.right;
    }
    return nodes[cur].label;
}

DecisionTree train_tree(const TrainingSet& data, std::span<const std::size_t> sample, std::uint32_t min_leaf) {
    validate_training_set(data);
    if (min_leaf == 0) {
        throw ValidationError("train_tree: min_leaf must be at least 1");
    }
    if (sample.empty()) {
        throw ValidationError("train_tree: sample is empty");
    }
    for (std::size_t idx : sample) {
        if (idx >= data.rows()) {
            throw ValidationError("train_tree: sample index out of range");
        }
    }
    DecisionTree tree;
    grow(data, std::vector<std::size_t>(sample.begin(), sample.end()), min_leaf, tree.nodes);
    return tree;
}

double BaggedTreesModel::predict(std::span<const double> x) const {
    if (trees.empty()) {
        throw ValidationError("bagged model has no trees");
    }
    std::size_t votes2 = 0;
    for (const auto& tree : trees) {
        if (tree.predict(x) == 2) {
            ++votes2;
        }
    }
    return 1.0 + static_cast<double>(votes2) / static_cast<double>(trees.size());
}

BaggedTreesModel train_bagged(const TrainingSet& data, std::uint32_t tree_count, std::uint64_t seed,
                              std::uint32_t min_leaf) {
    validate_training_set(data);
    if (tree_count == 0) {
        throw ValidationError("train_bagged: tree_count must be at least 1");
    }
    if (min_leaf == 0) {
        throw ValidationError("train_bagged: min_leaf must be at least 1");
    }

    SplitMix64 seeder(seed);
    std::vector<std::uint64_t> tree_seeds(tree_count);
    for (auto& s : tree_seeds) {
        s = seeder.next();
    }

    BaggedTreesModel model;
    model.seed = seed;
    model.min_leaf = min_leaf;
    model.feature_count = data.feature_count;
    model.trees.resize(tree_count);

    unsigned threads = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("PLACERANK_THREADS")) {
        threads = static_cast<unsigned>(std::max(1, std::atoi(env)));
    }
    threads = std::max(1u, std::min(threads, tree_count));

    std::atomic<std::uint32_t> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        const std::size_t n = data.rows();
        for (std::uint32_t t = cursor.fetch_add(1); t < tree_count; t = cursor.fetch_add(1)) {
            try {
                SplitMix64 rng(tree_seeds[t]);
                std::vector<std::size_t> sample(n);
                for (auto& idx : sample) {
                    idx = static_cast<std::size_t>(rng.below(n));
                }
                model.trees[t] = train_tree(data, sample, min_leaf);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return model;
}

double GaussianModel::predict(std::span<const double> x) const {
    if (x.size() != feature_count) {
        throw ValidationError("gaussian model: input length does not match feature count");
    }
    if (prior[0] <= 0.0 && prior[1] <= 0.0) {
        throw ValidationError("gaussian model has no fitted classes");
    }
    // Degenerate single-class fits fall back to the prior alone.
    if (prior[0] <= 0.0) {
        return 2.0;
    }
    if (prior[1] <= 0.0) {
        return 1.0;
    }

    double log_like[2];
    for (int c = 0; c < 2; ++c) {
        double acc = std::log(prior[c]);
        for (std::size_t f = 0; f < feature_count; ++f) {
            const double var = variance[c][f];
            const double diff = x[f] - mean[c][f];
            acc += -0.5 * std::log(2.0 * std::numbers::pi * var) - diff * diff / (2.0 * var);
        }
        log_like[c] = acc;
    }
    // posterior(2) = 1 / (1 + exp(log_like1 - log_like2)), computed stably.
    const double delta = log_like[0] - log_like[1];
    double posterior2;
    if (delta > 0.0) {
        posterior2 = std::exp(-delta) / (1.0 + std::exp(-delta));
    } else {
        posterior2 = 1.0 / (1.0 + std::exp(delta));
    }
    return 1.0 + posterior2;
}

GaussianModel train_gaussian(const TrainingSet& data) {
    validate_training_set(data);
    GaussianModel model;
    model.feature_count = data.feature_count;

    std::size_t counts[2] = {0, 0};
    for (int c = 0; c < 2; ++c) {
        model.mean[c].assign(data.feature_count, 0.0);
        model.variance[c].assign(data.feature_count, 0.0);
    }
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const int c = data.labels[i] - 1;
        ++counts[c];
        auto row = data.row(i);
        for (std::size_t f = 0; f < data.feature_count; ++f) {
            model.mean[c][f] += row[f];
        }
    }
    for (int c = 0; c < 2; ++c) {
        model.prior[c] = static_cast<double>(counts[c]) / static_cast<double>(data.rows());
        if (counts[c] == 0) {
            continue;
        }
        for (auto& m : model.mean[c]) {
            m /= static_cast<double>(counts[c]);
        }
    }
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const int c = data.labels[i] - 1;
        auto row = data.row(i);
        for (std::size_t f = 0; f < data.feature_count; ++f) {
            const double diff = row[f] - model.mean[c][f];
            model.variance[c][f] += diff * diff;
        }
    }
    for (int c = 0; c < 2; ++c) {
        if (counts[c] == 0) {
            continue;
        }
        for (auto& v : model.variance[c]) {
            v = std::max(v / static_cast<double>(counts[c]), kVarianceFloor);
        }
    }
    return model;
}

Model::Model(BaggedTreesModel m, std::uint32_t top_regions)
    : impl_(std::move(m)), top_regions_(top_regions), kind_("bagged-trees") {}

Model::Model(GaussianModel m, std::uint32_t top_regions)
    : impl_(std::move(m)), top_regions_(top_regions), kind_("gaussian") {}

double Model::score(std::span<const double> features) const {
    if (const auto* bagged = std::get_if<BaggedTreesModel>(&impl_)) {
        return bagged->predict(features);
    }
    return std::get<GaussianModel>(impl_).predict(features);
}

std::size_t Model::feature_count() const {
    if (const auto* bagged = std::get_if<BaggedTreesModel>(&impl_)) {
        return bagged->feature_count;
    }
    return std::get<GaussianModel>(impl_).feature_count;
}

std::string feature_layout_tag(std::uint32_t top_regions) {
    const std::string m = std::to_string(top_regions);
    return "d_c,r_prime,qd_cr[" + m + "],M[" + m + "x" + m + "]";
}

void Model::save(const std::filesystem::path& path, const std::string& metadata_json) const {
    ordered_json doc;
    doc["format"] = "placerank-pdl-model";
    doc["version"] = 1;
    const std::string& meta = metadata_json.empty() ? metadata_json_ : metadata_json;
    if (!meta.empty()) {
        doc["metadata"] = ordered_json::parse(meta);
    }
    doc["kind"] = kind_;
    doc["feature_count"] = feature_count();
    doc["top_regions"] = top_regions_;
    doc["feature_order"] = feature_layout_tag(top_regions_);

    if (const auto* bagged = std::get_if<BaggedTreesModel>(&impl_)) {
        ordered_json trees = ordered_json::array();
        for (const auto& tree : bagged->trees) {
            ordered_json nodes = ordered_json::array();
            for (const auto& n : tree.nodes) {
                if (n.feature < 0) {
                    nodes.push_back(ordered_json::array({-1, n.label}));
                } else {
                    nodes.push_back(ordered_json::array({n.feature, n.threshold, n.left, n.right}));
                }
            }
            trees.push_back(std::move(nodes));
        }
        doc["bagged"] = ordered_json{{"tree_count", bagged->trees.size()},
                                     {"seed", bagged->seed},
                                     {"min_leaf", bagged->min_leaf},
                                     {"trees", std::move(trees)}};
    } else {
        const auto& g = std::get<GaussianModel>(impl_);
        doc["gaussian"] = ordered_json{{"prior", ordered_json::array({g.prior[0], g.prior[1]})},
                                       {"mean", ordered_json::array({g.mean[0], g.mean[1]})},
                                       {"variance", ordered_json::array({g.variance[0], g.variance[1]})}};
    }
    write_json_atomic(path, doc);
}

Model Model::load(const std::filesystem::path& path) {
    ordered_json doc = read_json_file(path);
    try {
        if (doc.at("format").get<std::string>() != "placerank-pdl-model") {
            throw IoError(path.string() + ": not a decision-layer model file");
        }
        if (doc.at("version").get<int>() != 1) {
            throw IoError(path.string() + ": unsupported model version");
        }
        const std::string metadata = doc.contains("metadata") ? doc.at("metadata").dump() : "";
        const auto kind = doc.at("kind").get<std::string>();
        const auto feature_count = doc.at("feature_count").get<std::size_t>();
        const auto top_regions = doc.at("top_regions").get<std::uint32_t>();
        const auto tag = doc.at("feature_order").get<std::string>();
        if (tag != feature_layout_tag(top_regions)) {
            throw ValidationError(path.string() + ": unrecognized feature layout '" + tag + "' (expected '" +
                                  feature_layout_tag(top_regions) + "')");
        }
        const std::size_t expected =
            2 + top_regions + static_cast<std::size_t>(top_regions) * top_regions;
        if (feature_count != expected) {
            throw ValidationError(path.string() + ": feature_count " + std::to_string(feature_count) +
                                  " does not match top_regions " + std::to_string(top_regions));
        }

        if (kind == "bagged-trees") {
            const auto& bj = doc.at("bagged");
            BaggedTreesModel m;
            m.seed = bj.at("seed").get<std::uint64_t>();
            m.min_leaf = bj.at("min_leaf").get<std::uint32_t>();
            m.feature_count = feature_count;
            for (const auto& tj : bj.at("trees")) {
                DecisionTree tree;
                for (const auto& nj : tj) {
                    if (!nj.is_array() || nj.size() < 2) {
                        throw IoError(path.string() + ": malformed tree node");
                    }
                    TreeNode node;
                    const int f = nj.at(0).get<int>();
                    if (f < 0) {
                        node.label = nj.at(1).get<int>();
                        if (node.label != 1 && node.label != 2) {
                            throw ValidationError(path.string() + ": leaf label must be 1 or 2");
                        }
                    } else {
                        if (nj.size() != 4) {
                            throw IoError(path.string() + ": malformed internal tree node");
                        }
                        node.feature = f;
                        node.threshold = nj.at(1).get<double>();
                        node.left = nj.at(2).get<std::int32_t>();
                        node.right = nj.at(3).get<std::int32_t>();
                        if (static_cast<std::size_t>(node.feature) >= feature_count) {
                            throw ValidationError(path.string() + ": tree split feature out of range");
                        }
                    }
                    tree.nodes.push_back(node);
                }
                if (tree.nodes.empty()) {
                    throw ValidationError(path.string() + ": model contains an empty tree");
                }
                for (const auto& n : tree.nodes) {
                    if (n.feature >= 0 && (n.left < 0 || n.right < 0 ||
                                           static_cast<std::size_t>(n.left) >= tree.nodes.size() ||
                                           static_cast<std::size_t>(n.right) >= tree.nodes.size())) {
                        throw ValidationError(path.string() + ": tree child index out of range");
                    }
                }
                m.trees.push_back(std::move(tree));
            }
            if (m.trees.empty() || m.trees.size() != bj.at("tree_count").get<std::size_t>()) {
                throw ValidationError(path.string() + ": tree_count does not match the stored trees");
            }
            Model model(std::move(m), top_regions);
            model.metadata_json_ = metadata;
            return model;
        }
        if (kind == "gaussian") {
            const auto& gj = doc.at("gaussian");
            GaussianModel m;
            m.feature_count = feature_count;
            m.prior[0] = gj.at("prior").at(0).get<double>();
            m.prior[1] = gj.at("prior").at(1).get<double>();
            for (int c = 0; c < 2; ++c) {
                m.mean[c] = gj.at("mean").at(c).get<std::vector<double>>();
                m.variance[c] = gj.at("variance").at(c).get<std::vector<double>>();
                if (m.mean[c].size() != feature_count || m.variance[c].size() != feature_count) {
                    throw ValidationError(path.string() + ": gaussian parameter lengths do not match feature_count");
                }
            }
            Model model(std::move(m), top_regions);
            model.metadata_json_ = metadata;
            return model;
        }
        throw ValidationError(path.string() + ": unknown model kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed model file: " + e.what());
    }
}

TrainingSet build_training_set(const RetrievalBundle& bundle, std::size_t begin, std::size_t end,
                               const rerank::RerankParams& params) {
    if (begin >= end || end > bundle.queries.size()) {
        throw ValidationError("build_training_set: query range [" + std::to_string(begin) + ", " +
                              std::to_string(end) + ") out of bounds");
    }
    TrainingSet data;
    for (std::size_t qi = begin; qi < end; ++qi) {
        const ImageEntry& query = bundle.queries[qi];
        auto cand_it = bundle.candidates.find(query.id);
        if (cand_it == bundle.candidates.end()) {
            throw ValidationError("build_training_set: no candidates for query '" + query.id + "'");
        }
        const CandidateList& list = cand_it->second;
        const std::vector<std::uint32_t>* positives = nullptr;
        if (auto gt_it = bundle.ground_truth.find(query.id); gt_it != bundle.ground_truth.end()) {
            positives = &gt_it->second;
        }
        for (std::size_t j = 0; j < list.size(); ++j) {
            const ImageEntry& cand = bundle.db_entry(list.db_indices[j]);
            rerank::PairContext ctx = rerank::build_pair_context(query, cand, list, j, params);
            const bool is_match =
                positives && std::binary_search(positives->begin(), positives->end(), list.db_indices[j]);
            data.add_row(ctx.features, is_match ? 2 : 1);
        }
    }
    return data;
}

} // namespace placerank::pdl
