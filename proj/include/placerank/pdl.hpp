#pragma once

#include "placerank/bundle.hpp"
#include "placerank/rerank.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace placerank::pdl {

/// Labeled feature rows for the decision layer. Labels are 1 (non-match)
/// or 2 (match).
struct TrainingSet {
    std::size_t feature_count = 0;
    std::vector<double> features;  ///< row-major, rows() * feature_count
    std::vector<int> labels;

    std::size_t rows() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * feature_count, feature_count};
    }
    void add_row(std::span<const double> row, int label);
};

/// Binary CART node. Internal nodes route x[feature] < threshold to `left`,
/// otherwise to `right`; leaves carry the class label and have feature -1.
struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int label = 0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  ///< nodes[0] is the root

    int predict(std::span<const double> x) const;
};

/// Grows one tree on the given sample rows (duplicates allowed) by
/// exhaustive Gini splits: every feature and every midpoint between
/// consecutive distinct sorted values is scored, the lowest weighted child
/// impurity wins, and ties break toward the lower feature index and then
/// the lower threshold. Growth stops when a node is pure, has fewer than
/// 2*min_leaf rows, or admits no split; leaf labels are the majority with
/// ties toward label 1.
DecisionTree train_tree(const TrainingSet& data, std::span<const std::size_t> sample, std::uint32_t min_leaf);

struct BaggedTreesModel {
    std::vector<DecisionTree> trees;
    std::uint64_t seed = 0;
    std::uint32_t min_leaf = 1;
    std::size_t feature_count = 0;

    /// 1 + (fraction of trees voting label 2), always in [1, 2].
    double predict(std::span<const double> x) const;
};

/// Trains tree_count trees, each on a bootstrap sample of data.rows() draws
/// taken from a splitmix64 stream. Per-tree seeds derive deterministically
/// from `seed`, so the model is identical for any thread count.
BaggedTreesModel train_bagged(const TrainingSet& data, std::uint32_t tree_count, std::uint64_t seed,
                              std::uint32_t min_leaf = 1);

/// Diagonal-covariance Gaussian class model with class priors. Variances
/// are floored at 1e-9. A class absent from the training data keeps a zero
/// prior and never wins.
struct GaussianModel {
    std::size_t feature_count = 0;
    double prior[2] = {0.0, 0.0};               ///< P(label 1), P(label 2)
    std::vector<double> mean[2];
    std::vector<double> variance[2];

    /// 1 + posterior probability of label 2, always in [1, 2].
    double predict(std::span<const double> x) const;
};

GaussianModel train_gaussian(const TrainingSet& data);

/// Serializable decision-layer model that also satisfies the scorer
/// interface used by rerank_query. Records the feature layout (top_regions)
/// so mismatched models are rejected at load and use time.
class Model : public rerank::MatchScorer {
public:
    Model() = default;
    Model(BaggedTreesModel m, std::uint32_t top_regions);
    Model(GaussianModel m, std::uint32_t top_regions);

    double score(std::span<const double> features) const override;
    std::size_t feature_count() const override;
    std::uint32_t top_regions() const { return top_regions_; }
    const std::string& kind() const { return kind_; }

    const BaggedTreesModel* bagged() const { return std::get_if<BaggedTreesModel>(&impl_); }
    const GaussianModel* gaussian() const { return std::get_if<GaussianModel>(&impl_); }

    /// Writes the model as a structured-text document (atomic write). A
    /// non-empty metadata_json is embedded as the document's metadata
    /// block; otherwise any block carried over from load is re-emitted.
    void save(const std::filesystem::path& path, const std::string& metadata_json = "") const;

    /// Throws IoError for unreadable/malformed files and ValidationError
    /// when the recorded feature layout tag does not match the layout this
    /// code produces for the recorded top_regions.
    static Model load(const std::filesystem::path& path);

private:
    std::variant<BaggedTreesModel, GaussianModel> impl_;
    std::uint32_t top_regions_ = 0;
    std::string kind_;
    std::string metadata_json_;  ///< provenance block carried through load/save
};

/// The feature layout tag recorded in model files for a given block width.
std::string feature_layout_tag(std::uint32_t top_regions);

/// Assembles one labeled row per (training query, candidate) pair: features
/// from the re-ranking pair context, label 2 when the candidate is in the
/// query's positive set and 1 otherwise. Queries [begin, end) of
/// bundle.queries are used; each needs a stored candidate list, and queries
/// missing from the ground truth contribute all-negative rows.
TrainingSet build_training_set(const RetrievalBundle& bundle, std::size_t begin, std::size_t end,
                               const rerank::RerankParams& params);

} // namespace placerank::pdl
