// Release gate: one check per line, nonzero exit if any check fails.
// Each criterion pins its own tolerances; keep them in the criterion body
// so a reader sees every number next to the property it guards.

#include "placerank/bundle.hpp"
#include "placerank/edgebox.hpp"
#include "placerank/errors.hpp"
#include "placerank/eval.hpp"
#include "placerank/matrix.hpp"
#include "placerank/pdl.hpp"
#include "placerank/rerank.hpp"
#include "placerank/rng.hpp"
#include "placerank/vlad.hpp"

#include "test_helpers.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using placerank::DescriptorMatrix;
using placerank::RegionBox;
using placerank::RetrievalBundle;
using placerank::SplitMix64;
using placerank::rerank::RealMatrix;

namespace {

int failures = 0;

void report(int index, const std::string& summary, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << index << ": " << summary;
    if (!detail.empty()) {
        std::cout << " — " << detail;
    }
    std::cout << "\n";
    if (!ok) {
        ++failures;
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
    std::map<std::string, std::string> bytes;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            bytes[fs::relative(entry.path(), dir).string()] = read_file(entry.path());
        }
    }
    return bytes;
}

fs::path make_scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("placerank-acceptance-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Scorer returning a fixed match probability for every pair.
class ConstantScorer : public placerank::rerank::MatchScorer {
public:
    ConstantScorer(double value, std::size_t features) : value_(value), features_(features) {}
    double score(std::span<const double>) const override { return value_; }
    std::size_t feature_count() const override { return features_; }

private:
    double value_;
    std::size_t features_;
};

/// Deterministic pseudo-random scorer: hashes the feature bytes into a
/// match probability, so reranks are arbitrary but repeatable.
class PseudoScorer : public placerank::rerank::MatchScorer {
public:
    explicit PseudoScorer(std::size_t features) : features_(features) {}
    double score(std::span<const double> x) const override {
        std::uint64_t h = 0x9e3779b97f4a7c15ULL;
        for (double v : x) {
            h ^= std::bit_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        SplitMix64 rng(h);
        return 1.0 + rng.uniform();
    }
    std::size_t feature_count() const override { return features_; }

private:
    std::size_t features_;
};

double recall_at(const placerank::eval::RecallTable& table, int n) {
    for (const auto& [point_n, recall] : table.points) {
        if (point_n == n) {
            return recall;
        }
    }
    return -1.0;
}

// --- criterion 2 ----------------------------------------------------------

void criterion_end_to_end() {
    const auto start = std::chrono::steady_clock::now();

    placerank::eval::SynthesisParams params;  // seed 7, 200 queries, 2000 db, d=64, 8 regions, 1 distractor
    RetrievalBundle bundle = placerank::eval::synth_generate(params);
    placerank::retrieve_all(bundle, 20);

    placerank::rerank::RerankParams rp;
    rp.alpha = 1.15;
    rp.beta = 10.0;
    rp.top_regions = std::min<std::uint32_t>(10, params.regions);
    rp.mode = placerank::rerank::CorrelationMode::product;

    const std::size_t split = 100;
    const placerank::pdl::TrainingSet data = placerank::pdl::build_training_set(bundle, 0, split, rp);
    const placerank::pdl::Model model(placerank::pdl::train_bagged(data, 50, 7, 1), rp.top_regions);

    const auto results = placerank::rerank::rerank_queries(bundle, split, bundle.queries.size(), model, rp);

    placerank::eval::Rankings baseline;
    placerank::eval::Rankings reranked;
    for (std::size_t i = split; i < bundle.queries.size(); ++i) {
        const auto& query = bundle.queries[i];
        std::vector<std::string>& base_ids = baseline[query.id];
        for (std::uint32_t db : bundle.candidates.at(query.id).db_indices) {
            base_ids.push_back(bundle.database[db].id);
        }
        std::vector<std::string>& new_ids = reranked[query.id];
        for (const auto& entry : results.at(query.id).entries) {
            new_ids.push_back(bundle.database[entry.db_index].id);
        }
    }
    const placerank::eval::Positives positives = placerank::eval::positives_from_bundle(bundle);
    const auto base_table = placerank::eval::recall_at_n(baseline, positives, {1, 5, 10}, "baseline");
    const auto new_table = placerank::eval::recall_at_n(reranked, positives, {1, 5, 10}, "reranked");

    const double seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - start)
            .count();

    bool ok = recall_at(new_table, 1) >= recall_at(base_table, 1) + 10.0;
    for (int n : {1, 5, 10}) {
        ok = ok && recall_at(new_table, n) >= recall_at(base_table, n);
    }
    ok = ok && seconds < 120.0;

    std::ostringstream detail;
    detail.setf(std::ios::fixed);
    detail.precision(2);
    detail << "held-out recall@1 " << recall_at(base_table, 1) << " -> " << recall_at(new_table, 1)
           << ", recall@5 " << recall_at(base_table, 5) << " -> " << recall_at(new_table, 5) << ", recall@10 "
           << recall_at(base_table, 10) << " -> " << recall_at(new_table, 10) << ", " << seconds << " s";
    report(2,
           "50-tree rerank of 100 held-out synthetic queries lifts recall@1 by >= 10 points and never "
           "hurts recall@{1,5,10} in under 120 s",
           ok, detail.str());
}

// --- criterion 6 oracle ----------------------------------------------------

struct OracleNode {
    int feature = -1;
    double threshold = 0.0;
    int label = 0;
    std::unique_ptr<OracleNode> left, right;

    int predict(std::span<const double> x) const {
        if (feature < 0) {
            return label;
        }
        return x[static_cast<std::size_t>(feature)] < threshold ? left->predict(x) : right->predict(x);
    }
};

std::unique_ptr<OracleNode> oracle_grow(const placerank::pdl::TrainingSet& data,
                                        const std::vector<std::size_t>& sample, std::uint32_t min_leaf) {
    std::size_t c1 = 0, c2 = 0;
    for (std::size_t idx : sample) {
        (data.labels[idx] == 1 ? c1 : c2) += 1;
    }
    auto leaf = [&](int label) {
        auto node = std::make_unique<OracleNode>();
        node->label = label;
        return node;
    };
    if (c1 == 0 || c2 == 0 || sample.size() < 2 * static_cast<std::size_t>(min_leaf)) {
        return leaf(c2 > c1 ? 2 : 1);
    }

    const auto gini = [](std::size_t a, std::size_t b) {
        const double n = static_cast<double>(a + b);
        const double p1 = static_cast<double>(a) / n;
        const double p2 = static_cast<double>(b) / n;
        return 1.0 - p1 * p1 - p2 * p2;
    };

    bool found = false;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    double best_impurity = 0.0;
    const std::size_t n = sample.size();
    for (std::size_t f = 0; f < data.feature_count; ++f) {
        std::vector<std::pair<double, int>> column;
        for (std::size_t idx : sample) {
            column.emplace_back(data.row(idx)[f], data.labels[idx]);
        }
        std::sort(column.begin(), column.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::size_t l1 = 0, l2 = 0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            (column[i].second == 1 ? l1 : l2) += 1;
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
                threshold = column[i + 1].first;
            }
            const double weighted =
                (static_cast<double>(nl) * gini(l1, l2) + static_cast<double>(nr) * gini(c1 - l1, c2 - l2)) /
                static_cast<double>(n);
            if (!found || weighted < best_impurity) {
                found = true;
                best_feature = f;
                best_threshold = threshold;
                best_impurity = weighted;
            }
        }
    }
    if (!found) {
        return leaf(c2 > c1 ? 2 : 1);
    }

    std::vector<std::size_t> left, right;
    for (std::size_t idx : sample) {
        (data.row(idx)[best_feature] < best_threshold ? left : right).push_back(idx);
    }
    auto node = std::make_unique<OracleNode>();
    node->feature = static_cast<int>(best_feature);
    node->threshold = best_threshold;
    node->left = oracle_grow(data, left, min_leaf);
    node->right = oracle_grow(data, right, min_leaf);
    return node;
}

// --- criterion 7 oracle ----------------------------------------------------

std::vector<double> hard_assignment_vlad(const DescriptorMatrix& cells,
                                         const placerank::vlad::ClusterCenters& centers) {
    const std::uint32_t k = centers.cluster_count();
    const std::uint32_t d = centers.dim();
    std::vector<double> acc(static_cast<std::size_t>(k) * d, 0.0);
    for (std::uint32_t r = 0; r < cells.rows(); ++r) {
        const auto x = cells.row(r);
        std::uint32_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < k; ++c) {
            double dist = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                const double diff = static_cast<double>(x[j]) - centers.centers.at(c, j);
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = c;
            }
        }
        for (std::uint32_t j = 0; j < d; ++j) {
            acc[static_cast<std::size_t>(best) * d + j] +=
                static_cast<double>(x[j]) - centers.centers.at(best, j);
        }
    }
    for (std::uint32_t c = 0; c < k; ++c) {
        double norm = 0.0;
        for (std::uint32_t j = 0; j < d; ++j) {
            const double v = acc[static_cast<std::size_t>(c) * d + j];
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (std::uint32_t j = 0; j < d; ++j) {
                acc[static_cast<std::size_t>(c) * d + j] /= norm;
            }
        }
    }
    double total = 0.0;
    for (double v : acc) {
        total += v * v;
    }
    total = std::sqrt(total);
    if (total > 0.0) {
        for (double& v : acc) {
            v /= total;
        }
    }
    return acc;
}

} // namespace

int main() {
    std::cout.setf(std::ios::unitbuf);  // stream progress line by line

    // 1. Scope statement: the published full-scale benchmark recalls
    //    (e.g. Tokyo 24/7 recall@1 = 69.21 for the 100-tree variant) need the
    //    original street-level datasets and learned CNN descriptors, neither
    //    of which ships here. This gate verifies the pipeline's behavioral
    //    properties on synthetic data instead.
    report(1,
           "full-scale benchmark recalls (e.g. Tokyo 24/7 recall@1 = 69.21, 100 trees) are out of desk "
           "scope; criteria 2-12 check the pipeline's properties on synthetic data",
           true);

    // 2. End-to-end improvement on planted synthetic data.
    criterion_end_to_end();

    // 3. Distance-update numeric checks, alpha = 1.15 and 0.31.
    {
        const double tol = 1e-6;
        const double a = placerank::rerank::update_distance(1.0, 2.0, 1.15);
        const double b = placerank::rerank::update_distance(0.5, 2.0, 0.31);
        const bool ok = std::abs(a - 0.202881) <= tol && std::abs(b - 0.285124) <= tol;
        std::ostringstream detail;
        detail.precision(10);
        detail << "got " << a << " and " << b;
        report(3, "update_distance(1.0, 2, 1.15) = 0.202881 +- 1e-6 and update_distance(0.5, 2, 0.31) = "
                  "0.285124 +- 1e-6",
               ok, detail.str());
    }

    // 4. A constant match probability of 1 never reorders candidates.
    {
        bool ok = true;
        for (std::uint64_t trial = 0; trial < 100 && ok; ++trial) {
            SplitMix64 rng(4000 + trial);
            const std::uint32_t regions = 2 + static_cast<std::uint32_t>(rng.below(3));
            const std::uint32_t db = 6 + static_cast<std::uint32_t>(rng.below(10));
            const std::uint32_t k = 3 + static_cast<std::uint32_t>(rng.below(std::min(db, 6u) - 2));
            const RetrievalBundle bundle = placerank::testing::make_bundle(
                8800 + trial, 2 + static_cast<std::uint32_t>(rng.below(3)), db, k, regions,
                4 + static_cast<std::uint32_t>(rng.below(5)));

            placerank::rerank::RerankParams params;
            params.top_regions = regions;
            const ConstantScorer one(1.0, 2 + regions + regions * regions);
            for (const auto& query : bundle.queries) {
                const auto result = placerank::rerank::rerank_query(bundle, query.id, one, params);
                const auto& stored = bundle.candidates.at(query.id);
                for (std::size_t j = 0; j < stored.size() && ok; ++j) {
                    ok = result.entries[j].db_index == stored.db_indices[j] &&
                         result.entries[j].d_new == stored.distances[j];
                }
            }
        }
        report(4, "a constant match probability of 1 leaves every ordering unchanged on 100 fuzzed bundles "
                  "(exact)",
               ok);
    }

    // 5. Re-ranking permutes, never drops or duplicates.
    {
        bool ok = true;
        std::size_t calls = 0;
        for (std::uint64_t trial = 0; trial < 100 && ok; ++trial) {
            SplitMix64 rng(5500 + trial);
            const std::uint32_t regions = 2 + static_cast<std::uint32_t>(rng.below(3));
            const RetrievalBundle bundle = placerank::testing::make_bundle(
                9900 + trial, 10, 8 + static_cast<std::uint32_t>(rng.below(8)), 5, regions,
                4 + static_cast<std::uint32_t>(rng.below(4)));
            placerank::rerank::RerankParams params;
            params.top_regions = regions;
            params.alpha = rng.uniform(0.1, 2.0);
            const PseudoScorer scorer(2 + regions + regions * regions);
            for (const auto& query : bundle.queries) {
                const auto result = placerank::rerank::rerank_query(bundle, query.id, scorer, params);
                ++calls;
                std::vector<std::uint32_t> got;
                for (const auto& entry : result.entries) {
                    got.push_back(entry.db_index);
                }
                std::vector<std::uint32_t> want = bundle.candidates.at(query.id).db_indices;
                std::sort(got.begin(), got.end());
                std::sort(want.begin(), want.end());
                ok = ok && got == want;
            }
        }
        report(5, "1000 pseudo-random rerank calls preserve every candidate multiset", ok,
               std::to_string(calls) + " calls");
    }

    // 6. Single tree equals the exhaustive best-split oracle.
    {
        bool ok = true;
        for (std::uint64_t trial = 0; trial < 200 && ok; ++trial) {
            SplitMix64 rng(6600 + trial);
            const std::size_t points = 1 + rng.below(8);
            const std::uint64_t salt = rng.next();
            placerank::pdl::TrainingSet data;
            for (std::size_t i = 0; i < points; ++i) {
                const double x = static_cast<double>(rng.below(5));
                const double y = static_cast<double>(rng.below(5));
                // Labels derive from the grid point, so duplicates stay consistent.
                const int label =
                    1 + static_cast<int>((static_cast<std::uint64_t>(x) * 3 + static_cast<std::uint64_t>(y) * 5 +
                                          salt) %
                                         2);
                data.add_row(std::vector<double>{x, y}, label);
            }
            std::vector<std::size_t> sample(data.rows());
            for (std::size_t i = 0; i < sample.size(); ++i) {
                sample[i] = i;
            }
            const placerank::pdl::DecisionTree tree = placerank::pdl::train_tree(data, sample, 1);
            const std::unique_ptr<OracleNode> oracle = oracle_grow(data, sample, 1);
            for (double x = 0.0; x < 5.0 && ok; x += 1.0) {
                for (double y = 0.0; y < 5.0 && ok; y += 1.0) {
                    const std::vector<double> probe{x, y};
                    ok = tree.predict(probe) == oracle->predict(probe);
                }
            }
            for (std::size_t i = 0; i < data.rows() && ok; ++i) {
                ok = tree.predict(data.row(i)) == oracle->predict(data.row(i));
            }
        }
        report(6, "single unbagged trees match the exhaustive best-split oracle on 200 random consistent "
                  "datasets (exact)",
               ok);
    }

    // 7. Sharp soft assignment converges to hard assignment.
    {
        const double tol = 1e-6;
        bool ok = true;
        double worst = 0.0;
        for (std::uint64_t trial = 0; trial < 100 && ok; ++trial) {
            SplitMix64 rng(7700 + trial);
            const std::uint32_t k = 2 + static_cast<std::uint32_t>(rng.below(4));
            const std::uint32_t d = 3 + static_cast<std::uint32_t>(rng.below(4));
            placerank::vlad::ClusterCenters centers;
            centers.centers = placerank::testing::random_unit_rows(rng, k, d);
            centers.sharpness = 1e6;

            const std::uint32_t cells = 1 + static_cast<std::uint32_t>(rng.below(8));
            DescriptorMatrix map(cells, d);
            for (std::uint32_t r = 0; r < cells; ++r) {
                // Resample until the nearest center is unambiguous.
                while (true) {
                    std::vector<double> x(d);
                    for (auto& v : x) {
                        v = rng.uniform(-1.0, 1.0);
                    }
                    std::vector<double> dists;
                    for (std::uint32_t c = 0; c < k; ++c) {
                        double dist = 0.0;
                        for (std::uint32_t j = 0; j < d; ++j) {
                            const double diff = x[j] - centers.centers.at(c, j);
                            dist += diff * diff;
                        }
                        dists.push_back(dist);
                    }
                    std::sort(dists.begin(), dists.end());
                    if (k < 2 || dists[1] - dists[0] > 1e-3) {
                        for (std::uint32_t j = 0; j < d; ++j) {
                            map.at(r, j) = static_cast<float>(x[j]);
                        }
                        break;
                    }
                }
            }

            const std::vector<float> got = placerank::vlad::vlad_aggregate(map, centers, true);
            const std::vector<double> want = hard_assignment_vlad(map, centers);
            for (std::size_t i = 0; i < want.size(); ++i) {
                worst = std::max(worst, std::abs(static_cast<double>(got[i]) - want[i]));
            }
            ok = worst <= tol;
        }
        std::ostringstream detail;
        detail << "max |diff| = " << worst;
        report(7, "descriptor aggregation at sharpness 1e6 matches the hard-assignment oracle within 1e-6 on "
                  "100 instances",
               ok, detail.str());
    }

    // 8. Candidate softmax terms sum to exp(-c_min).
    {
        const double tol = 1e-9;
        bool ok = true;
        double worst = 0.0;
        for (std::uint64_t trial = 0; trial < 10000 && ok; ++trial) {
            SplitMix64 rng(8800 + trial);
            const std::size_t k = 1 + rng.below(12);
            std::vector<double> distances(k);
            for (auto& v : distances) {
                v = rng.uniform(0.0, 6.0);
            }
            const double c_min = rng.uniform(0.0, 3.0);
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                sum += placerank::rerank::candidate_softmax(distances, j, c_min);
            }
            worst = std::max(worst, std::abs(sum - std::exp(-c_min)));
            ok = worst <= tol;
        }
        std::ostringstream detail;
        detail << "max |sum - exp(-c_min)| = " << worst;
        report(8, "candidate softmax terms sum to exp(-c_min) within 1e-9 over 10000 fuzzed vectors", ok,
               detail.str());
    }

    // 9. Objectness hand values.
    {
        placerank::edgebox::EdgeGroup inside;
        inside.cx = 3.0;
        inside.cy = 3.0;
        inside.theta = 0.0;
        inside.magnitude = 6.0;
        inside.pixels = {{3.0, 3.0, 6.0}};
        const placerank::edgebox::EdgeGroupGraph graph({inside}, 2.0, 0.05);
        const RegionBox box{2.0, 2.0, 2.0, 2.0, 0.0};
        const double h = placerank::edgebox::box_score(graph, box, 1.0, 0.5).h;

        const auto group_at = [](double x, double y, double theta) {
            placerank::edgebox::EdgeGroup g;
            g.cx = x;
            g.cy = y;
            g.theta = theta;
            g.magnitude = 1.0;
            g.pixels = {{x, y, 1.0}};
            return g;
        };
        const double aligned =
            placerank::edgebox::group_affinity(group_at(0.0, 0.0, 0.0), group_at(5.0, 0.0, 0.0), 2.0);
        const double orthogonal =
            placerank::edgebox::group_affinity(group_at(0.0, 0.0, 0.0), group_at(0.0, 5.0, 0.0), 2.0);

        const bool ok = h == 0.75 && aligned == 1.0 && orthogonal == 0.0;
        std::ostringstream detail;
        detail.precision(17);
        detail << "h = " << h << ", aligned = " << aligned << ", orthogonal = " << orthogonal;
        report(9, "box score for one enclosed weight-1 magnitude-6 group in a 2x2 box at kappa 1 is exactly "
                  "0.75; aligned/orthogonal affinities are exactly 1 and 0",
               ok, detail.str());
    }

    // 10. Correlation filter keeps or zeroes entries exactly.
    {
        bool ok = true;
        for (std::uint64_t trial = 0; trial < 10000 && ok; ++trial) {
            SplitMix64 rng(1010 + trial);
            const std::size_t rows = 1 + rng.below(8);
            const std::size_t cols = 1 + rng.below(8);
            const double cap = rng.uniform(0.2, 1.8);
            RealMatrix c(rows, cols);
            for (double& v : c.v) {
                v = rng.below(10) == 0 ? cap : rng.uniform(0.0, 2.0);  // plant exact boundary hits
            }
            const auto result = placerank::rerank::filter_correlation(c, cap);
            for (std::size_t i = 0; i < c.v.size() && ok; ++i) {
                ok = c.v[i] >= cap ? result.filtered.v[i] == 0.0 : result.filtered.v[i] == c.v[i];
            }
        }
        report(10, "filtered correlation is exactly 0 where c >= d_c_max and bit-identical to c elsewhere "
                   "(10000 fuzzed matrices)",
               ok);
    }

    // 11. Serialization round-trips are byte-stable.
    {
        const fs::path dir = make_scratch("roundtrip");
        bool ok = true;
        std::string what = "";

        for (std::uint64_t trial = 0; trial < 30 && ok; ++trial) {
            SplitMix64 rng(1100 + trial);
            DescriptorMatrix m(1 + static_cast<std::uint32_t>(rng.below(20)),
                               1 + static_cast<std::uint32_t>(rng.below(16)));
            for (std::uint32_t r = 0; r < m.rows(); ++r) {
                for (std::uint32_t c = 0; c < m.cols(); ++c) {
                    m.at(r, c) = static_cast<float>(rng.gaussian());
                }
            }
            const fs::path first = dir / ("m" + std::to_string(trial) + "a.mqbl");
            const fs::path second = dir / ("m" + std::to_string(trial) + "b.mqbl");
            m.save(first);
            DescriptorMatrix::load(first).save(second);
            ok = read_file(first) == read_file(second);
            if (!ok) {
                what = "matrix";
            }
        }

        for (std::uint64_t trial = 0; trial < 8 && ok; ++trial) {
            const RetrievalBundle bundle = placerank::testing::make_bundle(1111 + trial, 3, 8, 4, 3, 6);
            const fs::path first = dir / ("b" + std::to_string(trial) + "a");
            const fs::path second = dir / ("b" + std::to_string(trial) + "b");
            placerank::save_bundle(bundle, first);
            placerank::save_bundle(placerank::load_bundle(first), second);
            ok = dir_bytes(first) == dir_bytes(second);
            if (!ok) {
                what = "bundle";
            }
        }

        for (std::uint64_t trial = 0; trial < 8 && ok; ++trial) {
            SplitMix64 rng(1122 + trial);
            const std::uint32_t m = 2;
            const std::size_t width = 2 + m + m * m;
            placerank::pdl::TrainingSet data;
            for (std::size_t i = 0; i < 16; ++i) {
                std::vector<double> row(width);
                for (auto& v : row) {
                    v = rng.uniform(0.0, 4.0);
                }
                data.add_row(row, 1 + static_cast<int>(i % 2));
            }
            const placerank::pdl::Model bagged(placerank::pdl::train_bagged(data, 5, 77 + trial, 1), m);
            const placerank::pdl::Model gaussian(placerank::pdl::train_gaussian(data), m);
            for (const auto* model : {&bagged, &gaussian}) {
                const fs::path first = dir / (model->kind() + std::to_string(trial) + "a.json");
                const fs::path second = dir / (model->kind() + std::to_string(trial) + "b.json");
                model->save(first);
                placerank::pdl::Model::load(first).save(second);
                ok = ok && read_file(first) == read_file(second);
            }
            if (!ok) {
                what = "model";
            }
        }
        report(11, "matrix, bundle, and model files round-trip byte-identically (fuzzed)", ok, what);
    }

    // 12. Recall tables never decrease in N.
    {
        bool ok = true;
        for (std::uint64_t trial = 0; trial < 200 && ok; ++trial) {
            SplitMix64 rng(1212 + trial);
            const std::size_t queries = 3 + rng.below(6);
            const std::size_t k = 5 + rng.below(6);
            placerank::eval::Rankings rankings;
            placerank::eval::Positives positives;
            for (std::size_t q = 0; q < queries; ++q) {
                const std::string qid = "q" + std::to_string(q);
                std::vector<std::string> ids;
                for (std::size_t j = 0; j < k; ++j) {
                    ids.push_back("db" + std::to_string(rng.below(20)));
                }
                rankings[qid] = ids;
                std::set<std::string> pos;
                const std::size_t count = rng.below(4);
                for (std::size_t j = 0; j < count; ++j) {
                    pos.insert("db" + std::to_string(rng.below(20)));
                }
                if (q == 0) {
                    pos.insert(ids[rng.below(k)]);  // keep at least one query scorable
                }
                positives[qid] = pos;
            }
            std::vector<int> ns;
            for (std::size_t n = 1; n <= k; ++n) {
                ns.push_back(static_cast<int>(n));
            }
            const auto table = placerank::eval::recall_at_n(rankings, positives, ns, "fuzzed");
            for (std::size_t i = 1; i < table.points.size() && ok; ++i) {
                ok = table.points[i].second >= table.points[i - 1].second;
            }
        }
        report(12, "recall tables are non-decreasing in N on 200 fuzzed ranking sets", ok);
    }

    if (failures != 0) {
        std::cout << failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all 12 criteria passed\n";
    return 0;
}
