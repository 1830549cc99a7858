#include "placerank/eval.hpp"

#include "placerank/errors.hpp"
#include "placerank/rng.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace placerank::eval {

using placerank::detail::ordered_json;
using placerank::detail::read_json_file;
using placerank::detail::write_json_atomic;
using placerank::detail::write_text_atomic;

namespace {

std::vector<int> normalize_ns(std::vector<int> ns) {
    if (ns.empty()) {
        throw ValidationError("recall_at_n: need at least one N");
    }
    for (int n : ns) {
        if (n < 1) {
            throw ValidationError("recall_at_n: N must be at least 1, got " + std::to_string(n));
        }
    }
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    return ns;
}

std::string format_recall(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    return buf;
}

std::string format_delta(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.4f", value);
    return buf;
}

std::string metadata_comments(const std::vector<std::pair<std::string, std::string>>& metadata) {
    std::string out;
    for (const auto& [key, value] : metadata) {
        out += "# " + key + "=" + value + "\n";
    }
    return out;
}

} // namespace

RecallTable recall_at_n(const Rankings& rankings, const Positives& positives, std::vector<int> ns,
                        const std::string& method) {
    ns = normalize_ns(std::move(ns));
    if (rankings.empty()) {
        throw ValidationError("recall_at_n: rankings are empty");
    }

    RecallTable table;
    table.method = method;
    std::vector<std::size_t> hits(ns.size(), 0);
    for (const auto& [qid, ranking] : rankings) {
        auto pos_it = positives.find(qid);
        if (pos_it == positives.end() || pos_it->second.empty()) {
            ++table.excluded_count;
            continue;
        }
        ++table.query_count;
        const auto& pos = pos_it->second;
        std::size_t first_hit = ranking.size();
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (pos.count(ranking[r])) {
                first_hit = r;
                break;
            }
        }
        for (std::size_t i = 0; i < ns.size(); ++i) {
            if (first_hit < static_cast<std::size_t>(ns[i])) {
                ++hits[i];
            }
        }
    }
    if (table.query_count == 0) {
        throw ValidationError("recall_at_n: no query has a positive set");
    }
    for (std::size_t i = 0; i < ns.size(); ++i) {
        table.points.emplace_back(ns[i],
                                  100.0 * static_cast<double>(hits[i]) / static_cast<double>(table.query_count));
    }
    return table;
}

Comparison compare(const Rankings& baseline, const Rankings& reranked, const Positives& positives,
                   std::vector<int> ns) {
    if (baseline.size() != reranked.size()) {
        throw ValidationError("compare: ranking sets cover different query counts");
    }
    for (const auto& [qid, ranking] : baseline) {
        if (!reranked.count(qid)) {
            throw ValidationError("compare: query '" + qid + "' is missing from the reranked set");
        }
    }
    Comparison result;
    result.baseline = recall_at_n(baseline, positives, ns, "baseline");
    result.reranked = recall_at_n(reranked, positives, std::move(ns), "reranked");
    for (std::size_t i = 0; i < result.baseline.points.size(); ++i) {
        result.deltas.emplace_back(result.baseline.points[i].first,
                                   result.reranked.points[i].second - result.baseline.points[i].second);
    }
    return result;
}

namespace {

std::string padded_id(const char* prefix, std::uint32_t value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06u", prefix, value);
    return buf;
}

std::vector<double> unit_vector(SplitMix64& rng, std::uint32_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = rng.gaussian();
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

std::vector<double> axpy(const std::vector<double>& base, double scale, const std::vector<double>& dir) {
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = base[i] + scale * dir[i];
    }
    return out;
}

std::vector<double> normalized(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        return v;
    }
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

DescriptorMatrix to_row_matrix(const std::vector<double>& v) {
    DescriptorMatrix m(1, static_cast<std::uint32_t>(v.size()));
    for (std::uint32_t i = 0; i < v.size(); ++i) {
        m.at(0, i) = static_cast<float>(v[i]);
    }
    return m;
}

DescriptorMatrix stack_rows(const std::vector<std::vector<double>>& rows) {
    DescriptorMatrix m(static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows.front().size()));
    for (std::uint32_t r = 0; r < rows.size(); ++r) {
        for (std::uint32_t c = 0; c < rows[r].size(); ++c) {
            m.at(r, c) = static_cast<float>(rows[r][c]);
        }
    }
    return m;
}

RegionSet random_regions(SplitMix64& rng, const SynthesisParams& p) {
    RegionSet set;
    set.image_w = p.image_w;
    set.image_h = p.image_h;
    for (std::uint32_t i = 0; i < p.regions; ++i) {
        RegionBox box;
        box.w = rng.uniform(p.image_w / 8.0, p.image_w / 2.0);
        box.h = rng.uniform(p.image_h / 8.0, p.image_h / 2.0);
        box.x = rng.uniform(0.0, p.image_w - box.w);
        box.y = rng.uniform(0.0, p.image_h - box.h);
        box.objectness = rng.uniform();
        set.boxes.push_back(box);
    }
    normalize_region_set(set);
    return set;
}

} // namespace

RetrievalBundle synth_generate(const SynthesisParams& p) {
    if (p.query_count == 0 || p.db_count == 0) {
        throw ValidationError("synth_generate: query and database counts must be positive");
    }
    if (p.dim < 2) {
        throw ValidationError("synth_generate: descriptor dimension must be at least 2");
    }
    if (p.regions == 0) {
        throw ValidationError("synth_generate: need at least one region per image");
    }
    if (p.image_w < 8 || p.image_h < 8) {
        throw ValidationError("synth_generate: image dimensions must be at least 8 pixels");
    }
    if (static_cast<double>(p.regions) > static_cast<double>(p.image_w) * p.image_h) {
        throw ValidationError("synth_generate: region count is impossible for the image size");
    }
    if (!std::isfinite(p.noise) || p.noise < 0.0) {
        throw ValidationError("synth_generate: noise must be finite and non-negative");
    }
    const std::uint64_t planted = static_cast<std::uint64_t>(p.query_count) * (1 + p.distractors);
    if (p.db_count < planted) {
        throw ValidationError("synth_generate: database size " + std::to_string(p.db_count) +
                              " cannot hold " + std::to_string(planted) + " planted images");
    }

    SplitMix64 rng(p.seed);
    RetrievalBundle bundle;
    bundle.descriptor_dim = p.dim;

    std::vector<std::vector<double>> query_globals(p.query_count);
    std::vector<std::vector<std::vector<double>>> query_region_rows(p.query_count);
    for (std::uint32_t q = 0; q < p.query_count; ++q) {
        ImageEntry entry;
        entry.id = padded_id("q", q);
        query_globals[q] = unit_vector(rng, p.dim);
        entry.regions = random_regions(rng, p);
        std::vector<std::vector<double>> rows;
        rows.push_back(query_globals[q]);
        query_region_rows[q].reserve(p.regions);
        for (std::uint32_t i = 0; i < p.regions; ++i) {
            query_region_rows[q].push_back(normalized(axpy(query_globals[q], 1.0, unit_vector(rng, p.dim))));
            rows.push_back(query_region_rows[q].back());
        }
        entry.global = to_row_matrix(query_globals[q]);
        entry.region_descriptors = stack_rows(rows);
        bundle.queries.push_back(std::move(entry));
    }

    std::vector<double> positive_scale(p.query_count, 0.0);
    for (std::uint32_t i = 0; i < p.db_count; ++i) {
        ImageEntry entry;
        entry.id = padded_id("db", i);
        entry.regions = random_regions(rng, p);
        std::vector<double> global;
        std::vector<std::vector<double>> rows(1);

        if (i < p.query_count) {
            // Planted positive for query i: nearby global, matching regions.
            const std::uint32_t q = i;
            positive_scale[q] = p.noise * (0.75 + 0.5 * rng.uniform());
            global = axpy(query_globals[q], positive_scale[q], unit_vector(rng, p.dim));
            rows[0] = normalized(global);
            for (std::uint32_t r = 0; r < p.regions; ++r) {
                rows.push_back(normalized(axpy(query_region_rows[q][r], 0.5 * p.noise, unit_vector(rng, p.dim))));
            }
        } else if (i < planted) {
            // Hard distractor: global strictly closer to the query than the
            // positive's, region rows unrelated to the query's landmarks.
            const std::uint32_t q = (i - p.query_count) / p.distractors;
            const double scale = positive_scale[q] * (0.6 + 0.35 * rng.uniform());
            global = axpy(query_globals[q], scale, unit_vector(rng, p.dim));
            rows[0] = normalized(global);
            for (std::uint32_t r = 0; r < p.regions; ++r) {
                rows.push_back(unit_vector(rng, p.dim));
            }
        } else {
            global = unit_vector(rng, p.dim);
            rows[0] = global;
            for (std::uint32_t r = 0; r < p.regions; ++r) {
                rows.push_back(normalized(axpy(global, 1.0, unit_vector(rng, p.dim))));
            }
        }
        entry.global = to_row_matrix(global);
        entry.region_descriptors = stack_rows(rows);
        bundle.database.push_back(std::move(entry));
    }

    for (std::uint32_t q = 0; q < p.query_count; ++q) {
        bundle.ground_truth.emplace(bundle.queries[q].id, std::vector<std::uint32_t>{q});
    }
    bundle.validate();

    if (p.noise > 0.0 && p.distractors > 0) {
        // Planted inversions: every distractor must beat its positive in the
        // global-descriptor metric, otherwise the construction failed.
        for (std::uint32_t q = 0; q < p.query_count; ++q) {
            const double d_pos =
                euclidean_distance(bundle.queries[q].global.row(0), bundle.database[q].global.row(0));
            for (std::uint32_t t = 0; t < p.distractors; ++t) {
                const std::uint32_t idx = p.query_count + q * p.distractors + t;
                const double d_dis =
                    euclidean_distance(bundle.queries[q].global.row(0), bundle.database[idx].global.row(0));
                if (!(d_dis < d_pos)) {
                    throw ValidationError("synth_generate: planted distractor is not closer than the positive for " +
                                          bundle.queries[q].id);
                }
            }
        }
    }
    return bundle;
}

Rankings rankings_from_bundle(const RetrievalBundle& bundle) {
    Rankings out;
    for (const auto& [qid, list] : bundle.candidates) {
        std::vector<std::string> ids;
        ids.reserve(list.size());
        for (std::uint32_t idx : list.db_indices) {
            ids.push_back(bundle.database[idx].id);
        }
        out.emplace(qid, std::move(ids));
    }
    return out;
}

Positives positives_from_bundle(const RetrievalBundle& bundle) {
    Positives out;
    for (const auto& [qid, positives] : bundle.ground_truth) {
        std::set<std::string> ids;
        for (std::uint32_t idx : positives) {
            ids.insert(bundle.database[idx].id);
        }
        out.emplace(qid, std::move(ids));
    }
    return out;
}

Rankings load_rankings(const std::filesystem::path& path) {
    ordered_json doc = read_json_file(path);
    Rankings out;
    try {
        const auto format = doc.at("format").get<std::string>();
        if (format == "placerank-candidates") {
            for (const auto& [qid, arr] : doc.at("candidates").items()) {
                std::vector<std::string> ids;
                for (const auto& pair : arr) {
                    ids.push_back(pair.at(0).get<std::string>());
                }
                out.emplace(qid, std::move(ids));
            }
        } else if (format == "placerank-rerank") {
            for (const auto& [qid, arr] : doc.at("results").items()) {
                std::vector<std::string> ids;
                for (const auto& row : arr) {
                    ids.push_back(row.at("db_id").get<std::string>());
                }
                out.emplace(qid, std::move(ids));
            }
        } else {
            throw IoError(path.string() + ": format '" + format + "' holds no rankings");
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed rankings document: " + e.what());
    }
    return out;
}

Positives load_positives_doc(const std::filesystem::path& path) {
    ordered_json doc = read_json_file(path);
    Positives out;
    try {
        if (doc.at("format").get<std::string>() != "placerank-ground-truth") {
            throw IoError(path.string() + ": not a ground-truth document");
        }
        for (const auto& [qid, arr] : doc.at("positives").items()) {
            std::set<std::string> ids;
            for (const auto& id : arr) {
                ids.insert(id.get<std::string>());
            }
            out.emplace(qid, std::move(ids));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed ground-truth document: " + e.what());
    }
    return out;
}

void save_positives_doc(const std::filesystem::path& path, const RetrievalBundle& bundle) {
    ordered_json doc;
    doc["format"] = "placerank-ground-truth";
    doc["version"] = 1;
    ordered_json positives;
    for (const auto& [qid, rows] : bundle.ground_truth) {
        ordered_json arr = ordered_json::array();
        for (std::uint32_t row : rows) {
            if (row >= bundle.database.size()) {
                throw ValidationError("ground truth for query '" + qid + "' references database row " +
                                      std::to_string(row) + " beyond the database size");
            }
            arr.push_back(bundle.database[row].id);
        }
        positives[qid] = std::move(arr);
    }
    doc["positives"] = std::move(positives);
    write_json_atomic(path, doc);
}

void write_comparison_csv(const std::filesystem::path& path, const Comparison& comparison,
                          const std::vector<std::pair<std::string, std::string>>& metadata) {
    std::string out = metadata_comments(metadata);
    out += "method,N,recall,query_count\n";
    for (const auto* table : {&comparison.baseline, &comparison.reranked}) {
        for (const auto& [n, recall] : table->points) {
            out += table->method + "," + std::to_string(n) + "," + format_recall(recall) + "," +
                   std::to_string(table->query_count) + "\n";
        }
    }
    for (const auto& [n, delta] : comparison.deltas) {
        out += "delta," + std::to_string(n) + "," + format_delta(delta) + "," +
               std::to_string(comparison.baseline.query_count) + "\n";
    }
    write_text_atomic(path, out);
}

void write_plot_csv(const std::filesystem::path& path, const Comparison& comparison,
                    const std::vector<std::pair<std::string, std::string>>& metadata) {
    std::string out = metadata_comments(metadata);
    out += "N,baseline,reranked\n";
    for (std::size_t i = 0; i < comparison.baseline.points.size(); ++i) {
        out += std::to_string(comparison.baseline.points[i].first) + "," +
               format_recall(comparison.baseline.points[i].second) + "," +
               format_recall(comparison.reranked.points[i].second) + "\n";
    }
    write_text_atomic(path, out);
}

} // namespace placerank::eval
