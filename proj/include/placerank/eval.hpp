#pragma once

#include "placerank/bundle.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace placerank::eval {

/// Per-query ordered database ids, best first.
using Rankings = std::map<std::string, std::vector<std::string>>;

/// Per-query positive database ids.
using Positives = std::map<std::string, std::set<std::string>>;

struct RecallTable {
    std::string method;
    std::vector<std::pair<int, double>> points;  ///< (N, recall percent), N ascending
    std::size_t query_count = 0;                 ///< queries with at least one positive
    std::size_t excluded_count = 0;              ///< queries skipped for lacking positives
};

/// Fraction (as a percentage) of queries whose top-N contains a positive,
/// for each requested N (deduplicated and sorted ascending). Queries with
/// no positives are excluded from the denominator and counted in
/// excluded_count. Throws ValidationError for N = 0, empty rankings, or
/// when every query lacks positives.
RecallTable recall_at_n(const Rankings& rankings, const Positives& positives, std::vector<int> ns,
                        const std::string& method);

struct Comparison {
    RecallTable baseline;
    RecallTable reranked;
    std::vector<std::pair<int, double>> deltas;  ///< reranked minus baseline per N
};

/// Evaluates both ranking sets over the same queries (the query id sets
/// must match exactly) and reports per-N deltas.
Comparison compare(const Rankings& baseline, const Rankings& reranked, const Positives& positives,
                   std::vector<int> ns);

/// Synthetic bundle layout: one planted positive per query (database index
/// = query index), `distractors` hard negatives per query whose global
/// descriptor sits strictly closer to the query than the positive's but
/// whose region descriptors are uncorrelated, and random far images for the
/// rest. The positive shares region structure with its query, so region
/// evidence separates it from the distractors.
struct SynthesisParams {
    std::uint64_t seed = 7;
    std::uint32_t query_count = 200;
    std::uint32_t db_count = 2000;
    std::uint32_t dim = 64;
    std::uint32_t regions = 8;
    std::uint32_t distractors = 1;
    double noise = 0.7;  ///< distance scale of the planted positive
    int image_w = 640;
    int image_h = 480;
};

/// Deterministically generates a bundle from the seed (identical bytes for
/// identical params). With noise > 0 and distractors >= 1 the generator
/// verifies that every distractor lands strictly closer to its query than
/// the planted positive. Throws ValidationError for impossible geometry or
/// a database too small for query_count * (1 + distractors) planted images.
RetrievalBundle synth_generate(const SynthesisParams& params);

/// Rankings from the bundle's stored candidate lists.
Rankings rankings_from_bundle(const RetrievalBundle& bundle);

/// Positive id sets from the bundle's ground truth.
Positives positives_from_bundle(const RetrievalBundle& bundle);

/// Reads rankings from either a candidates document or a rerank output
/// document, dispatching on the recorded format tag.
Rankings load_rankings(const std::filesystem::path& path);

/// Reads a standalone ground-truth document into positive id sets.
Positives load_positives_doc(const std::filesystem::path& path);

/// Writes the bundle's ground truth as a standalone document readable by
/// load_positives_doc.
void save_positives_doc(const std::filesystem::path& path, const RetrievalBundle& bundle);

/// Recall table document: `# key=value` metadata comment lines, a header,
/// then one `method,N,recall,query_count` row per table point followed by
/// signed `delta` rows. Written atomically.
void write_comparison_csv(const std::filesystem::path& path, const Comparison& comparison,
                          const std::vector<std::pair<std::string, std::string>>& metadata);

/// Plot-data document: `N,baseline,reranked` rows (N on the x axis, recall
/// percent on the y axis, one column per series).
void write_plot_csv(const std::filesystem::path& path, const Comparison& comparison,
                    const std::vector<std::pair<std::string, std::string>>& metadata);

} // namespace placerank::eval
