#pragma once

#include "placerank/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace placerank {

/// Axis-aligned region in pixel coordinates, top-left origin, plus an
/// objectness score. Width and height may be fractional.
struct RegionBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    double objectness = 0.0;

    bool operator==(const RegionBox&) const = default;
};

/// Regions of one image ordered by non-increasing objectness.
struct RegionSet {
    int image_w = 0;
    int image_h = 0;
    std::vector<RegionBox> boxes;

    bool operator==(const RegionSet&) const = default;
};

/// Clamps the box into [0, image_w] x [0, image_h], shrinking width/height
/// so the box stays inside. Throws ValidationError for non-positive image
/// dimensions or non-finite box fields.
RegionBox clamp_box(const RegionBox& box, int image_w, int image_h);

/// Stable-sorts boxes by descending objectness (ties keep input order) and
/// clamps each one. Applied to every region set at load time.
void normalize_region_set(RegionSet& regions);

/// Ranked retrieval candidates for one query: database row indices with
/// non-decreasing distances, plus the forward distance differences r_prime
/// (r_prime[j] = d[j+1] - d[j]; the last entry duplicates its predecessor,
/// and a single-candidate list gets r_prime = {0}).
struct CandidateList {
    std::vector<std::uint32_t> db_indices;
    std::vector<double> distances;
    std::vector<double> r_prime;

    std::size_t size() const { return db_indices.size(); }
    double d_min() const { return distances.front(); }
    double d_max() const { return distances.back(); }

    bool operator==(const CandidateList&) const = default;

    /// Validates that distances are finite and non-decreasing and fills in
    /// r_prime. Throws ValidationError otherwise.
    static CandidateList make(std::vector<std::uint32_t> db_indices, std::vector<double> distances);
};

/// One image of the bundle: identity, region geometry, a 1 x d global
/// descriptor, and the (n+1) x d per-region descriptor matrix whose row 0 is
/// the whole-image descriptor followed by one row per region in objectness
/// order.
struct ImageEntry {
    std::string id;
    RegionSet regions;
    DescriptorMatrix global;
    DescriptorMatrix region_descriptors;
};

/// In-core dataset: query and database images, optional per-query candidate
/// lists, optional per-query positive sets (as database indices).
struct RetrievalBundle {
    std::uint32_t descriptor_dim = 0;
    std::vector<ImageEntry> queries;
    std::vector<ImageEntry> database;
    std::map<std::string, CandidateList> candidates;
    std::map<std::string, std::vector<std::uint32_t>> ground_truth;

    const ImageEntry& query(const std::string& id) const;
    const ImageEntry& db_entry(std::uint32_t index) const { return database.at(index); }
    std::uint32_t query_index(const std::string& id) const;
    std::uint32_t db_index(const std::string& id) const;

    /// All database global descriptors stacked into one db_count x d matrix,
    /// row i taken from database[i].
    DescriptorMatrix stacked_db_globals() const;

    /// Validates cross-references and dimensions; called by load_bundle and
    /// available to code that assembles bundles in memory.
    void validate() const;

private:
    mutable std::unordered_map<std::string, std::uint32_t> query_lookup_;
    mutable std::unordered_map<std::string, std::uint32_t> db_lookup_;
    void build_lookup() const;
};

/// Reads bundle.json from `dir` along with every referenced matrix file.
/// Region sets are clamped and objectness-sorted; candidate lists get their
/// derived fields rebuilt. Throws IoError for missing/corrupt files and
/// ValidationError for inconsistent content, always naming the path.
RetrievalBundle load_bundle(const std::filesystem::path& dir);

/// Writes bundle.json plus one global and one per-region matrix file per
/// image under dir/descriptors/. Empty candidate/ground-truth sections are
/// omitted. All writes are atomic (temp file + rename).
void save_bundle(const RetrievalBundle& bundle, const std::filesystem::path& dir);

/// Brute-force top-k retrieval by Euclidean distance over db rows.
/// Ties are broken toward the lower row index. Preconditions: 1 <= k <=
/// db.rows() and query length equals db.cols().
CandidateList retrieve_topk(std::span<const float> query_desc, const DescriptorMatrix& db_descs, std::uint32_t k);

/// Runs retrieve_topk for every query in the bundle and stores the results
/// in bundle.candidates (replacing existing lists).
void retrieve_all(RetrievalBundle& bundle, std::uint32_t k);

/// Standalone candidates document: {"candidates": {query_id: [[db_id,
/// distance], ...]}} plus a free-form metadata block supplied by the caller.
void save_candidates_doc(const std::filesystem::path& path, const RetrievalBundle& bundle,
                         const std::string& metadata_json);
void load_candidates_doc(const std::filesystem::path& path, RetrievalBundle& bundle);

/// Standalone ground-truth document: {"positives": {query_id: [db_id, ...]}}.
void load_ground_truth_doc(const std::filesystem::path& path, RetrievalBundle& bundle);

} // namespace placerank
