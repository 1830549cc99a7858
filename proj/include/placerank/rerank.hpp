#pragma once

#include "placerank/bundle.hpp"
#include "placerank/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace placerank::rerank {

/// Row-major double matrix for pipeline intermediates; distinct from
/// DescriptorMatrix, which is the float32 storage format.
struct RealMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    RealMatrix() = default;
    RealMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    bool operator==(const RealMatrix&) const = default;
};

/// How query and candidate region descriptors are compared. `product` takes
/// the literal row inner products (rows are expected L2-normalized, so
/// values fall in [-1, 1]); `distance` takes pairwise Euclidean distances,
/// which makes the downstream max-filter behave as a true distance cutoff.
enum class CorrelationMode { product, distance };

struct RerankParams {
    double alpha = 1.15;  ///< distance-update weight (0.31 suits 4096-D descriptors)
    double beta = 10.0;   ///< information-matrix scale
    std::uint32_t top_regions = 10;  ///< m, the shrink size and feature block width
    CorrelationMode mode = CorrelationMode::product;
};

/// Everything computed for one (query, candidate) pair. Matrix entries
/// follow the pipeline order: the raw correlation is filtered against the
/// worst candidate distance and the filtered matrix feeds every later
/// stage, so `c` entries that failed the filter are exactly zero.
struct PairContext {
    RealMatrix c;            ///< correlation after filtering
    RealMatrix c_f;          ///< raw correlation minus d_c_max
    RealMatrix d;            ///< -1 where c_f < 0, else 0
    RealMatrix s;            ///< information matrix
    RealMatrix p_sc;         ///< s (elementwise*) c_f
    RealMatrix p_sc_small;   ///< m x m gather of p_sc by per-column sort of c
    RealMatrix m;            ///< p_sm * p_sc_small
    double c_min = 0.0;      ///< minimum entry of the filtered correlation
    double p_sm = 0.0;       ///< scaled softmax weight of this candidate
    double d_c = 0.0;        ///< retrieval distance of this candidate
    double r_prime = 0.0;    ///< forward distance gap at this rank
    std::vector<double> query_region_distances;  ///< m query-global-to-region distances
    std::vector<double> features;  ///< [d_c, r_prime, query_region_distances, m row-major]
};

/// Inner products (or pairwise distances) between every row of fq and every
/// row of fc: out[x][y] compares fq row x with fc row y. Requires equal
/// column counts and at least one row on each side.
RealMatrix correlation_matrix(const DescriptorMatrix& fq, const DescriptorMatrix& fc, CorrelationMode mode);

struct FilterResult {
    RealMatrix c_f;       ///< c - d_c_max entrywise
    RealMatrix mask;      ///< -1 where c_f < 0, else 0
    RealMatrix filtered;  ///< |mask| (elementwise*) c: original value where kept, 0 where dropped
};

/// Drops correlation entries that reach or exceed the worst candidate
/// distance: entries with c - d_c_max >= 0 become exactly 0, every other
/// entry is preserved bit-for-bit.
FilterResult filter_correlation(const RealMatrix& c, double d_c_max);

/// Landmark size prior exp(-(w*h)/(image_w*image_h)). Throws
/// ValidationError for a non-positive image area.
double box_prior(const RegionBox& box, int image_w, int image_h);

/// Priors for the whole image (exp(-1), first) followed by one prior per
/// region in stored order; aligns with descriptor-matrix rows.
std::vector<double> image_box_priors(const RegionSet& regions);

/// Information matrix: s[x][y] = beta * priors_q[x] * priors_c[y]
/// * exp(-(d_c_min + c[x][y])) * exp(-r_prime_j). Prior lengths must match
/// the correlation shape and all inputs must be finite.
RealMatrix information_matrix(const RealMatrix& c, double d_c_min, double r_prime_j,
                              const std::vector<double>& priors_q, const std::vector<double>& priors_c, double beta);

/// Elementwise product of the information matrix with the subtracted
/// correlation c_f. Entries are typically negative because c_f is.
RealMatrix probabilistic_correlation(const RealMatrix& s, const RealMatrix& c_f);

/// Shrinks p_sc to m x m: for each of the first m columns, sort that column
/// of c ascending (ties toward the lower row index) and emit the p_sc
/// entries at the indices of the m smallest c values, in that order.
/// Requires 1 <= m <= min(rows, cols).
RealMatrix shrink_psc(const RealMatrix& c, const RealMatrix& p_sc, std::uint32_t m);

/// Softmax weight of candidate j over exp(-d_c), scaled by exp(-c_min).
/// Computed with the max logit subtracted, so summing over j yields
/// exp(-c_min) exactly up to rounding. Requires j < d_c.size() and finite
/// inputs.
double candidate_softmax(const std::vector<double>& d_c, std::size_t j, double c_min);

/// Scales the shrunk matrix by the candidate softmax weight.
RealMatrix elevation_matrix(double p_sm, const RealMatrix& p_sc_small);

/// Euclidean distances from the query's whole-image descriptor to the
/// candidate's top-m region rows (rows 1..m of fc, already objectness
/// ordered). Requires 1 <= m <= fc.rows() - 1.
std::vector<double> region_query_distances(std::span<const float> query_global, const DescriptorMatrix& fc,
                                           std::uint32_t m);

/// Fixed feature layout: [d_c, r_prime, qd_cr (m entries), m-matrix
/// row-major (m*m entries)]; length 2 + m + m*m (112 when m = 10).
std::vector<double> assemble_features(double d_c_j, double r_prime_j, const std::vector<double>& qd_cr,
                                      const RealMatrix& m);

/// Distance update |d_c - alpha * ln(p_m)|. p_m must lie in [1, 2] and
/// alpha must be positive.
double update_distance(double d_c_j, double p_m, double alpha);

/// Builds the full pair context for candidate rank j of `list`.
PairContext build_pair_context(const ImageEntry& query, const ImageEntry& candidate, const CandidateList& list,
                               std::size_t j, const RerankParams& params);

/// Anything that maps a pair feature vector to a match probability in
/// [1, 2]; implemented by the decision-layer models.
class MatchScorer {
public:
    virtual ~MatchScorer() = default;
    virtual double score(std::span<const double> features) const = 0;
    /// Expected feature vector length, used to cross-check params.
    virtual std::size_t feature_count() const = 0;
};

struct RerankedCandidate {
    std::uint32_t db_index = 0;
    double d_c = 0.0;
    double p_m = 1.0;
    double d_new = 0.0;
};

/// Candidates of one query after the distance update, sorted by
/// non-decreasing d_new with ties keeping the original retrieval order.
struct RerankedList {
    std::string query_id;
    std::vector<RerankedCandidate> entries;

    CandidateList as_candidates() const;
};

/// Re-ranks the stored candidate list of `query_id`: scores every candidate
/// with the model, applies the distance update, and sorts. The candidate
/// id multiset is preserved. Throws ValidationError if the bundle has no
/// candidates for the query or the model's feature count does not match
/// params.top_regions.
RerankedList rerank_query(const RetrievalBundle& bundle, const std::string& query_id, const MatchScorer& model,
                          const RerankParams& params);

/// Re-ranks queries [begin, end) of bundle.queries concurrently (thread
/// count from the PLACERANK_THREADS environment variable, defaulting to the
/// hardware concurrency). Results are keyed by query id and independent of
/// the thread count.
std::map<std::string, RerankedList> rerank_queries(const RetrievalBundle& bundle, std::size_t begin, std::size_t end,
                                                   const MatchScorer& model, const RerankParams& params);

/// Rerank output document: per query the ordered (db_id, d_c, p_m, d_new)
/// rows plus a caller-supplied metadata block.
void save_rerank_doc(const std::filesystem::path& path, const RetrievalBundle& bundle,
                     const std::map<std::string, RerankedList>& results, const std::string& metadata_json);

} // namespace placerank::rerank
