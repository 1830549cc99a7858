#include "placerank/rerank.hpp"

#include "placerank/errors.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numeric>
#include <thread>

namespace placerank::rerank {

using placerank::detail::ordered_json;
using placerank::detail::write_json_atomic;

namespace {

void require_finite(const RealMatrix& m, const char* what) {
    for (double x : m.v) {
        if (!std::isfinite(x)) {
            throw ValidationError(std::string(what) + ": non-finite entry");
        }
    }
}

} // namespace

RealMatrix correlation_matrix(const DescriptorMatrix& fq, const DescriptorMatrix& fc, CorrelationMode mode) {
    if (fq.rows() == 0 || fc.rows() == 0) {
        throw ValidationError("correlation_matrix: descriptor matrices must be non-empty");
    }
    if (fq.cols() != fc.cols()) {
        throw ValidationError("correlation_matrix: descriptor width mismatch (" + std::to_string(fq.cols()) +
                              " vs " + std::to_string(fc.cols()) + ")");
    }
    RealMatrix out(fq.rows(), fc.rows());
    for (std::uint32_t x = 0; x < fq.rows(); ++x) {
        auto qrow = fq.row(x);
        for (std::uint32_t y = 0; y < fc.rows(); ++y) {
            auto crow = fc.row(y);
            if (mode == CorrelationMode::product) {
                double acc = 0.0;
                for (std::uint32_t k = 0; k < fq.cols(); ++k) {
                    acc += static_cast<double>(qrow[k]) * static_cast<double>(crow[k]);
                }
                out.at(x, y) = acc;
            } else {
                out.at(x, y) = euclidean_distance(qrow, crow);
            }
        }
    }
    return out;
}

FilterResult filter_correlation(const RealMatrix& c, double d_c_max) {
    if (!std::isfinite(d_c_max)) {
        throw ValidationError("filter_correlation: d_c_max must be finite");
    }
    require_finite(c, "filter_correlation");
    FilterResult r;
    r.c_f = RealMatrix(c.rows, c.cols);
    r.mask = RealMatrix(c.rows, c.cols);
    r.filtered = RealMatrix(c.rows, c.cols);
    for (std::size_t i = 0; i < c.v.size(); ++i) {
        const double cf = c.v[i] - d_c_max;
        r.c_f.v[i] = cf;
        r.mask.v[i] = cf < 0.0 ? -1.0 : 0.0;
        r.filtered.v[i] = cf < 0.0 ? c.v[i] : 0.0;
    }
    return r;
}

double box_prior(const RegionBox& box, int image_w, int image_h) {
    if (image_w <= 0 || image_h <= 0) {
        throw ValidationError("box_prior: image area must be positive");
    }
    const double area = box.w * box.h;
    if (!std::isfinite(area) || area < 0.0) {
        throw ValidationError("box_prior: box area must be finite and non-negative");
    }
    return std::exp(-area / (static_cast<double>(image_w) * static_cast<double>(image_h)));
}

std::vector<double> image_box_priors(const RegionSet& regions) {
    std::vector<double> priors;
    priors.reserve(regions.boxes.size() + 1);
    RegionBox whole{0.0, 0.0, static_cast<double>(regions.image_w), static_cast<double>(regions.image_h), 0.0};
    priors.push_back(box_prior(whole, regions.image_w, regions.image_h));
    for (const auto& box : regions.boxes) {
        priors.push_back(box_prior(box, regions.image_w, regions.image_h));
    }
    return priors;
}

RealMatrix information_matrix(const RealMatrix& c, double d_c_min, double r_prime_j,
                              const std::vector<double>& priors_q, const std::vector<double>& priors_c, double beta) {
    if (priors_q.size() != c.rows || priors_c.size() != c.cols) {
        throw ValidationError("information_matrix: prior lengths do not match the correlation shape");
    }
    if (!std::isfinite(d_c_min) || !std::isfinite(r_prime_j) || !std::isfinite(beta) || beta <= 0.0) {
        throw ValidationError("information_matrix: scalar inputs must be finite and beta positive");
    }
    require_finite(c, "information_matrix");
    const double rank_term = std::exp(-r_prime_j);
    RealMatrix s(c.rows, c.cols);
    for (std::size_t x = 0; x < c.rows; ++x) {
        for (std::size_t y = 0; y < c.cols; ++y) {
            s.at(x, y) = beta * priors_q[x] * priors_c[y] * std::exp(-(d_c_min + c.at(x, y))) * rank_term;
        }
    }
    require_finite(s, "information_matrix output");
    return s;
}

RealMatrix probabilistic_correlation(const RealMatrix& s, const RealMatrix& c_f) {
    if (s.rows != c_f.rows || s.cols != c_f.cols) {
        throw ValidationError("probabilistic_correlation: shape mismatch");
    }
    RealMatrix out(s.rows, s.cols);
    for (std::size_t i = 0; i < s.v.size(); ++i) {
        out.v[i] = s.v[i] * c_f.v[i];
    }
    return out;
}

RealMatrix shrink_psc(const RealMatrix& c, const RealMatrix& p_sc, std::uint32_t m) {
    if (c.rows != p_sc.rows || c.cols != p_sc.cols) {
        throw ValidationError("shrink_psc: shape mismatch");
    }
    if (m == 0 || m > c.rows || m > c.cols) {
        throw ValidationError("shrink_psc: m must lie in [1, min(rows, cols)], got " + std::to_string(m));
    }
    RealMatrix out(m, m);
    std::vector<std::size_t> order(c.rows);
    for (std::size_t y = 0; y < m; ++y) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return c.at(a, y) < c.at(b, y); });
        for (std::size_t r = 0; r < m; ++r) {
            out.at(r, y) = p_sc.at(order[r], y);
        }
    }
    return out;
}

double candidate_softmax(const std::vector<double>& d_c, std::size_t j, double c_min) {
    if (d_c.empty() || j >= d_c.size()) {
        throw ValidationError("candidate_softmax: rank out of range");
    }
    if (!std::isfinite(c_min)) {
        throw ValidationError("candidate_softmax: c_min must be finite");
    }
    double min_d = d_c[0];
    for (double v : d_c) {
        if (!std::isfinite(v)) {
            throw ValidationError("candidate_softmax: non-finite distance");
        }
        min_d = std::min(min_d, v);
    }
    // Logits are -d_c; subtracting the max logit (-min_d) keeps every
    // exponent non-positive.
    double total = 0.0;
    for (double v : d_c) {
        total += std::exp(min_d - v);
    }
    return std::exp(-c_min) * std::exp(min_d - d_c[j]) / total;
}

RealMatrix elevation_matrix(double p_sm, const RealMatrix& p_sc_small) {
    if (!std::isfinite(p_sm)) {
        throw ValidationError("elevation_matrix: p_sm must be finite");
    }
    RealMatrix out(p_sc_small.rows, p_sc_small.cols);
    for (std::size_t i = 0; i < p_sc_small.v.size(); ++i) {
        out.v[i] = p_sm * p_sc_small.v[i];
    }
    return out;
}

std::vector<double> region_query_distances(std::span<const float> query_global, const DescriptorMatrix& fc,
                                           std::uint32_t m) {
    if (m == 0 || fc.rows() < static_cast<std::uint32_t>(m) + 1) {
        throw ValidationError("region_query_distances: need m in [1, " + std::to_string(fc.rows() - 1) +
                              "], got " + std::to_string(m));
    }
    std::vector<double> out(m);
    for (std::uint32_t r = 0; r < m; ++r) {
        out[r] = euclidean_distance(query_global, fc.row(r + 1));
    }
    return out;
}

std::vector<double> assemble_features(double d_c_j, double r_prime_j, const std::vector<double>& qd_cr,
                                      const RealMatrix& m) {
    if (m.rows != m.cols || qd_cr.size() != m.rows) {
        throw ValidationError("assemble_features: expected a square matrix with one region distance per row, got " +
                              std::to_string(qd_cr.size()) + " distances for a " + std::to_string(m.rows) + "x" +
                              std::to_string(m.cols) + " matrix");
    }
    std::vector<double> f;
    f.reserve(2 + qd_cr.size() + m.v.size());
    f.push_back(d_c_j);
    f.push_back(r_prime_j);
    f.insert(f.end(), qd_cr.begin(), qd_cr.end());
    f.insert(f.end(), m.v.begin(), m.v.end());
    return f;
}

double update_distance(double d_c_j, double p_m, double alpha) {
    if (!std::isfinite(d_c_j)) {
        throw ValidationError("update_distance: d_c must be finite");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ValidationError("update_distance: alpha must be positive and finite");
    }
    if (!(p_m >= 1.0) || !(p_m <= 2.0)) {
        throw ValidationError("update_distance: p_m must lie in [1, 2], got " + std::to_string(p_m));
    }
    return std::abs(d_c_j - alpha * std::log(p_m));
}

PairContext build_pair_context(const ImageEntry& query, const ImageEntry& candidate, const CandidateList& list,
                               std::size_t j, const RerankParams& params) {
    if (j >= list.size()) {
        throw ValidationError("build_pair_context: rank " + std::to_string(j) + " out of range");
    }
    PairContext ctx;
    ctx.d_c = list.distances[j];
    ctx.r_prime = list.r_prime[j];

    const RealMatrix raw = correlation_matrix(query.region_descriptors, candidate.region_descriptors, params.mode);
    FilterResult filt = filter_correlation(raw, list.d_max());
    ctx.c_f = std::move(filt.c_f);
    ctx.d = std::move(filt.mask);
    ctx.c = std::move(filt.filtered);

    ctx.c_min = *std::min_element(ctx.c.v.begin(), ctx.c.v.end());

    const std::vector<double> priors_q = image_box_priors(query.regions);
    const std::vector<double> priors_c = image_box_priors(candidate.regions);
    ctx.s = information_matrix(ctx.c, list.d_min(), ctx.r_prime, priors_q, priors_c, params.beta);
    ctx.p_sc = probabilistic_correlation(ctx.s, ctx.c_f);
    ctx.p_sc_small = shrink_psc(ctx.c, ctx.p_sc, params.top_regions);
    ctx.p_sm = candidate_softmax(list.distances, j, ctx.c_min);
    ctx.m = elevation_matrix(ctx.p_sm, ctx.p_sc_small);
    ctx.query_region_distances = region_query_distances(query.global.row(0), candidate.region_descriptors,
                                                        params.top_regions);
    ctx.features = assemble_features(ctx.d_c, ctx.r_prime, ctx.query_region_distances, ctx.m);
    return ctx;
}

CandidateList RerankedList::as_candidates() const {
    std::vector<std::uint32_t> indices;
    std::vector<double> dists;
    indices.reserve(entries.size());
    dists.reserve(entries.size());
    for (const auto& e : entries) {
        indices.push_back(e.db_index);
        dists.push_back(e.d_new);
    }
    return CandidateList::make(std::move(indices), std::move(dists));
}

RerankedList rerank_query(const RetrievalBundle& bundle, const std::string& query_id, const MatchScorer& model,
                          const RerankParams& params) {
    auto it = bundle.candidates.find(query_id);
    if (it == bundle.candidates.end()) {
        throw ValidationError("rerank_query: no candidates for query '" + query_id + "'; run retrieval first");
    }
    const CandidateList& list = it->second;
    const ImageEntry& query = bundle.query(query_id);

    const std::size_t expected_features =
        2 + params.top_regions + static_cast<std::size_t>(params.top_regions) * params.top_regions;
    if (model.feature_count() != expected_features) {
        throw ValidationError("rerank_query: model expects " + std::to_string(model.feature_count()) +
                              " features but top_regions=" + std::to_string(params.top_regions) + " produces " +
                              std::to_string(expected_features));
    }

    RerankedList out;
    out.query_id = query_id;
    out.entries.resize(list.size());
    for (std::size_t j = 0; j < list.size(); ++j) {
        const ImageEntry& cand = bundle.db_entry(list.db_indices[j]);
        PairContext ctx = build_pair_context(query, cand, list, j, params);
        double p_m = model.score(ctx.features);
        out.entries[j] = RerankedCandidate{list.db_indices[j], list.distances[j], p_m,
                                           update_distance(list.distances[j], p_m, params.alpha)};
    }

    std::vector<std::size_t> order(out.entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.entries[a].d_new < out.entries[b].d_new;
    });
    std::vector<RerankedCandidate> sorted(out.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        sorted[i] = out.entries[order[i]];
    }
    out.entries = std::move(sorted);
    return out;
}

std::map<std::string, RerankedList> rerank_queries(const RetrievalBundle& bundle, std::size_t begin, std::size_t end,
                                                   const MatchScorer& model, const RerankParams& params) {
    if (begin > end || end > bundle.queries.size()) {
        throw ValidationError("rerank_queries: query range [" + std::to_string(begin) + ", " + std::to_string(end) +
                              ") out of bounds");
    }
    const std::size_t count = end - begin;
    std::vector<RerankedList> results(count);

    unsigned threads = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("PLACERANK_THREADS")) {
        threads = static_cast<unsigned>(std::max(1, std::atoi(env)));
    }
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));

    std::atomic<std::size_t> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (std::size_t i = cursor.fetch_add(1); i < count; i = cursor.fetch_add(1)) {
            try {
                results[i] = rerank_query(bundle, bundle.queries[begin + i].id, model, params);
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

    std::map<std::string, RerankedList> keyed;
    for (auto& r : results) {
        keyed.emplace(r.query_id, std::move(r));
    }
    return keyed;
}

void save_rerank_doc(const std::filesystem::path& path, const RetrievalBundle& bundle,
                     const std::map<std::string, RerankedList>& results, const std::string& metadata_json) {
    ordered_json doc;
    doc["format"] = "placerank-rerank";
    doc["version"] = 1;
    if (!metadata_json.empty()) {
        doc["metadata"] = ordered_json::parse(metadata_json);
    }
    ordered_json out;
    for (const auto& [qid, list] : results) {
        ordered_json arr = ordered_json::array();
        for (const auto& e : list.entries) {
            arr.push_back(ordered_json{{"db_id", bundle.database[e.db_index].id},
                                       {"d_c", e.d_c},
                                       {"p_m", e.p_m},
                                       {"d_new", e.d_new}});
        }
        out[qid] = std::move(arr);
    }
    doc["results"] = std::move(out);
    write_json_atomic(path, doc);
}

} // namespace placerank::rerank
