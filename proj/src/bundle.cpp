#include "placerank/bundle.hpp"

#include "placerank/errors.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace placerank {

namespace detail2 = placerank::detail;
using detail2::ordered_json;

RegionBox clamp_box(const RegionBox& box, int image_w, int image_h) {
    if (image_w <= 0 || image_h <= 0) {
        throw ValidationError("clamp_box: image dimensions must be positive");
    }
    for (double v : {box.x, box.y, box.w, box.h, box.objectness}) {
        if (!std::isfinite(v)) {
            throw ValidationError("clamp_box: box has a non-finite field");
        }
    }
    RegionBox r = box;
    r.w = std::max(r.w, 0.0);
    r.h = std::max(r.h, 0.0);
    r.x = std::clamp(r.x, 0.0, static_cast<double>(image_w));
    r.y = std::clamp(r.y, 0.0, static_cast<double>(image_h));
    r.w = std::min(r.w, static_cast<double>(image_w) - r.x);
    r.h = std::min(r.h, static_cast<double>(image_h) - r.y);
    return r;
}

void normalize_region_set(RegionSet& regions) {
    for (auto& box : regions.boxes) {
        box = clamp_box(box, regions.image_w, regions.image_h);
    }
    std::stable_sort(regions.boxes.begin(), regions.boxes.end(),
                     [](const RegionBox& a, const RegionBox& b) { return a.objectness > b.objectness; });
}

CandidateList CandidateList::make(std::vector<std::uint32_t> db_indices, std::vector<double> distances) {
    if (db_indices.size() != distances.size()) {
        throw ValidationError("candidate list: index/distance length mismatch");
    }
    if (db_indices.empty()) {
        throw ValidationError("candidate list: must contain at least one candidate");
    }
    for (std::size_t i = 0; i < distances.size(); ++i) {
        if (!std::isfinite(distances[i])) {
            throw ValidationError("candidate list: non-finite distance at rank " + std::to_string(i));
        }
        if (i > 0 && distances[i] < distances[i - 1]) {
            throw ValidationError("candidate list: distances are not non-decreasing at rank " + std::to_string(i));
        }
    }
    CandidateList list;
    list.db_indices = std::move(db_indices);
    list.distances = std::move(distances);
    const std::size_t k = list.distances.size();
    list.r_prime.resize(k);
    if (k == 1) {
        list.r_prime[0] = 0.0;
    } else {
        for (std::size_t j = 0; j + 1 < k; ++j) {
            list.r_prime[j] = list.distances[j + 1] - list.distances[j];
        }
        list.r_prime[k - 1] = list.r_prime[k - 2];
    }
    return list;
}

const ImageEntry& RetrievalBundle::query(const std::string& id) const {
    return queries.at(query_index(id));
}

std::uint32_t RetrievalBundle::query_index(const std::string& id) const {
    build_lookup();
    auto it = query_lookup_.find(id);
    if (it == query_lookup_.end()) {
        throw ValidationError("unknown query id: " + id);
    }
    return it->second;
}

std::uint32_t RetrievalBundle::db_index(const std::string& id) const {
    build_lookup();
    auto it = db_lookup_.find(id);
    if (it == db_lookup_.end()) {
        throw ValidationError("unknown database id: " + id);
    }
    return it->second;
}

void RetrievalBundle::build_lookup() const {
    if (query_lookup_.size() == queries.size() && db_lookup_.size() == database.size()) {
        return;
    }
    query_lookup_.clear();
    db_lookup_.clear();
    for (std::uint32_t i = 0; i < queries.size(); ++i) {
        if (!query_lookup_.emplace(queries[i].id, i).second) {
            throw ValidationError("duplicate query id: " + queries[i].id);
        }
    }
    for (std::uint32_t i = 0; i < database.size(); ++i) {
        if (!db_lookup_.emplace(database[i].id, i).second) {
            throw ValidationError("duplicate database id: " + database[i].id);
        }
    }
}

DescriptorMatrix RetrievalBundle::stacked_db_globals() const {
    if (database.empty()) {
        throw ValidationError("bundle has no database entries");
    }
    DescriptorMatrix out(static_cast<std::uint32_t>(database.size()), descriptor_dim);
    for (std::uint32_t i = 0; i < database.size(); ++i) {
        auto src = database[i].global.row(0);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

namespace {

void validate_entry(const ImageEntry& e, std::uint32_t dim, const char* kind) {
    const std::string where = std::string(kind) + " entry '" + e.id + "'";
    if (e.id.empty()) {
        throw ValidationError(where + ": empty id");
    }
    if (e.regions.image_w <= 0 || e.regions.image_h <= 0) {
        throw ValidationError(where + ": image dimensions must be positive");
    }
    if (e.global.rows() != 1 || e.global.cols() != dim) {
        throw ValidationError(where + ": global descriptor must be 1x" + std::to_string(dim));
    }
    if (e.region_descriptors.cols() != dim) {
        throw ValidationError(where + ": region descriptor width " + std::to_string(e.region_descriptors.cols()) +
                              " does not match bundle dimension " + std::to_string(dim));
    }
    if (e.region_descriptors.rows() != e.regions.boxes.size() + 1) {
        throw ValidationError(where + ": region descriptor matrix must have " +
                              std::to_string(e.regions.boxes.size() + 1) + " rows (whole image + one per region), got " +
                              std::to_string(e.region_descriptors.rows()));
    }
    e.global.require_finite(where);
    e.region_descriptors.require_finite(where);
    for (std::size_t i = 0; i + 1 < e.regions.boxes.size(); ++i) {
        if (e.regions.boxes[i].objectness < e.regions.boxes[i + 1].objectness) {
            throw ValidationError(where + ": regions are not sorted by descending objectness");
        }
    }
}

} // namespace

void RetrievalBundle::validate() const {
    if (descriptor_dim == 0) {
        throw ValidationError("bundle: descriptor dimension must be positive");
    }
    build_lookup();
    for (const auto& e : queries) {
        validate_entry(e, descriptor_dim, "query");
    }
    for (const auto& e : database) {
        validate_entry(e, descriptor_dim, "database");
    }
    for (const auto& [qid, list] : candidates) {
        query_index(qid);
        for (std::uint32_t idx : list.db_indices) {
            if (idx >= database.size()) {
                throw ValidationError("candidates for '" + qid + "': database index " + std::to_string(idx) +
                                      " out of range");
            }
        }
    }
    for (const auto& [qid, positives] : ground_truth) {
        query_index(qid);
        for (std::uint32_t idx : positives) {
            if (idx >= database.size()) {
                throw ValidationError("ground truth for '" + qid + "': database index " + std::to_string(idx) +
                                      " out of range");
            }
        }
    }
}

namespace {

ordered_json box_to_json(const RegionBox& b) {
    return ordered_json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"objectness", b.objectness}};
}

RegionBox box_from_json(const ordered_json& j, const std::string& where) {
    try {
        RegionBox b;
        b.x = j.at("x").get<double>();
        b.y = j.at("y").get<double>();
        b.w = j.at("w").get<double>();
        b.h = j.at("h").get<double>();
        b.objectness = j.at("objectness").get<double>();
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": malformed region box: " + e.what());
    }
}

std::string entry_dir(const char* kind) {
    return std::string("descriptors/") + kind;
}

ordered_json entry_to_json(const ImageEntry& e, const char* kind) {
    ordered_json boxes = ordered_json::array();
    for (const auto& b : e.regions.boxes) {
        boxes.push_back(box_to_json(b));
    }
    return ordered_json{{"id", e.id},
                        {"image_w", e.regions.image_w},
                        {"image_h", e.regions.image_h},
                        {"global", entry_dir(kind) + "/" + e.id + ".g.mqb"},
                        {"region_descriptors", entry_dir(kind) + "/" + e.id + ".r.mqb"},
                        {"boxes", boxes}};
}

ImageEntry entry_from_json(const ordered_json& j, const std::filesystem::path& dir, const std::string& where) {
    ImageEntry e;
    try {
        e.id = j.at("id").get<std::string>();
        e.regions.image_w = j.at("image_w").get<int>();
        e.regions.image_h = j.at("image_h").get<int>();
        for (const auto& bj : j.at("boxes")) {
            e.regions.boxes.push_back(box_from_json(bj, where));
        }
        e.global = DescriptorMatrix::load(dir / j.at("global").get<std::string>());
        e.region_descriptors = DescriptorMatrix::load(dir / j.at("region_descriptors").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        throw IoError(where + ": malformed image entry: " + ex.what());
    }
    normalize_region_set(e.regions);
    return e;
}

} // namespace

RetrievalBundle load_bundle(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "bundle.json";
    ordered_json doc = detail2::read_json_file(manifest_path);
    const std::string where = manifest_path.string();

    RetrievalBundle bundle;
    try {
        if (doc.at("format").get<std::string>() != "placerank-bundle") {
            throw IoError(where + ": not a bundle manifest");
        }
        if (doc.at("version").get<int>() != 1) {
            throw IoError(where + ": unsupported manifest version");
        }
        bundle.descriptor_dim = doc.at("descriptor_dim").get<std::uint32_t>();
        for (const auto& ej : doc.at("queries")) {
            bundle.queries.push_back(entry_from_json(ej, dir, where));
        }
        for (const auto& ej : doc.at("database")) {
            bundle.database.push_back(entry_from_json(ej, dir, where));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": malformed manifest: " + e.what());
    }

    if (doc.contains("candidates")) {
        for (const auto& [qid, arr] : doc.at("candidates").items()) {
            std::vector<std::uint32_t> indices;
            std::vector<double> dists;
            for (const auto& pair : arr) {
                if (!pair.is_array() || pair.size() != 2) {
                    throw IoError(where + ": candidates for '" + qid + "' must be [db_id, distance] pairs");
                }
                indices.push_back(bundle.db_index(pair.at(0).get<std::string>()));
                dists.push_back(pair.at(1).get<double>());
            }
            bundle.candidates.emplace(qid, CandidateList::make(std::move(indices), std::move(dists)));
        }
    }
    if (doc.contains("ground_truth")) {
        for (const auto& [qid, arr] : doc.at("ground_truth").items()) {
            std::vector<std::uint32_t> positives;
            for (const auto& id : arr) {
                positives.push_back(bundle.db_index(id.get<std::string>()));
            }
            std::sort(positives.begin(), positives.end());
            bundle.ground_truth.emplace(qid, std::move(positives));
        }
    }

    bundle.validate();
    return bundle;
}

void save_bundle(const RetrievalBundle& bundle, const std::filesystem::path& dir) {
    bundle.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir / "descriptors" / "query", ec);
    std::filesystem::create_directories(dir / "descriptors" / "database", ec);

    ordered_json doc;
    doc["format"] = "placerank-bundle";
    doc["version"] = 1;
    doc["descriptor_dim"] = bundle.descriptor_dim;
    doc["queries"] = ordered_json::array();
    doc["database"] = ordered_json::array();
    for (const auto& e : bundle.queries) {
        doc["queries"].push_back(entry_to_json(e, "query"));
        e.global.save(dir / entry_dir("query") / (e.id + ".g.mqb"));
        e.region_descriptors.save(dir / entry_dir("query") / (e.id + ".r.mqb"));
    }
    for (const auto& e : bundle.database) {
        doc["database"].push_back(entry_to_json(e, "database"));
        e.global.save(dir / entry_dir("database") / (e.id + ".g.mqb"));
        e.region_descriptors.save(dir / entry_dir("database") / (e.id + ".r.mqb"));
    }
    if (!bundle.candidates.empty()) {
        ordered_json cands;
        for (const auto& [qid, list] : bundle.candidates) {
            ordered_json arr = ordered_json::array();
            for (std::size_t i = 0; i < list.size(); ++i) {
                arr.push_back(ordered_json::array({bundle.database[list.db_indices[i]].id, list.distances[i]}));
            }
            cands[qid] = std::move(arr);
        }
        doc["candidates"] = std::move(cands);
    }
    if (!bundle.ground_truth.empty()) {
        ordered_json gt;
        for (const auto& [qid, positives] : bundle.ground_truth) {
            ordered_json arr = ordered_json::array();
            for (std::uint32_t idx : positives) {
                arr.push_back(bundle.database[idx].id);
            }
            gt[qid] = std::move(arr);
        }
        doc["ground_truth"] = std::move(gt);
    }
    detail2::write_json_atomic(dir / "bundle.json", doc);
}

CandidateList retrieve_topk(std::span<const float> query_desc, const DescriptorMatrix& db_descs, std::uint32_t k) {
    if (db_descs.rows() == 0) {
        throw ValidationError("retrieve_topk: database is empty");
    }
    if (k == 0 || k > db_descs.rows()) {
        throw ValidationError("retrieve_topk: k must be in [1, " + std::to_string(db_descs.rows()) + "], got " +
                              std::to_string(k));
    }
    if (query_desc.size() != db_descs.cols()) {
        throw ValidationError("retrieve_topk: query dimension " + std::to_string(query_desc.size()) +
                              " does not match database dimension " + std::to_string(db_descs.cols()));
    }

    std::vector<std::pair<double, std::uint32_t>> scored(db_descs.rows());
    for (std::uint32_t i = 0; i < db_descs.rows(); ++i) {
        scored[i] = {euclidean_distance(query_desc, db_descs.row(i)), i};
    }
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end());

    std::vector<std::uint32_t> indices(k);
    std::vector<double> dists(k);
    for (std::uint32_t j = 0; j < k; ++j) {
        indices[j] = scored[j].second;
        dists[j] = scored[j].first;
    }
    return CandidateList::make(std::move(indices), std::move(dists));
}

void retrieve_all(RetrievalBundle& bundle, std::uint32_t k) {
    const DescriptorMatrix db = bundle.stacked_db_globals();
    bundle.candidates.clear();
    for (const auto& q : bundle.queries) {
        bundle.candidates.emplace(q.id, retrieve_topk(q.global.row(0), db, k));
    }
}

void save_candidates_doc(const std::filesystem::path& path, const RetrievalBundle& bundle,
                         const std::string& metadata_json) {
    ordered_json doc;
    doc["format"] = "placerank-candidates";
    doc["version"] = 1;
    if (!metadata_json.empty()) {
        doc["metadata"] = ordered_json::parse(metadata_json);
    }
    ordered_json cands;
    for (const auto& [qid, list] : bundle.candidates) {
        ordered_json arr = ordered_json::array();
        for (std::size_t i = 0; i < list.size(); ++i) {
            arr.push_back(ordered_json::array({bundle.database[list.db_indices[i]].id, list.distances[i]}));
        }
        cands[qid] = std::move(arr);
    }
    doc["candidates"] = std::move(cands);
    detail2::write_json_atomic(path, doc);
}

void load_candidates_doc(const std::filesystem::path& path, RetrievalBundle& bundle) {
    ordered_json doc = detail2::read_json_file(path);
    try {
        if (doc.at("format").get<std::string>() != "placerank-candidates") {
            throw IoError(path.string() + ": not a candidates document");
        }
        bundle.candidates.clear();
        for (const auto& [qid, arr] : doc.at("candidates").items()) {
            bundle.query_index(qid);
            std::vector<std::uint32_t> indices;
            std::vector<double> dists;
            for (const auto& pair : arr) {
                indices.push_back(bundle.db_index(pair.at(0).get<std::string>()));
                dists.push_back(pair.at(1).get<double>());
            }
            bundle.candidates.emplace(qid, CandidateList::make(std::move(indices), std::move(dists)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed candidates document: " + e.what());
    }
}

void load_ground_truth_doc(const std::filesystem::path& path, RetrievalBundle& bundle) {
    ordered_json doc = detail2::read_json_file(path);
    try {
        if (doc.at("format").get<std::string>() != "placerank-ground-truth") {
            throw IoError(path.string() + ": not a ground-truth document");
        }
        bundle.ground_truth.clear();
        for (const auto& [qid, arr] : doc.at("positives").items()) {
            bundle.query_index(qid);
            std::vector<std::uint32_t> positives;
            for (const auto& id : arr) {
                positives.push_back(bundle.db_index(id.get<std::string>()));
            }
            std::sort(positives.begin(), positives.end());
            bundle.ground_truth.emplace(qid, std::move(positives));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed ground-truth document: " + e.what());
    }
}

} // namespace placerank
