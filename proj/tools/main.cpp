#include "placerank/bundle.hpp"
#include "placerank/edgebox.hpp"
#include "placerank/errors.hpp"
#include "placerank/eval.hpp"
#include "placerank/matrix.hpp"
#include "placerank/pdl.hpp"
#include "placerank/rerank.hpp"
#include "placerank/vlad.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using ordered_json = nlohmann::ordered_json;

/// Proposal interchange document: the manifest box schema plus image
/// dimensions, written by score-boxes and consumed by encode.
constexpr const char* kRegionsFormat = "placerank-regions";

void write_text_atomic_cli(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw placerank::IoError(tmp.string() + ": cannot open for writing");
        }
        out << text;
        if (!out) {
            throw placerank::IoError(tmp.string() + ": write failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

void save_regions_doc(const std::filesystem::path& path, const placerank::RegionSet& regions,
                      const ordered_json& metadata) {
    ordered_json doc;
    doc["format"] = kRegionsFormat;
    doc["version"] = 1;
    doc["metadata"] = metadata;
    doc["image_w"] = regions.image_w;
    doc["image_h"] = regions.image_h;
    ordered_json boxes = ordered_json::array();
    for (const auto& b : regions.boxes) {
        boxes.push_back(ordered_json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"objectness", b.objectness}});
    }
    doc["boxes"] = std::move(boxes);
    write_text_atomic_cli(path, doc.dump(2) + "\n");
}

placerank::RegionSet load_regions_doc(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw placerank::IoError(path.string() + ": cannot open region document");
    }
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw placerank::IoError(path.string() + ": malformed region document: " + e.what());
    }
    placerank::RegionSet regions;
    try {
        if (doc.at("format").get<std::string>() != kRegionsFormat) {
            throw placerank::IoError(path.string() + ": not a region document");
        }
        regions.image_w = doc.at("image_w").get<int>();
        regions.image_h = doc.at("image_h").get<int>();
        for (const auto& bj : doc.at("boxes")) {
            placerank::RegionBox b;
            b.x = bj.at("x").get<double>();
            b.y = bj.at("y").get<double>();
            b.w = bj.at("w").get<double>();
            b.h = bj.at("h").get<double>();
            b.objectness = bj.at("objectness").get<double>();
            regions.boxes.push_back(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw placerank::IoError(path.string() + ": malformed region document: " + e.what());
    }
    placerank::normalize_region_set(regions);
    return regions;
}

placerank::rerank::CorrelationMode parse_mode(const std::string& mode) {
    if (mode == "literal") {
        return placerank::rerank::CorrelationMode::product;
    }
    if (mode == "distance") {
        return placerank::rerank::CorrelationMode::distance;
    }
    throw placerank::ValidationError("unknown correlation mode '" + mode + "' (expected literal or distance)");
}

/// Largest feature block width the bundle can support: every image needs at
/// least m region rows.
std::uint32_t max_supported_regions(const placerank::RetrievalBundle& bundle) {
    std::size_t smallest = SIZE_MAX;
    for (const auto* side : {&bundle.queries, &bundle.database}) {
        for (const auto& e : *side) {
            smallest = std::min(smallest, e.regions.boxes.size());
        }
    }
    return smallest == SIZE_MAX ? 0 : static_cast<std::uint32_t>(smallest);
}

std::uint32_t resolve_top_regions(const placerank::RetrievalBundle& bundle, std::uint32_t requested) {
    const std::uint32_t available = max_supported_regions(bundle);
    if (available == 0) {
        throw placerank::ValidationError("bundle images carry no regions; cannot build pair features");
    }
    const std::uint32_t resolved = std::min(requested, available);
    if (resolved != requested) {
        std::cout << "top-regions " << requested << " exceeds the bundle's region count; using " << resolved << "\n";
    }
    return resolved;
}

std::vector<int> parse_ns(const std::vector<int>& ns) {
    if (ns.empty()) {
        return {1, 5, 10, 20};
    }
    return ns;
}

// --- subcommand configurations -------------------------------------------

struct GenSyntheticConfig {
    std::string out;
    placerank::eval::SynthesisParams params;
};

struct EncodeConfig {
    std::string map_path;
    std::string centers_path;
    std::string boxes_path;
    std::string whitening_path;
    std::string out;
    bool renormalize = true;
};

struct ScoreBoxesConfig {
    std::string groups_path;
    std::string out;
    double gamma = 2.0;
    double affinity_threshold = 0.05;
    placerank::edgebox::ProposalParams params;
};

struct RetrieveConfig {
    std::string bundle_dir;
    std::string out;
    std::uint32_t k = 100;
};

struct TrainPdlConfig {
    std::string bundle_dir;
    std::string candidates_path;
    std::string out;
    std::string kind = "bagged-trees";
    std::uint32_t trees = 50;
    std::uint64_t seed = 0;
    std::uint32_t min_leaf = 1;
    std::uint64_t query_begin = 0;
    std::int64_t query_end = -1;
    double beta = 10.0;
    std::uint32_t top_regions = 10;
    std::string mode = "literal";
};

struct RerankConfig {
    std::string bundle_dir;
    std::string candidates_path;
    std::string model_path;
    std::string out;
    double alpha = 1.15;
    double beta = 10.0;
    std::string mode = "literal";
    std::uint64_t query_begin = 0;
    std::int64_t query_end = -1;
};

struct EvaluateConfig {
    std::string baseline_path;
    std::string reranked_path;
    std::string positives_path;
    std::string bundle_dir;
    std::string out;
    std::string plot_path;
    std::vector<int> ns;
};

// --- subcommand implementations -------------------------------------------

int run_gen_synthetic(const GenSyntheticConfig& cfg) {
    placerank::RetrievalBundle bundle = placerank::eval::synth_generate(cfg.params);
    placerank::save_bundle(bundle, cfg.out);

    ordered_json meta{{"command", "gen-synthetic"},
                      {"seed", cfg.params.seed},
                      {"queries", cfg.params.query_count},
                      {"db", cfg.params.db_count},
                      {"dim", cfg.params.dim},
                      {"regions", cfg.params.regions},
                      {"distractors", cfg.params.distractors},
                      {"noise", cfg.params.noise},
                      {"image_w", cfg.params.image_w},
                      {"image_h", cfg.params.image_h}};
    write_text_atomic_cli(std::filesystem::path(cfg.out) / "generation.json", meta.dump(2) + "\n");
    placerank::eval::save_positives_doc(std::filesystem::path(cfg.out) / "ground-truth.json", bundle);

    std::cout << "gen-synthetic: seed=" << cfg.params.seed << " queries=" << cfg.params.query_count
              << " db=" << cfg.params.db_count << " dim=" << cfg.params.dim << " regions=" << cfg.params.regions
              << " distractors=" << cfg.params.distractors << " noise=" << cfg.params.noise << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_encode(const EncodeConfig& cfg) {
    const auto map = placerank::vlad::SpatialDescriptorMap::load(cfg.map_path);
    const auto centers = placerank::vlad::ClusterCenters::load(cfg.centers_path);

    placerank::RegionSet regions;
    regions.image_w = map.image_w;
    regions.image_h = map.image_h;
    if (!cfg.boxes_path.empty()) {
        regions = load_regions_doc(cfg.boxes_path);
        if (regions.image_w != map.image_w || regions.image_h != map.image_h) {
            throw placerank::ValidationError(
                cfg.boxes_path + ": region document is for a " + std::to_string(regions.image_w) + "x" +
                std::to_string(regions.image_h) + " image but the descriptor map covers " +
                std::to_string(map.image_w) + "x" + std::to_string(map.image_h));
        }
    }

    placerank::vlad::WhiteningTransform whitening;
    const bool whiten = !cfg.whitening_path.empty();
    if (whiten) {
        whitening = placerank::vlad::WhiteningTransform::load(cfg.whitening_path);
    }

    const placerank::RegionBox full{0.0, 0.0, static_cast<double>(map.image_w), static_cast<double>(map.image_h),
                                    1.0};
    std::vector<std::vector<float>> rows;
    rows.push_back(placerank::vlad::region_encode(map, full, centers));
    for (const auto& box : regions.boxes) {
        rows.push_back(placerank::vlad::region_encode(map, box, centers));
    }
    if (whiten) {
        for (auto& row : rows) {
            row = placerank::vlad::pca_apply(whitening, row, cfg.renormalize);
        }
    }

    placerank::DescriptorMatrix out(static_cast<std::uint32_t>(rows.size()),
                                    static_cast<std::uint32_t>(rows.front().size()));
    for (std::uint32_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
    }
    out.save(cfg.out);

    ordered_json meta{{"command", "encode"},
                      {"map", cfg.map_path},
                      {"centers", cfg.centers_path},
                      {"boxes", cfg.boxes_path.empty() ? ordered_json(nullptr) : ordered_json(cfg.boxes_path)},
                      {"whitening",
                       cfg.whitening_path.empty() ? ordered_json(nullptr) : ordered_json(cfg.whitening_path)},
                      {"row_renormalization", whiten ? ordered_json(cfg.renormalize) : ordered_json(nullptr)},
                      {"rows", out.rows()},
                      {"dim", out.cols()}};
    write_text_atomic_cli(cfg.out + ".json", meta.dump(2) + "\n");

    std::cout << "encode: rows=" << out.rows() << " dim=" << out.cols() << (whiten ? " whitened" : "") << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_score_boxes(const ScoreBoxesConfig& cfg) {
    const placerank::edgebox::EdgeGroupDocument doc = placerank::edgebox::load_edge_groups(cfg.groups_path);
    placerank::edgebox::EdgeGroupGraph graph(doc.groups, cfg.gamma, cfg.affinity_threshold);

    placerank::edgebox::ProposalParams params = cfg.params;
    params.image_w = doc.image_w;
    params.image_h = doc.image_h;
    placerank::RegionSet proposals = placerank::edgebox::propose(graph, params);

    ordered_json meta{{"command", "score-boxes"},
                      {"groups", cfg.groups_path},
                      {"gamma", cfg.gamma},
                      {"affinity_threshold", cfg.affinity_threshold},
                      {"kappa", params.kappa},
                      {"inner_fraction", params.inner_fraction},
                      {"step_fraction", params.step_fraction},
                      {"iou_threshold", params.iou_threshold},
                      {"max_proposals", params.max_proposals},
                      {"scales", params.scales},
                      {"aspects", params.aspects}};
    save_regions_doc(cfg.out, proposals, meta);

    std::cout << "score-boxes: groups=" << doc.groups.size() << " proposals=" << proposals.boxes.size() << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_retrieve(const RetrieveConfig& cfg) {
    placerank::RetrievalBundle bundle = placerank::load_bundle(cfg.bundle_dir);
    placerank::retrieve_all(bundle, cfg.k);

    ordered_json meta{{"command", "retrieve"}, {"bundle", cfg.bundle_dir}, {"k", cfg.k}};
    placerank::save_candidates_doc(cfg.out, bundle, meta.dump());

    std::cout << "retrieve: queries=" << bundle.queries.size() << " k=" << cfg.k << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_train_pdl(const TrainPdlConfig& cfg) {
    placerank::RetrievalBundle bundle = placerank::load_bundle(cfg.bundle_dir);
    if (!cfg.candidates_path.empty()) {
        placerank::load_candidates_doc(cfg.candidates_path, bundle);
    }

    placerank::rerank::RerankParams params;
    params.beta = cfg.beta;
    params.mode = parse_mode(cfg.mode);
    params.top_regions = resolve_top_regions(bundle, cfg.top_regions);

    const std::size_t end =
        cfg.query_end < 0 ? bundle.queries.size() : static_cast<std::size_t>(cfg.query_end);
    placerank::pdl::TrainingSet data =
        placerank::pdl::build_training_set(bundle, static_cast<std::size_t>(cfg.query_begin), end, params);

    placerank::pdl::Model model = [&] {
        if (cfg.kind == "bagged-trees") {
            return placerank::pdl::Model(placerank::pdl::train_bagged(data, cfg.trees, cfg.seed, cfg.min_leaf),
                                         params.top_regions);
        }
        if (cfg.kind == "gaussian") {
            return placerank::pdl::Model(placerank::pdl::train_gaussian(data), params.top_regions);
        }
        throw placerank::ValidationError("unknown model kind '" + cfg.kind + "' (expected bagged-trees or gaussian)");
    }();
    ordered_json meta{{"command", "train-pdl"},
                      {"bundle", cfg.bundle_dir},
                      {"candidates",
                       cfg.candidates_path.empty() ? ordered_json(nullptr) : ordered_json(cfg.candidates_path)},
                      {"kind", cfg.kind},
                      {"trees", cfg.trees},
                      {"seed", cfg.seed},
                      {"min_leaf", cfg.min_leaf},
                      {"query_begin", cfg.query_begin},
                      {"query_end", end},
                      {"beta", cfg.beta},
                      {"mode", cfg.mode},
                      {"top_regions", params.top_regions}};
    model.save(cfg.out, meta.dump());

    std::size_t positives = 0;
    for (int label : data.labels) {
        positives += label == 2 ? 1 : 0;
    }
    std::cout << "train-pdl: kind=" << cfg.kind << " trees=" << cfg.trees << " seed=" << cfg.seed
              << " queries=[" << cfg.query_begin << "," << end << ") rows=" << data.rows()
              << " positives=" << positives << " m=" << params.top_regions << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_rerank(const RerankConfig& cfg) {
    placerank::RetrievalBundle bundle = placerank::load_bundle(cfg.bundle_dir);
    if (!cfg.candidates_path.empty()) {
        placerank::load_candidates_doc(cfg.candidates_path, bundle);
    }
    placerank::pdl::Model model = placerank::pdl::Model::load(cfg.model_path);

    placerank::rerank::RerankParams params;
    params.alpha = cfg.alpha;
    params.beta = cfg.beta;
    params.mode = parse_mode(cfg.mode);
    params.top_regions = model.top_regions();

    const std::size_t end =
        cfg.query_end < 0 ? bundle.queries.size() : static_cast<std::size_t>(cfg.query_end);
    auto results =
        placerank::rerank::rerank_queries(bundle, static_cast<std::size_t>(cfg.query_begin), end, model, params);

    ordered_json meta{{"command", "rerank"},
                      {"bundle", cfg.bundle_dir},
                      {"model", cfg.model_path},
                      {"model_kind", model.kind()},
                      {"alpha", cfg.alpha},
                      {"beta", cfg.beta},
                      {"mode", cfg.mode},
                      {"top_regions", params.top_regions},
                      {"query_begin", cfg.query_begin},
                      {"query_end", end}};
    placerank::rerank::save_rerank_doc(cfg.out, bundle, results, meta.dump());

    std::cout << "rerank: queries=[" << cfg.query_begin << "," << end << ") alpha=" << cfg.alpha
              << " beta=" << cfg.beta << " mode=" << cfg.mode << " m=" << params.top_regions << "\n";
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

int run_evaluate(const EvaluateConfig& cfg) {
    if (cfg.positives_path.empty() == cfg.bundle_dir.empty()) {
        throw placerank::ValidationError("evaluate needs exactly one positives source: --positives or --bundle");
    }
    placerank::eval::Rankings baseline = placerank::eval::load_rankings(cfg.baseline_path);
    placerank::eval::Rankings reranked = placerank::eval::load_rankings(cfg.reranked_path);
    placerank::eval::Positives positives;
    if (!cfg.positives_path.empty()) {
        positives = placerank::eval::load_positives_doc(cfg.positives_path);
    } else {
        positives = placerank::eval::positives_from_bundle(placerank::load_bundle(cfg.bundle_dir));
    }

    const std::vector<int> ns = parse_ns(cfg.ns);
    placerank::eval::Comparison cmp = placerank::eval::compare(baseline, reranked, positives, ns);

    std::vector<std::pair<std::string, std::string>> meta;
    meta.emplace_back("command", "evaluate");
    meta.emplace_back("baseline", cfg.baseline_path);
    meta.emplace_back("reranked", cfg.reranked_path);
    meta.emplace_back("positives", cfg.positives_path.empty() ? cfg.bundle_dir : cfg.positives_path);
    {
        std::string joined;
        for (int n : ns) {
            joined += (joined.empty() ? "" : " ") + std::to_string(n);
        }
        meta.emplace_back("ns", joined);
    }
    placerank::eval::write_comparison_csv(cfg.out, cmp, meta);
    if (!cfg.plot_path.empty()) {
        placerank::eval::write_plot_csv(cfg.plot_path, cmp, meta);
    }

    for (std::size_t i = 0; i < cmp.baseline.points.size(); ++i) {
        std::cout << "recall@" << cmp.baseline.points[i].first << ": baseline=" << cmp.baseline.points[i].second
                  << " reranked=" << cmp.reranked.points[i].second << " delta=" << cmp.deltas[i].second << "\n";
    }
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"placerank: spatial re-ranking toolkit for visual place recognition"};
    app.require_subcommand(1);

    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output (errors still go to stderr)");

    GenSyntheticConfig gen;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a deterministic synthetic retrieval bundle");
    gen_cmd->add_option("--out", gen.out, "Output bundle directory")->required();
    gen_cmd->add_option("--seed", gen.params.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--queries", gen.params.query_count, "Number of query images")->capture_default_str();
    gen_cmd->add_option("--db", gen.params.db_count, "Number of database images")->capture_default_str();
    gen_cmd->add_option("--dim", gen.params.dim, "Descriptor dimensionality")->capture_default_str();
    gen_cmd->add_option("--regions", gen.params.regions, "Regions per image")->capture_default_str();
    gen_cmd->add_option("--distractors", gen.params.distractors, "Hard distractors per query")
        ->capture_default_str();
    gen_cmd->add_option("--noise", gen.params.noise, "Positive-pair distance scale")->capture_default_str();
    gen_cmd->add_option("--image-w", gen.params.image_w, "Image width in pixels")->capture_default_str();
    gen_cmd->add_option("--image-h", gen.params.image_h, "Image height in pixels")->capture_default_str();

    EncodeConfig enc;
    auto* enc_cmd = app.add_subcommand("encode", "Aggregate a spatial descriptor map into region descriptors");
    enc_cmd->add_option("--map", enc.map_path, "Spatial descriptor map file")->required();
    enc_cmd->add_option("--centers", enc.centers_path, "Cluster centers file")->required();
    enc_cmd->add_option("--boxes", enc.boxes_path, "Region document; omit to encode the whole image only");
    enc_cmd->add_option("--whitening", enc.whitening_path, "Whitening transform to apply to every row");
    enc_cmd->add_flag("!--no-renormalize", enc.renormalize, "Skip L2 renormalization after whitening");
    enc_cmd->add_option("--out", enc.out, "Output descriptor matrix file")->required();

    ScoreBoxesConfig sb;
    auto* sb_cmd = app.add_subcommand("score-boxes", "Propose and score candidate boxes from edge groups");
    sb_cmd->add_option("--groups", sb.groups_path, "Edge-group document")->required();
    sb_cmd->add_option("--out", sb.out, "Output region document")->required();
    sb_cmd->add_option("--gamma", sb.gamma, "Affinity exponent")->capture_default_str();
    sb_cmd->add_option("--affinity-threshold", sb.affinity_threshold, "Minimum affinity kept in the graph")
        ->capture_default_str();
    sb_cmd->add_option("--kappa", sb.params.kappa, "Perimeter penalty exponent")->capture_default_str();
    sb_cmd->add_option("--inner-fraction", sb.params.inner_fraction, "Centered inner-box scale")
        ->capture_default_str();
    sb_cmd->add_option("--step-fraction", sb.params.step_fraction, "Window step as a fraction of its side")
        ->capture_default_str();
    sb_cmd->add_option("--iou-threshold", sb.params.iou_threshold, "Suppression overlap threshold")
        ->capture_default_str();
    sb_cmd->add_option("--max-proposals", sb.params.max_proposals, "Proposal count cap")->capture_default_str();
    sb_cmd->add_option("--scales", sb.params.scales, "Window scales relative to the short image side");
    sb_cmd->add_option("--aspects", sb.params.aspects, "Window aspect ratios");

    RetrieveConfig ret;
    auto* ret_cmd = app.add_subcommand("retrieve", "Top-K nearest-neighbor search over global descriptors");
    ret_cmd->add_option("--bundle", ret.bundle_dir, "Bundle directory")->required();
    ret_cmd->add_option("--k", ret.k, "Candidates per query")->capture_default_str();
    ret_cmd->add_option("--out", ret.out, "Output candidates document")->required();

    TrainPdlConfig tp;
    auto* tp_cmd = app.add_subcommand("train-pdl", "Train the probabilistic decision layer");
    tp_cmd->add_option("--bundle", tp.bundle_dir, "Bundle directory")->required();
    tp_cmd->add_option("--candidates", tp.candidates_path, "Candidates document (omit to use the bundle's)");
    tp_cmd->add_option("--out", tp.out, "Output model file")->required();
    tp_cmd->add_option("--kind", tp.kind, "Model kind: bagged-trees or gaussian")->capture_default_str();
    tp_cmd->add_option("--trees", tp.trees, "Number of bagged trees")->capture_default_str();
    tp_cmd->add_option("--seed", tp.seed, "Bootstrap seed")->capture_default_str();
    tp_cmd->add_option("--min-leaf", tp.min_leaf, "Minimum rows per leaf")->capture_default_str();
    tp_cmd->add_option("--query-begin", tp.query_begin, "First training query index")->capture_default_str();
    tp_cmd->add_option("--query-end", tp.query_end, "One past the last training query index (-1 = all)")
        ->capture_default_str();
    tp_cmd->add_option("--beta", tp.beta, "Information-matrix scale")->capture_default_str();
    tp_cmd->add_option("--m", tp.top_regions, "Feature block width (top regions per image)")
        ->capture_default_str();
    tp_cmd->add_option("--mode", tp.mode, "Correlation mode: literal or distance")->capture_default_str();

    RerankConfig rr;
    auto* rr_cmd = app.add_subcommand("rerank", "Re-rank stored candidates with a trained decision layer");
    rr_cmd->add_option("--bundle", rr.bundle_dir, "Bundle directory")->required();
    rr_cmd->add_option("--candidates", rr.candidates_path, "Candidates document (omit to use the bundle's)");
    rr_cmd->add_option("--model", rr.model_path, "Decision-layer model file")->required();
    rr_cmd->add_option("--out", rr.out, "Output rerank document")->required();
    rr_cmd->add_option("--alpha", rr.alpha, "Distance-update weight")->capture_default_str();
    rr_cmd->add_option("--beta", rr.beta, "Information-matrix scale")->capture_default_str();
    rr_cmd->add_option("--mode", rr.mode, "Correlation mode: literal or distance")->capture_default_str();
    rr_cmd->add_option("--query-begin", rr.query_begin, "First query index to rerank")->capture_default_str();
    rr_cmd->add_option("--query-end", rr.query_end, "One past the last query index (-1 = all)")
        ->capture_default_str();

    EvaluateConfig ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "Compare two rankings with recall@N tables");
    ev_cmd->add_option("--baseline", ev.baseline_path, "Baseline candidates or rerank document")->required();
    ev_cmd->add_option("--reranked", ev.reranked_path, "Re-ranked candidates or rerank document")->required();
    ev_cmd->add_option("--positives", ev.positives_path, "Ground-truth document");
    ev_cmd->add_option("--bundle", ev.bundle_dir, "Bundle directory supplying the ground truth");
    ev_cmd->add_option("--ns", ev.ns, "Recall cut-offs (default 1 5 10 20)");
    ev_cmd->add_option("--out", ev.out, "Output comparison table")->required();
    ev_cmd->add_option("--plot", ev.plot_path, "Optional plot-data document");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    if (quiet) {
        std::cout.setstate(std::ios::failbit);  // progress prints become no-ops
    }

    try {
        if (app.got_subcommand(gen_cmd)) {
            return run_gen_synthetic(gen);
        }
        if (app.got_subcommand(enc_cmd)) {
            return run_encode(enc);
        }
        if (app.got_subcommand(sb_cmd)) {
            return run_score_boxes(sb);
        }
        if (app.got_subcommand(ret_cmd)) {
            return run_retrieve(ret);
        }
        if (app.got_subcommand(tp_cmd)) {
            return run_train_pdl(tp);
        }
        if (app.got_subcommand(rr_cmd)) {
            return run_rerank(rr);
        }
        if (app.got_subcommand(ev_cmd)) {
            return run_evaluate(ev);
        }
    } catch (const placerank::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const placerank::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
