#include "placerank/vlad.hpp"

#include "placerank/errors.hpp"
#include "placerank/rng.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace placerank;
using namespace placerank::vlad;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "placerank_vlad_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

ClusterCenters make_centers(const std::vector<std::vector<float>>& rows, double sharpness) {
    DescriptorMatrix m(static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(rows[0].size()));
    for (std::uint32_t r = 0; r < rows.size(); ++r) {
        for (std::uint32_t c = 0; c < rows[r].size(); ++c) {
            m.at(r, c) = rows[r][c];
        }
    }
    return ClusterCenters{std::move(m), sharpness};
}

/// Independent aggregation oracle: direct softmax (no max subtraction) and
/// plain triple loop.
std::vector<double> vlad_oracle(const DescriptorMatrix& x, const ClusterCenters& centers, bool normalize) {
    const std::uint32_t k = centers.cluster_count();
    const std::uint32_t d = centers.dim();
    std::vector<double> acc(static_cast<std::size_t>(k) * d, 0.0);
    for (std::uint32_t u = 0; u < x.rows(); ++u) {
        std::vector<double> w(k);
        double total = 0.0;
        for (std::uint32_t c = 0; c < k; ++c) {
            double d2 = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                double diff = static_cast<double>(x.at(u, j)) - static_cast<double>(centers.centers.at(c, j));
                d2 += diff * diff;
            }
            w[c] = std::exp(-centers.sharpness * d2);
            total += w[c];
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            for (std::uint32_t j = 0; j < d; ++j) {
                acc[static_cast<std::size_t>(c) * d + j] +=
                    (w[c] / total) *
                    (static_cast<double>(x.at(u, j)) - static_cast<double>(centers.centers.at(c, j)));
            }
        }
    }
    if (normalize) {
        for (std::uint32_t c = 0; c < k; ++c) {
            double norm = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                norm += acc[static_cast<std::size_t>(c) * d + j] * acc[static_cast<std::size_t>(c) * d + j];
            }
            norm = std::sqrt(norm);
            if (norm >= 1e-12) {
                for (std::uint32_t j = 0; j < d; ++j) {
                    acc[static_cast<std::size_t>(c) * d + j] /= norm;
                }
            }
        }
        double norm = 0.0;
        for (double v : acc) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm >= 1e-12) {
            for (auto& v : acc) {
                v /= norm;
            }
        }
    }
    return acc;
}

} // namespace

TEST_CASE("soft_assign gives uniform weights for equidistant centers") {
    auto centers = make_centers({{1.0f, 0.0f}, {-1.0f, 0.0f}}, 3.0);
    std::vector<float> x = {0.0f, 2.0f};
    auto w = soft_assign(x, centers);
    REQUIRE(w.size() == 2);
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft_assign with a single center returns weight one") {
    auto centers = make_centers({{0.5f, 0.5f, 0.5f}}, 1.0);
    std::vector<float> x = {9.0f, -9.0f, 3.0f};
    auto w = soft_assign(x, centers);
    REQUIRE(w.size() == 1);
    CHECK(w[0] == 1.0);
}

TEST_CASE("soft_assign concentrates on the matching center") {
    auto centers = make_centers({{0.0f, 0.0f}, {5.0f, 5.0f}}, 10.0);
    std::vector<float> x = {0.0f, 0.0f};
    auto w = soft_assign(x, centers);
    CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("soft_assign weights form a simplex on fuzzed input") {
    SplitMix64 rng(555);
    for (int trial = 0; trial < 200; ++trial) {
        const auto k = static_cast<std::uint32_t>(1 + rng.below(6));
        const auto d = static_cast<std::uint32_t>(1 + rng.below(5));
        DescriptorMatrix c(k, d);
        for (std::uint32_t r = 0; r < k; ++r) {
            for (std::uint32_t j = 0; j < d; ++j) {
                c.at(r, j) = static_cast<float>(rng.uniform(-4.0, 4.0));
            }
        }
        ClusterCenters centers{std::move(c), rng.uniform(0.01, 50.0)};
        std::vector<float> x(d);
        for (auto& v : x) {
            v = static_cast<float>(rng.uniform(-4.0, 4.0));
        }
        auto w = soft_assign(x, centers);
        double sum = 0.0;
        for (double v : w) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("soft_assign validates input") {
    auto centers = make_centers({{0.0f, 0.0f}}, 1.0);
    std::vector<float> bad = {1.0f};
    CHECK_THROWS_AS(soft_assign(bad, centers), ValidationError);
}

TEST_CASE("vlad_aggregate of descriptors equal to the centers is zero") {
    auto centers = make_centers({{1.0f, 0.0f}, {0.0f, 1.0f}}, 5.0);
    DescriptorMatrix x(2, 2);
    x.at(0, 0) = 1.0f;
    x.at(0, 1) = 0.0f;
    x.at(1, 0) = 0.0f;
    x.at(1, 1) = 1.0f;
    // Each descriptor coincides with one center; residuals toward the other
    // center cancel nothing but every block's weighted residual is tiny and
    // symmetric, so the raw vector is exactly antisymmetric per block.
    auto v = vlad_aggregate(x, centers, true);
    auto oracle = vlad_oracle(x, centers, true);
    REQUIRE(v.size() == oracle.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(std::abs(static_cast<double>(v[i]) - oracle[i]) < 1e-6);
    }

    // A single descriptor exactly on its only center gives the zero vector,
    // and normalization must keep it zero.
    auto single = make_centers({{2.0f, 3.0f}}, 1.0);
    DescriptorMatrix one(1, 2);
    one.at(0, 0) = 2.0f;
    one.at(0, 1) = 3.0f;
    auto zero = vlad_aggregate(one, single, true);
    for (float f : zero) {
        CHECK(f == 0.0f);
    }
}

TEST_CASE("vlad_aggregate block layout places cluster k at [k*d, (k+1)*d)") {
    auto centers = make_centers({{0.0f, 0.0f}, {100.0f, 100.0f}}, 10.0);
    DescriptorMatrix x(1, 2);
    x.at(0, 0) = 1.0f;
    x.at(0, 1) = 0.0f;
    auto raw = vlad_aggregate(x, centers, false);
    REQUIRE(raw.size() == 4);
    // All weight goes to cluster 0: block 0 holds the residual, block 1 ~ 0.
    CHECK(raw[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(raw[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(raw[2]) < 1e-6);
    CHECK(std::abs(raw[3]) < 1e-6);
}

TEST_CASE("vlad_aggregate matches the triple-loop oracle on fuzzed input") {
    SplitMix64 rng(777);
    for (int trial = 0; trial < 100; ++trial) {
        const auto k = static_cast<std::uint32_t>(1 + rng.below(5));
        const auto d = static_cast<std::uint32_t>(1 + rng.below(6));
        const auto n = static_cast<std::uint32_t>(1 + rng.below(10));
        DescriptorMatrix c(k, d), x(n, d);
        for (std::uint32_t r = 0; r < k; ++r) {
            for (std::uint32_t j = 0; j < d; ++j) {
                c.at(r, j) = static_cast<float>(rng.uniform(-2.0, 2.0));
            }
        }
        for (std::uint32_t r = 0; r < n; ++r) {
            for (std::uint32_t j = 0; j < d; ++j) {
                x.at(r, j) = static_cast<float>(rng.uniform(-2.0, 2.0));
            }
        }
        ClusterCenters centers{std::move(c), rng.uniform(0.1, 5.0)};
        const bool normalize = rng.below(2) == 0;
        auto got = vlad_aggregate(x, centers, normalize);
        auto expected = vlad_oracle(x, centers, normalize);
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(static_cast<double>(got[i]) - expected[i]) < 1e-5);
        }
    }
}

TEST_CASE("vlad_aggregate is invariant to descriptor order") {
    SplitMix64 rng(888);
    DescriptorMatrix x(6, 3), shuffled(6, 3);
    DescriptorMatrix c(2, 3);
    for (std::uint32_t r = 0; r < 6; ++r) {
        for (std::uint32_t j = 0; j < 3; ++j) {
            x.at(r, j) = static_cast<float>(rng.uniform(-1.0, 1.0));
        }
    }
    for (std::uint32_t r = 0; r < 2; ++r) {
        for (std::uint32_t j = 0; j < 3; ++j) {
            c.at(r, j) = static_cast<float>(rng.uniform(-1.0, 1.0));
        }
    }
    const std::uint32_t perm[6] = {4, 2, 0, 5, 1, 3};
    for (std::uint32_t r = 0; r < 6; ++r) {
        for (std::uint32_t j = 0; j < 3; ++j) {
            shuffled.at(r, j) = x.at(perm[r], j);
        }
    }
    ClusterCenters centers{std::move(c), 2.0};
    auto a = vlad_aggregate(x, centers, true);
    auto b = vlad_aggregate(shuffled, centers, true);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) < 1e-6);
    }
}

TEST_CASE("vlad_aggregate with huge sharpness matches the hard-assignment oracle") {
    SplitMix64 rng(4242);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t k = 3, d = 4, n = 8;
        DescriptorMatrix c(k, d), x(n, d);
        for (std::uint32_t r = 0; r < k; ++r) {
            for (std::uint32_t j = 0; j < d; ++j) {
                c.at(r, j) = static_cast<float>(rng.uniform(-5.0, 5.0));
            }
        }
        for (std::uint32_t r = 0; r < n; ++r) {
            for (std::uint32_t j = 0; j < d; ++j) {
                x.at(r, j) = static_cast<float>(rng.uniform(-5.0, 5.0));
            }
        }
        ClusterCenters centers{std::move(c), 1e6};

        // Hard-assignment oracle: each descriptor contributes its residual
        // to its single nearest center. Skip draws with near-ties.
        bool ambiguous = false;
        std::vector<double> hard(k * d, 0.0);
        for (std::uint32_t u = 0; u < n; ++u) {
            double best = 1e300, second = 1e300;
            std::uint32_t best_c = 0;
            for (std::uint32_t cc = 0; cc < k; ++cc) {
                double d2 = 0.0;
                for (std::uint32_t j = 0; j < d; ++j) {
                    double diff = static_cast<double>(x.at(u, j)) - static_cast<double>(centers.centers.at(cc, j));
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    second = best;
                    best = d2;
                    best_c = cc;
                } else if (d2 < second) {
                    second = d2;
                }
            }
            if (second - best < 1e-3) {
                ambiguous = true;
                break;
            }
            for (std::uint32_t j = 0; j < d; ++j) {
                hard[best_c * d + j] +=
                    static_cast<double>(x.at(u, j)) - static_cast<double>(centers.centers.at(best_c, j));
            }
        }
        if (ambiguous) {
            continue;
        }
        auto got = vlad_aggregate(x, centers, false);
        for (std::size_t i = 0; i < hard.size(); ++i) {
            CHECK(std::abs(static_cast<double>(got[i]) - hard[i]) < 1e-4);
        }
    }
}

TEST_CASE("vlad_aggregate rejects empty input and dimension mismatch") {
    auto centers = make_centers({{0.0f, 0.0f}}, 1.0);
    DescriptorMatrix empty;
    CHECK_THROWS_AS(vlad_aggregate(empty, centers, true), ValidationError);
    DescriptorMatrix bad(1, 3, 0.0f);
    CHECK_THROWS_AS(vlad_aggregate(bad, centers, true), ValidationError);
}

TEST_CASE("region_encode over the full image equals aggregating every cell") {
    SplitMix64 rng(31);
    SpatialDescriptorMap map;
    map.grid_w = 4;
    map.grid_h = 3;
    map.image_w = 640;
    map.image_h = 480;
    map.cells = placerank::testing::random_unit_rows(rng, 12, 5);
    auto centers = ClusterCenters{placerank::testing::random_unit_rows(rng, 3, 5), 2.0};

    RegionBox full{0.0, 0.0, 640.0, 480.0, 1.0};
    auto from_box = region_encode(map, full, centers);
    auto direct = vlad_aggregate(map.cells, centers, true);
    CHECK(from_box == direct);
}

TEST_CASE("region_encode left-half box matches an explicit two-cell oracle") {
    SplitMix64 rng(32);
    SpatialDescriptorMap map;
    map.grid_w = 2;
    map.grid_h = 2;
    map.image_w = 100;
    map.image_h = 100;
    map.cells = placerank::testing::random_unit_rows(rng, 4, 6);
    auto centers = ClusterCenters{placerank::testing::random_unit_rows(rng, 2, 6), 1.5};

    RegionBox left_half{0.0, 0.0, 50.0, 100.0, 1.0};
    auto got = region_encode(map, left_half, centers);

    // Cells (x=0, y=0) and (x=0, y=1) are rows 0 and 2, gathered y-major.
    DescriptorMatrix crop(2, 6);
    for (std::uint32_t j = 0; j < 6; ++j) {
        crop.at(0, j) = map.cells.at(0, j);
        crop.at(1, j) = map.cells.at(2, j);
    }
    auto expected = vlad_aggregate(crop, centers, true);
    CHECK(got == expected);
}

TEST_CASE("region_encode rounds partially covered cells outward") {
    SplitMix64 rng(33);
    SpatialDescriptorMap map;
    map.grid_w = 4;
    map.grid_h = 1;
    map.image_w = 400;
    map.image_h = 100;
    map.cells = placerank::testing::random_unit_rows(rng, 4, 3);
    auto centers = ClusterCenters{placerank::testing::random_unit_rows(rng, 2, 3), 1.0};

    // Box covering pixels [150, 260): cells 1 and 2 fully or partly, which
    // rounds outward to cells 1..2 inclusive.
    RegionBox box{150.0, 0.0, 110.0, 100.0, 1.0};
    auto got = region_encode(map, box, centers);
    DescriptorMatrix crop(2, 3);
    for (std::uint32_t j = 0; j < 3; ++j) {
        crop.at(0, j) = map.cells.at(1, j);
        crop.at(1, j) = map.cells.at(2, j);
    }
    CHECK(got == vlad_aggregate(crop, centers, true));
}

TEST_CASE("region_encode degenerate box falls back to the nearest cell") {
    SplitMix64 rng(34);
    SpatialDescriptorMap map;
    map.grid_w = 2;
    map.grid_h = 2;
    map.image_w = 2;
    map.image_h = 2;
    map.cells = placerank::testing::random_unit_rows(rng, 4, 3);
    auto centers = ClusterCenters{placerank::testing::random_unit_rows(rng, 2, 3), 1.0};

    // Zero-size box exactly on the cell boundary (1, 1): the crop rounds to
    // nothing, so the nearest cell (x=1, y=1) = row 3 is used.
    RegionBox degenerate{1.0, 1.0, 0.0, 0.0, 1.0};
    auto got = region_encode(map, degenerate, centers);
    DescriptorMatrix crop(1, 3);
    for (std::uint32_t j = 0; j < 3; ++j) {
        crop.at(0, j) = map.cells.at(3, j);
    }
    CHECK(got == vlad_aggregate(crop, centers, true));
}

TEST_CASE("region_encode single-cell map always uses that cell") {
    SplitMix64 rng(35);
    SpatialDescriptorMap map;
    map.grid_w = 1;
    map.grid_h = 1;
    map.image_w = 640;
    map.image_h = 480;
    map.cells = placerank::testing::random_unit_rows(rng, 1, 4);
    auto centers = ClusterCenters{placerank::testing::random_unit_rows(rng, 2, 4), 1.0};
    RegionBox box{100.0, 50.0, 20.0, 20.0, 1.0};
    auto got = region_encode(map, box, centers);
    CHECK(got == vlad_aggregate(map.cells, centers, true));
}

TEST_CASE("pca_fit whitens anisotropic data and aligns with the major axis") {
    SplitMix64 rng(91);
    const std::uint32_t n = 1000;
    DescriptorMatrix data(n, 2);
    // Principal axis along (1, 1)/sqrt(2) with std 3, minor axis std 0.5.
    for (std::uint32_t i = 0; i < n; ++i) {
        double a = 3.0 * rng.gaussian();
        double b = 0.5 * rng.gaussian();
        data.at(i, 0) = static_cast<float>((a + b) / std::sqrt(2.0) + 10.0);
        data.at(i, 1) = static_cast<float>((a - b) / std::sqrt(2.0) - 4.0);
    }
    WhiteningTransform t = pca_fit(data, 2);

    // First projection row must align with (1, 1)/sqrt(2) up to scale.
    const double px = t.projection.at(0, 0);
    const double py = t.projection.at(0, 1);
    const double cosine = (px + py) / std::sqrt(2.0) / std::sqrt(px * px + py * py);
    CHECK(std::abs(cosine) > 0.99);

    // Whitened sample covariance is close to the identity.
    std::vector<std::vector<double>> projected(n, std::vector<double>(2));
    for (std::uint32_t i = 0; i < n; ++i) {
        auto y = pca_apply(t, data.row(i), false);
        projected[i] = {static_cast<double>(y[0]), static_cast<double>(y[1])};
    }
    double mean0 = 0.0, mean1 = 0.0;
    for (const auto& p : projected) {
        mean0 += p[0];
        mean1 += p[1];
    }
    mean0 /= n;
    mean1 /= n;
    double c00 = 0.0, c01 = 0.0, c11 = 0.0;
    for (const auto& p : projected) {
        c00 += (p[0] - mean0) * (p[0] - mean0);
        c01 += (p[0] - mean0) * (p[1] - mean1);
        c11 += (p[1] - mean1) * (p[1] - mean1);
    }
    c00 /= (n - 1);
    c01 /= (n - 1);
    c11 /= (n - 1);
    CHECK(std::abs(c00 - 1.0) < 0.1);
    CHECK(std::abs(c11 - 1.0) < 0.1);
    CHECK(std::abs(c01) < 0.1);
}

TEST_CASE("pca_fit orients every projection row by its largest coefficient") {
    SplitMix64 rng(92);
    DescriptorMatrix data(200, 3);
    for (std::uint32_t i = 0; i < 200; ++i) {
        for (std::uint32_t j = 0; j < 3; ++j) {
            data.at(i, j) = static_cast<float>(rng.gaussian() * (j + 1));
        }
    }
    WhiteningTransform t = pca_fit(data, 3);
    for (std::uint32_t r = 0; r < 3; ++r) {
        float best = 0.0f;
        for (std::uint32_t c = 0; c < 3; ++c) {
            if (std::abs(t.projection.at(r, c)) > std::abs(best)) {
                best = t.projection.at(r, c);
            }
        }
        CHECK(best > 0.0f);
    }
}

TEST_CASE("pca_fit rejects constant data and impossible dimensions") {
    DescriptorMatrix constant(10, 3, 2.5f);
    CHECK_THROWS_AS(pca_fit(constant, 1), ValidationError);

    SplitMix64 rng(93);
    DescriptorMatrix data(5, 2);
    for (std::uint32_t i = 0; i < 5; ++i) {
        for (std::uint32_t j = 0; j < 2; ++j) {
            data.at(i, j) = static_cast<float>(rng.gaussian());
        }
    }
    CHECK_THROWS_AS(pca_fit(data, 3), ValidationError);
    CHECK_THROWS_AS(pca_fit(data, 0), ValidationError);
    DescriptorMatrix one_row(1, 2, 1.0f);
    CHECK_THROWS_AS(pca_fit(one_row, 1), ValidationError);
}

TEST_CASE("pca_apply renormalizes, keeping exact zeros zero") {
    SplitMix64 rng(94);
    DescriptorMatrix data(50, 2);
    for (std::uint32_t i = 0; i < 50; ++i) {
        data.at(i, 0) = static_cast<float>(rng.gaussian());
        data.at(i, 1) = static_cast<float>(2.0 * rng.gaussian());
    }
    WhiteningTransform t = pca_fit(data, 2);

    // The mean itself projects to zero; renormalization must keep it zero.
    auto zero = pca_apply(t, t.mean.row(0), true);
    for (float v : zero) {
        CHECK(v == 0.0f);
    }

    std::vector<float> x = {1.5f, -0.5f};
    auto y = pca_apply(t, x, true);
    double norm = 0.0;
    for (float v : y) {
        norm += static_cast<double>(v) * v;
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("centers, spatial maps, and whitening transforms round-trip to disk") {
    const auto dir = fresh_dir("serialization");
    SplitMix64 rng(95);

    ClusterCenters centers{placerank::testing::random_unit_rows(rng, 4, 6), 7.5};
    centers.save(dir / "centers.mqb");
    ClusterCenters centers2 = ClusterCenters::load(dir / "centers.mqb");
    CHECK(centers2.centers == centers.centers);
    CHECK(centers2.sharpness == centers.sharpness);

    SpatialDescriptorMap map;
    map.grid_w = 3;
    map.grid_h = 2;
    map.image_w = 320;
    map.image_h = 240;
    map.cells = placerank::testing::random_unit_rows(rng, 6, 6);
    map.save(dir / "map.mqb");
    SpatialDescriptorMap map2 = SpatialDescriptorMap::load(dir / "map.mqb");
    CHECK(map2.cells == map.cells);
    CHECK(map2.grid_w == map.grid_w);
    CHECK(map2.grid_h == map.grid_h);
    CHECK(map2.image_w == map.image_w);
    CHECK(map2.image_h == map.image_h);

    DescriptorMatrix data(100, 4);
    for (std::uint32_t i = 0; i < 100; ++i) {
        for (std::uint32_t j = 0; j < 4; ++j) {
            data.at(i, j) = static_cast<float>(rng.gaussian() * (j + 1));
        }
    }
    WhiteningTransform t = pca_fit(data, 3);
    t.save(dir / "whitening.mqb");
    WhiteningTransform t2 = WhiteningTransform::load(dir / "whitening.mqb");
    CHECK(t2.mean == t.mean);
    CHECK(t2.projection == t.projection);

    CHECK_THROWS_AS(ClusterCenters::load(dir / "nope.mqb"), IoError);
}
