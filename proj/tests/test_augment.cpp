#include <doctest.h>

#include <algorithm>
#include <random>

#include "lungad/augment.hpp"
#include "lungad/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lungad;

namespace {

Patch distinct_patch(int p, int channels = 1, float base = -1000.0f) {
    Patch x;
    x.size = p;
    x.channels = channels;
    x.data.resize(static_cast<std::size_t>(p) * p * p * channels);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = base + static_cast<float>(i);
    return x;
}

Patch random_patch(int p, uint64_t seed, int channels = 1) {
    Patch x = distinct_patch(p, channels);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1024.0f, 200.0f);
    for (auto& v : x.data) v = u(rng);
    return x;
}

std::size_t count_diff(const Patch& a, const Patch& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) n += a.data[i] != b.data[i];
    return n;
}

} // namespace

TEST_CASE("Bezier lookup with identity control points is the identity within 1e-3") {
    const BezierLut lut(kIdentityBezier);
    for (int i = 0; i <= 1000; ++i) {
        const double x = i / 1000.0;
        CHECK(std::abs(lut(x) - x) <= 1e-3);
    }
    const Patch p = random_patch(6, 1);
    const Patch out = bezier_intensity(p, kIdentityBezier);
    const auto [lo, hi] = std::minmax_element(p.data.begin(), p.data.end());
    for (std::size_t i = 0; i < p.data.size(); ++i) CHECK(std::abs(out.data[i] - p.data[i]) <= 1e-3 * (*hi - *lo));
}

TEST_CASE("Bezier lookup matches the exact curve") {
    const BezierPoints s_curve{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    const BezierLut lut(s_curve);
    const double expected = oracle::bezier_by_bisection(s_curve, 0.5);
    CHECK(expected == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::abs(lut(0.5) - expected) <= 1e-3);
    const BezierPoints bent{{{0, 0}, {0.2, 0.7}, {0.5, 0.95}, {1, 1}}};
    const BezierLut lut2(bent);
    for (double x : {0.01, 0.1, 0.3, 0.5, 0.77, 0.99})
        CHECK(std::abs(lut2(x) - oracle::bezier_by_bisection(bent, x)) <= 1e-3);
}

TEST_CASE("bezier_intensity on a three-level patch") {
    const BezierPoints s_curve{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    Patch p = distinct_patch(2);
    std::fill(p.data.begin(), p.data.end(), -1000.0f);
    p.data[1] = -500.0f; // normalised 0.5
    p.data[2] = 0.0f;
    const Patch out = bezier_intensity(p, s_curve);
    CHECK(out.data[0] == doctest::Approx(-1000.0));
    CHECK(out.data[2] == doctest::Approx(0.0));
    const double y = oracle::bezier_by_bisection(s_curve, 0.5);
    CHECK(std::abs((out.data[1] + 1000.0) / 1000.0 - y) <= 1e-3);
}

TEST_CASE("bezier_intensity leaves constant patches alone and keeps shape") {
    Patch p = distinct_patch(4);
    std::fill(p.data.begin(), p.data.end(), -800.0f);
    const BezierPoints pts{{{0, 0}, {0.1, 0.9}, {0.4, 0.2}, {1, 1}}};
    const Patch out = bezier_intensity(p, pts);
    CHECK(out.data == p.data);
    const Patch r = random_patch(5, 2, 2);
    const Patch ro = bezier_intensity(r, pts);
    CHECK(ro.data.size() == r.data.size());
    CHECK(ro.size == r.size);
    CHECK(ro.channels == 2);
}

TEST_CASE("monotone control points give a monotone intensity map") {
    const BezierPoints pts{{{0, 0}, {0.3, 0.1}, {0.6, 0.8}, {1, 1}}};
    const Patch p = random_patch(6, 9);
    const Patch out = bezier_intensity(p, pts);
    const auto [lo, hi] = std::minmax_element(p.data.begin(), p.data.end());
    const double tol = 1e-3 * (*hi - *lo);
    for (std::size_t i = 0; i < p.data.size(); i += 7)
        for (std::size_t j = 0; j < p.data.size(); j += 5)
            if (p.data[i] < p.data[j]) CHECK(out.data[i] <= out.data[j] + tol);
}

TEST_CASE("local_pixel_shuffle") {
    const Patch p = distinct_patch(4);
    SUBCASE("block size 1 is exact identity") { CHECK(local_pixel_shuffle(p, 10, 1, 5).data == p.data); }
    SUBCASE("multiset conservation") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            const Patch r = random_patch(8, seed, 2);
            const Patch out = local_pixel_shuffle(r, 6, 3, seed);
            for (int c = 0; c < 2; ++c) {
                std::vector<float> a(r.channel(c).begin(), r.channel(c).end());
                std::vector<float> b(out.channel(c).begin(), out.channel(c).end());
                std::sort(a.begin(), a.end());
                std::sort(b.begin(), b.end());
                CHECK(a == b);
            }
        }
    }
    SUBCASE("one 2^3 block replayed with the seeded generator") {
        const uint64_t seed = 1234;
        const Patch out = local_pixel_shuffle(p, 1, 2, seed);
        CHECK(out.data == local_pixel_shuffle(p, 1, 2, seed).data);

        std::mt19937_64 rng(seed);
        const int x0 = std::uniform_int_distribution<int>(0, 2)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, 2)(rng);
        const int z0 = std::uniform_int_distribution<int>(0, 2)(rng);
        std::vector<std::size_t> pos;
        for (int z = z0; z < z0 + 2; ++z)
            for (int y = y0; y < y0 + 2; ++y)
                for (int x = x0; x < x0 + 2; ++x) pos.push_back(p.index(0, x, y, z));
        std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6, 7};
        std::shuffle(perm.begin(), perm.end(), rng);
        Patch expected = p;
        for (std::size_t i = 0; i < 8; ++i) expected.data[pos[i]] = p.data[pos[perm[i]]];
        CHECK(out.data == expected.data);
        CHECK(count_diff(out, p) <= 8);
    }
    CHECK_THROWS_AS(local_pixel_shuffle(p, 1, 5, 0), ValidationError);
}

TEST_CASE("paint") {
    const Patch p = distinct_patch(8);
    SUBCASE("in-painting with no boxes is identity") {
        CHECK(paint(p, PaintMode::in, 0, {2, 4}, 1).data == p.data);
    }
    SUBCASE("out-painting with a full-patch box is identity") {
        CHECK(paint(p, PaintMode::out, 1, {8, 8}, 1).data == p.data);
    }
    SUBCASE("one 2^3 in-painted box changes exactly 8 voxels") {
        for (uint64_t seed = 0; seed < 10; ++seed) CHECK(count_diff(paint(p, PaintMode::in, 1, {2, 2}, seed), p) == 8);
    }
    SUBCASE("out-painting preserves exactly the box interior") {
        const Patch out = paint(p, PaintMode::out, 1, {3, 3}, 4);
        CHECK(count_diff(out, p) == 512 - 27);
    }
    SUBCASE("noise stays inside the patch range") {
        const Patch out = paint(p, PaintMode::in, 4, {2, 6}, 8);
        const auto [lo, hi] = std::minmax_element(p.data.begin(), p.data.end());
        for (float v : out.data) {
            CHECK(v >= *lo);
            CHECK(v <= *hi);
        }
    }
    CHECK_THROWS_AS(paint(p, PaintMode::in, 1, {4, 9}, 1), ValidationError);
    CHECK_THROWS_AS(paint(p, PaintMode::in, 1, {0, 2}, 1), ValidationError);
}

TEST_CASE("augment_pair") {
    const Patch p = random_patch(16, 77);
    SUBCASE("all probabilities zero gives two copies of the input") {
        AugmentConfig cfg;
        cfg.p_bezier = cfg.p_shuffle = cfg.p_paint = 0.0;
        const auto [a, b] = augment_pair(p, cfg, 3);
        CHECK(a.data == p.data);
        CHECK(b.data == p.data);
    }
    SUBCASE("composed identities") {
        AugmentConfig cfg;
        cfg.p_bezier = cfg.p_shuffle = cfg.p_paint = 1.0;
        cfg.bezier_points = kIdentityBezier;
        cfg.shuffle_block_size = 1;
        cfg.paint_count = 0;
        const auto [a, b] = augment_pair(p, cfg, 3);
        CHECK(a.data == p.data);
        CHECK(b.data == p.data);
    }
    SUBCASE("deterministic for a fixed seed, views independent") {
        AugmentConfig cfg;
        cfg.p_bezier = cfg.p_shuffle = cfg.p_paint = 1.0;
        cfg.shuffle_block_size = 2;
        const auto [a1, b1] = augment_pair(p, cfg, 42);
        const auto [a2, b2] = augment_pair(p, cfg, 42);
        CHECK(a1.data == a2.data);
        CHECK(b1.data == b2.data);
        CHECK(a1.data != b1.data);
        const auto [a3, b3] = augment_pair(p, cfg, 43);
        CHECK(a3.data != a1.data);
        CHECK(a1.data.size() == p.data.size());
    }
}

TEST_CASE("augment config JSON") {
    const AugmentConfig def;
    const AugmentConfig back = augment_config_from_json(to_json(def));
    CHECK(to_json(back) == to_json(def));
    const auto partial = augment_config_from_json(nlohmann::json{{"p_bezier", 0.25}});
    CHECK(partial.p_bezier == 0.25);
    CHECK(partial.p_shuffle == def.p_shuffle);
    CHECK_THROWS_AS(augment_config_from_json(nlohmann::json{{"p_bezir", 0.25}}), ValidationError);
    AugmentConfig bad;
    bad.p_paint = 1.5;
    CHECK_THROWS_AS(bad.validate(32), ValidationError);
    bad = AugmentConfig{};
    bad.bezier_points[3] = {0.9, 1.0};
    CHECK_THROWS_AS(bad.validate(32), ValidationError);
    bad = AugmentConfig{};
    bad.shuffle_block_size = 40;
    CHECK_THROWS_AS(bad.validate(32), ValidationError);
    CHECK_NOTHROW(def.validate(32));
}

TEST_CASE("pair dataset round trip") {
    testutil::TempDir dir;
    const Patch a = random_patch(4, 1, 2);
    const Patch b = random_patch(4, 2, 2);
    {
        PairDatasetWriter w(dir.path(), 4, 2, nlohmann::json::object());
        w.add({"p0", 3, true}, a, b);
        w.add({"p1", 0, false}, b, a);
        w.finish();
    }
    const PairDataset ds = read_pair_dataset(dir.path());
    REQUIRE(ds.records.size() == 2);
    CHECK(ds.records[0].patient_id == "p0");
    CHECK(ds.records[0].patch_index == 3);
    CHECK(ds.records[0].normal);
    CHECK(ds.payload.size() == 2 * 2 * a.data.size());
    CHECK(ds.payload[0] == normalize_hu(a.data[0]));
    CHECK(ds.payload[a.data.size()] == normalize_hu(b.data[0]));
    CHECK(normalize_hu(-1024.0f) == 0.0f);
    CHECK(normalize_hu(3071.0f) == 1.0f);

    const auto raw = testutil::read_bytes(dir / "pairs.raw");
    testutil::write_bytes(dir / "pairs.raw", raw.substr(0, raw.size() - 4));
    CHECK_THROWS_WITH_AS(read_pair_dataset(dir.path()), "payload size mismatch", ValidationError);
}
