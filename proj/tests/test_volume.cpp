#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <numeric>
#include <set>
#include <tuple>

#include "lungad/error.hpp"
#include "lungad/volume.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lungad;

namespace {

void write_raw_volume(const testutil::TempDir& dir, const std::string& name, int n, const std::vector<int16_t>& v,
                      double spacing = 1.0) {
    testutil::write_bytes(dir / (name + ".vol1.json"),
                          "{\"dims\":[" + std::to_string(n) + "," + std::to_string(n) + "," + std::to_string(n) +
                              "],\"spacing\":[" + std::to_string(spacing) + ",1,1],\"channels\":1,"
                              "\"dtype\":\"i16le\",\"payload\":\"" + name + ".vol1.raw\"}");
    std::string bytes(v.size() * 2, '\0');
    std::memcpy(bytes.data(), v.data(), bytes.size());
    testutil::write_bytes(dir / (name + ".vol1.raw"), bytes);
}

Volume constant_volume(int n, int16_t hu) { return Volume({n, n, n}, {}, 1, hu); }

} // namespace

TEST_CASE("load_volume reads a constant VOL1 pair") {
    testutil::TempDir dir;
    write_raw_volume(dir, "c", 4, std::vector<int16_t>(64, -1000));
    const Volume v = load_volume(dir / "c.vol1.json");
    CHECK(v.dims() == Dims{4, 4, 4});
    CHECK(v.data().size() == 64);
    CHECK(std::all_of(v.data().begin(), v.data().end(), [](int16_t x) { return x == -1000; }));
    // Stem form resolves to the same sidecar.
    CHECK(load_volume(dir / "c").data().size() == 64);
}

TEST_CASE("load_volume rejects a payload of the wrong length") {
    testutil::TempDir dir;
    write_raw_volume(dir, "c", 4, std::vector<int16_t>(63, -1000));
    CHECK_THROWS_WITH_AS(load_volume(dir / "c.vol1.json"), "payload size mismatch", ValidationError);
}

TEST_CASE("load_volume clamps to the CT range") {
    testutil::TempDir dir;
    std::vector<int16_t> v(8, 0);
    v[0] = -2000;
    v[1] = 5000;
    write_raw_volume(dir, "c", 2, v);
    const Volume vol = load_volume(dir / "c.vol1.json");
    CHECK(vol.data()[0] == -1024);
    CHECK(vol.data()[1] == 3071);
}

TEST_CASE("load_volume rejects corrupt sidecars and bad spacing") {
    testutil::TempDir dir;
    write_raw_volume(dir, "s", 2, std::vector<int16_t>(8, 0), 0.0);
    CHECK_THROWS_AS(load_volume(dir / "s.vol1.json"), ValidationError);
    testutil::write_bytes(dir / "bad.vol1.json", "{not json");
    CHECK_THROWS_AS(load_volume(dir / "bad.vol1.json"), ValidationError);
    CHECK_THROWS_AS(load_volume(dir / "missing.vol1.json"), ValidationError);
}

TEST_CASE("volume and mask writers round trip") {
    testutil::TempDir dir;
    Volume v({3, 4, 5}, {0.5, 0.6, 0.7}, 2, int16_t{-900});
    v.set(1, 2, 3, 4, 42);
    write_volume(v, dir / "v.vol1.json");
    const Volume r = load_volume(dir / "v.vol1.json");
    CHECK(r.dims() == v.dims());
    CHECK(r.spacing() == v.spacing());
    CHECK(r.channels() == 2);
    CHECK(std::equal(r.data().begin(), r.data().end(), v.data().begin()));

    LungMask m({3, 4, 5}, uint8_t{0});
    m.set(1, 1, 1, true);
    write_mask(m, dir / "m");
    const LungMask rm = load_mask(dir / "m");
    CHECK(rm.lung_voxels() == 1);
    CHECK(rm.at(1, 1, 1));
    CHECK_THROWS_AS(load_mask(dir / "v.vol1.json"), ValidationError); // i16le is not a mask
}

TEST_CASE("emphysema_fraction counts strictly below the threshold inside the lung") {
    const Dims d{10, 1, 1};
    LungMask mask(d, uint8_t{1});
    SUBCASE("all below") { CHECK(emphysema_fraction(Volume(d, {}, 1, int16_t{-1000}), mask) == 1.0); }
    SUBCASE("none below") { CHECK(emphysema_fraction(Volume(d, {}, 1, int16_t{-800}), mask) == 0.0); }
    SUBCASE("3 of 10") {
        std::vector<int16_t> hu{-960, -900, -960, -900, -900, -960, -900, -900, -900, -900};
        const Volume v(d, {}, 1, hu);
        // Direct count over the voxel list.
        const double expected =
            static_cast<double>(std::count_if(hu.begin(), hu.end(), [](int16_t x) { return x < -950; })) / hu.size();
        CHECK(expected == doctest::Approx(0.3));
        CHECK(emphysema_fraction(v, mask) == doctest::Approx(expected));
    }
    SUBCASE("threshold itself is not low attenuation") {
        CHECK(emphysema_fraction(Volume(d, {}, 1, int16_t{-950}), mask) == 0.0);
    }
    SUBCASE("voxels outside the mask are ignored") {
        std::vector<uint8_t> m(10, 0);
        m[0] = 1;
        std::vector<int16_t> hu(10, -1000);
        hu[0] = -500;
        CHECK(emphysema_fraction(Volume(d, {}, 1, hu), LungMask(d, m)) == 0.0);
    }
    SUBCASE("empty mask") {
        CHECK_THROWS_WITH_AS(emphysema_fraction(Volume(d, {}, 1, int16_t{-1000}), LungMask(d, uint8_t{0})),
                             "no lung voxels", ValidationError);
    }
}

TEST_CASE("emphysema_fraction is invariant to voxel storage order") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> hu(-1024, -700);
    const Dims d{50, 1, 1};
    std::vector<int16_t> v(50);
    std::vector<uint8_t> m(50);
    for (int i = 0; i < 50; ++i) {
        v[i] = static_cast<int16_t>(hu(rng));
        m[i] = static_cast<uint8_t>(rng() % 2);
    }
    m[0] = 1;
    const double base = emphysema_fraction(Volume(d, {}, 1, v), LungMask(d, m));
    std::vector<int> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    for (int t = 0; t < 20; ++t) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int16_t> pv(50);
        std::vector<uint8_t> pm(50);
        for (int i = 0; i < 50; ++i) {
            pv[i] = v[perm[i]];
            pm[i] = m[perm[i]];
        }
        CHECK(emphysema_fraction(Volume(d, {}, 1, pv), LungMask(d, pm)) == base);
    }
}

TEST_CASE("grid starts follow the stride and clamp rule") {
    CHECK(grid_starts(64, 32, 0.0) == std::vector<int>{0, 32});
    CHECK(grid_starts(64, 32, 0.2) == std::vector<int>{0, 25, 32});
    CHECK(grid_starts(32, 32, 0.2) == std::vector<int>{0});
    CHECK_THROWS_AS(grid_starts(16, 32, 0.0), ValidationError);
    CHECK_THROWS_AS(grid_starts(64, 32, 1.0), ValidationError);
    for (int dim : {32, 33, 47, 64, 65, 96, 101})
        for (int p : {8, 16, 32})
            for (double ov : {0.0, 0.2, 0.5})
                if (p <= dim) CHECK(grid_starts(dim, p, ov) == oracle::enumerate_starts(dim, p, ov));
}

TEST_CASE("extract_patch_grid counts on a fully masked 64^3 volume") {
    const Volume v = constant_volume(64, -850);
    const LungMask full({64, 64, 64}, uint8_t{1});
    CHECK(extract_patch_grid(v, full, {32, 0.0, 0.5}).size() == 8);
    // 3 starts per axis by enumeration.
    const auto s = oracle::enumerate_starts(64, 32, 0.2);
    CHECK(s.size() == 3);
    CHECK(extract_patch_grid(v, full, {32, 0.2, 0.5}).size() == s.size() * s.size() * s.size());
    CHECK(extract_patch_grid(v, LungMask({64, 64, 64}, uint8_t{0}), {32, 0.0, 0.5}).empty());
}

TEST_CASE("extract_patch_grid metadata and errors") {
    Volume v = constant_volume(16, -900);
    LungMask mask({16, 16, 16}, uint8_t{0});
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                mask.set(x, y, z, true);
                if (x < 2) v.set(0, x, y, z, -1000);
            }
    const auto patches = extract_patch_grid(v, mask, {8, 0.0, 0.0}, "p1");
    REQUIRE(patches.size() == 8);
    const Patch& first = patches.front();
    CHECK(first.origin == Index3{0, 0, 0});
    CHECK(first.mask_coverage == 1.0);
    CHECK(first.emphysema_fraction == doctest::Approx(0.25));
    CHECK(first.patient_id == "p1");
    CHECK(first.data[first.index(0, 0, 0, 0)] == -1000.0f);
    CHECK(first.data[first.index(0, 5, 0, 0)] == -900.0f);
    CHECK(patches[1].mask_coverage == 0.0);
    CHECK(patches[1].emphysema_fraction == 0.0);
    for (const auto& p : patches) {
        CHECK(p.origin.x + p.size <= 16);
        CHECK(p.mask_coverage >= 0.0);
        CHECK(p.mask_coverage <= 1.0);
    }
    CHECK_THROWS_AS(extract_patch_grid(v, mask, {32, 0.0, 0.5}), ValidationError);
    CHECK_THROWS_AS(extract_patch_grid(v, mask, {8, 0.0, 1.5}), ValidationError);
    CHECK_THROWS_AS(extract_patch_grid(v, mask, {8, 0.0, -0.1}), ValidationError);
}

TEST_CASE("grid covers every voxel and overlap never reduces the count") {
    for (auto [nx, ny, nz] : {std::tuple{40, 37, 50}, std::tuple{32, 45, 33}, std::tuple{64, 64, 64}}) {
        const Dims d{nx, ny, nz};
        const Volume v(d, {}, 1, int16_t{-850});
        const LungMask full(d, uint8_t{1});
        const auto p0 = extract_patch_grid(v, full, {16, 0.0, 0.0});
        const auto p2 = extract_patch_grid(v, full, {16, 0.2, 0.0});
        CHECK(p2.size() >= p0.size());
        std::vector<uint8_t> covered(d.voxels(), 0);
        for (const auto& p : p0)
            for (int z = 0; z < 16; ++z)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x) covered[full.index(p.origin.x + x, p.origin.y + y, p.origin.z + z)] = 1;
        CHECK(std::all_of(covered.begin(), covered.end(), [](uint8_t c) { return c == 1; }));
    }
}

TEST_CASE("label_patch_normality") {
    Patch p;
    p.emphysema_fraction = 0.005;
    CHECK(label_patch_normality(p, SubjectLabel::healthy));
    p.emphysema_fraction = 0.02;
    CHECK_FALSE(label_patch_normality(p, SubjectLabel::healthy));
    p.emphysema_fraction = 0.01;
    CHECK_FALSE(label_patch_normality(p, SubjectLabel::healthy));
    for (double f : {0.0, 0.005, 0.5, 1.0}) {
        p.emphysema_fraction = f;
        CHECK_FALSE(label_patch_normality(p, SubjectLabel::diseased));
    }
}

TEST_CASE("subsample_patches") {
    auto make = [](int n) {
        std::vector<Patch> v(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) v[i].origin.x = i;
        return v;
    };
    SUBCASE("under the cap is unchanged") {
        const auto out = subsample_patches(make(80), 100, 1);
        REQUIRE(out.size() == 80);
        for (int i = 0; i < 80; ++i) CHECK(out[i].origin.x == i);
    }
    SUBCASE("median 0% config patient count is capped to 100, order preserved") {
        const auto out = subsample_patches(make(319), 100, 7);
        REQUIRE(out.size() == 100);
        for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].origin.x < out[i].origin.x);
        std::set<int> uniq;
        for (const auto& p : out) uniq.insert(p.origin.x);
        CHECK(uniq.size() == 100);
    }
    SUBCASE("deterministic per seed") {
        const auto a = subsample_patches(make(319), 100, 11);
        const auto b = subsample_patches(make(319), 100, 11);
        const auto c = subsample_patches(make(319), 100, 12);
        bool same = true, differ = false;
        for (std::size_t i = 0; i < 100; ++i) {
            same = same && a[i].origin.x == b[i].origin.x;
            differ = differ || a[i].origin.x != c[i].origin.x;
        }
        CHECK(same);
        CHECK(differ);
    }
    SUBCASE("idempotent under the cap") {
        const auto once = subsample_patches(make(50), 50, 3);
        const auto twice = subsample_patches(once, 50, 99);
        for (int i = 0; i < 50; ++i) CHECK(twice[i].origin.x == i);
    }
    CHECK_THROWS_AS(subsample_patches(make(3), 0, 1), ValidationError);
}

TEST_CASE("manifest round trip and validation") {
    testutil::TempDir dir;
    write_volume(constant_volume(4, -850), dir / "v1.vol1.json");
    write_mask(LungMask({4, 4, 4}, uint8_t{1}), dir / "m1.vol1.json");
    CohortManifest m;
    m.patients.push_back({"a", "v1.vol1.json", "m1.vol1.json", SubjectLabel::diseased, Split::val});
    write_manifest(m, dir / "manifest.json");
    const auto r = load_manifest(dir / "manifest.json");
    REQUIRE(r.patients.size() == 1);
    CHECK(r.patients[0].label == SubjectLabel::diseased);
    CHECK(r.patients[0].split == Split::val);
    CHECK(load_volume(r.resolve(r.patients[0].volume_path)).dims() == Dims{4, 4, 4});

    m.patients.push_back(m.patients[0]);
    write_manifest(m, dir / "dup.json");
    CHECK_THROWS_AS(load_manifest(dir / "dup.json"), ValidationError);

    m.patients.pop_back();
    m.patients[0].volume_path = "nowhere.vol1.json";
    write_manifest(m, dir / "missing.json");
    CHECK_THROWS_AS(load_manifest(dir / "missing.json"), ValidationError);
}
