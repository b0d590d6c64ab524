#include "lungad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "lungad/error.hpp"

namespace lungad {

namespace fs = std::filesystem;

namespace {

// Semi-axis factor r with (pi / 6) r^3 = 0.4.
const double kEllipsoidFactor = std::cbrt(0.4 * 6.0 / 3.14159265358979323846);

int16_t to_hu(double v) { return static_cast<int16_t>(std::clamp(std::lround(v), long{kMinHu}, long{kMaxHu})); }

} // namespace

void PhantomSpec::validate() const {
    if (dims.nx < 4 || dims.ny < 4 || dims.nz < 4) throw ValidationError("phantom dims must be >= 4");
    if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) throw ValidationError("non-positive spacing");
    if (!(burden >= 0.0 && burden <= 1.0)) throw ValidationError("burden must be in [0, 1]");
    if (!(blob_mean < kEmphysemaThresholdHu && kEmphysemaThresholdHu < parenchyma_mean))
        throw ValidationError("need blob mean < -950 HU < parenchyma mean");
    if (parenchyma_std < 0.0 || blob_std < 0.0) throw ValidationError("standard deviations must be >= 0");
    if (blob_radius_min < 0 || blob_radius_max < blob_radius_min) throw ValidationError("invalid blob radius range");
    if (burden > 0.0 && blob_radius_max == 0) throw ValidationError("unsatisfiable spec: burden > 0 with blob radius 0");
    if (channels != 1 && channels != 2) throw ValidationError("channels must be 1 or 2");
}

Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Dims d = spec.dims;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> parenchyma(spec.parenchyma_mean, spec.parenchyma_std);
    std::normal_distribution<double> blob(spec.blob_mean, spec.blob_std);

    Volume vol(d, spec.spacing, spec.channels, static_cast<int16_t>(kMinHu));
    LungMask mask(d, uint8_t{0});
    const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0, cz = (d.nz - 1) / 2.0;
    const double ax = kEllipsoidFactor * d.nx / 2.0;
    const double ay = kEllipsoidFactor * d.ny / 2.0;
    const double az = kEllipsoidFactor * d.nz / 2.0;

    std::vector<std::size_t> lung; // linear indices, for blob centre sampling
    std::size_t n_low = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double r = std::pow((x - cx) / ax, 2) + std::pow((y - cy) / ay, 2) + std::pow((z - cz) / az, 2);
                if (r > 1.0) continue;
                mask.set(x, y, z, true);
                const int16_t v = to_hu(parenchyma(rng));
                vol.set(0, x, y, z, v);
                if (v < kEmphysemaThresholdHu) ++n_low;
                lung.push_back(mask.index(x, y, z));
            }
    if (lung.empty()) throw ValidationError("phantom has no lung voxels");
    const auto n_lung = static_cast<double>(lung.size());

    // Blobs until the target burden is met. Each blob must convert at least one voxel
    // within a bounded number of attempts, otherwise the geometry is saturated.
    std::uniform_int_distribution<std::size_t> pick(0, lung.size() - 1);
    std::uniform_int_distribution<int> radius(spec.blob_radius_min, spec.blob_radius_max);
    int stalled = 0;
    while (static_cast<double>(n_low) / n_lung < spec.burden && stalled < 1000) {
        const std::size_t c = pick(rng);
        const int bx = static_cast<int>(c % d.nx);
        const int by = static_cast<int>((c / d.nx) % d.ny);
        const int bz = static_cast<int>(c / (static_cast<std::size_t>(d.nx) * d.ny));
        const int r = radius(rng);
        const std::size_t before = n_low;
        for (int z = std::max(0, bz - r); z <= std::min(d.nz - 1, bz + r); ++z)
            for (int y = std::max(0, by - r); y <= std::min(d.ny - 1, by + r); ++y)
                for (int x = std::max(0, bx - r); x <= std::min(d.nx - 1, bx + r); ++x) {
                    if ((x - bx) * (x - bx) + (y - by) * (y - by) + (z - bz) * (z - bz) > r * r) continue;
                    if (!mask.at(x, y, z)) continue;
                    const int16_t old = vol.at(0, x, y, z);
                    const int16_t v = to_hu(blob(rng));
                    vol.set(0, x, y, z, v);
                    n_low += (v < kEmphysemaThresholdHu ? 1 : 0);
                    n_low -= (old < kEmphysemaThresholdHu ? 1 : 0);
                }
        stalled = n_low > before ? 0 : stalled + 1;
    }

    if (spec.channels == 2) {
        std::normal_distribution<double> noise(0.0, 10.0);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) vol.set(1, x, y, z, to_hu(vol.at(0, x, y, z) + noise(rng)));
    }

    Phantom ph{std::move(vol), std::move(mask), 0.0};
    ph.achieved_burden = emphysema_fraction(ph.volume, ph.mask);
    return ph;
}

CohortManifest generate_cohort(const CohortSpec& spec, const fs::path& out_dir) {
    if (spec.n_healthy < 0 || spec.n_diseased < 0) throw ValidationError("patient counts must be >= 0");
    for (auto [lo, hi] : {spec.healthy_burden, spec.diseased_burden})
        if (!(0.0 <= lo && lo <= hi && hi <= 1.0)) throw ValidationError("burden range must satisfy 0 <= lo <= hi <= 1");
    spec.base.validate();

    fs::create_directories(out_dir);
    CohortManifest manifest;
    manifest.base_dir = out_dir;
    std::mt19937_64 rng(spec.seed);

    auto add_class = [&](SubjectLabel label, int n, std::pair<double, double> burden_range) {
        // Stratified split: shuffle positions, first floor(0.2n) to val, next to test.
        std::vector<Split> splits(static_cast<std::size_t>(n), Split::train);
        const int n_val = n / 5;
        const int n_test = n / 5;
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < n_val; ++i) splits[order[i]] = Split::val;
        for (int i = n_val; i < n_val + n_test; ++i) splits[order[i]] = Split::test;

        std::uniform_real_distribution<double> burden(burden_range.first, burden_range.second);
        for (int i = 0; i < n; ++i) {
            std::ostringstream id;
            id << to_string(label) << '_' << std::setw(3) << std::setfill('0') << i;
            PhantomSpec ps = spec.base;
            ps.burden = burden(rng);
            ps.seed = rng();
            const Phantom ph = generate_phantom(ps);
            const fs::path vol_rel = fs::path("volumes") / (id.str() + ".vol1.json");
            const fs::path mask_rel = fs::path("masks") / (id.str() + ".vol1.json");
            write_volume(ph.volume, out_dir / vol_rel);
            write_mask(ph.mask, out_dir / mask_rel);
            manifest.patients.push_back({id.str(), vol_rel, mask_rel, label, splits[i]});
        }
    };
    add_class(SubjectLabel::healthy, spec.n_healthy, spec.healthy_burden);
    add_class(SubjectLabel::diseased, spec.n_diseased, spec.diseased_burden);
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

} // namespace lungad
