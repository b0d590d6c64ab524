#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "lungad/volume.hpp"

namespace lungad {

struct PhantomSpec {
    Dims dims{96, 96, 96};
    Spacing spacing{1.0, 1.0, 1.0};
    double parenchyma_mean = -850.0;
    double parenchyma_std = 40.0;
    double blob_mean = -975.0;
    double blob_std = 15.0;
    int blob_radius_min = 2;
    int blob_radius_max = 6;
    double burden = 0.0; // target fraction of lung voxels below -950 HU
    int channels = 1;
    uint64_t seed = 0;

    void validate() const;
};

struct Phantom {
    Volume volume;
    LungMask mask;
    double achieved_burden = 0.0;
};

// Ellipsoidal lung (about 40% of the grid) filled with Normal parenchyma, then seeded
// spherical low-attenuation blobs until the measured emphysema fraction reaches the
// target burden. A second channel, when requested, is channel 0 plus Normal(0, 10) HU.
Phantom generate_phantom(const PhantomSpec& spec);

struct CohortSpec {
    int n_healthy = 0;
    int n_diseased = 0;
    std::pair<double, double> healthy_burden{0.0, 0.005};
    std::pair<double, double> diseased_burden{0.08, 0.35};
    PhantomSpec base{}; // geometry and intensity template; burden and seed are per patient
    uint64_t seed = 0;
};

// Writes <out>/volumes/<id>.vol1.*, <out>/masks/<id>.vol1.* and <out>/manifest.json.
// Splits are 60/20/20 per class (val and test get floor(0.2 n) each).
CohortManifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

} // namespace lungad
