#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lungad/volume.hpp"

namespace lungad {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

using BezierPoints = std::array<Point2, 4>;

inline constexpr BezierPoints kIdentityBezier{{{0.0, 0.0}, {1.0 / 3.0, 1.0 / 3.0}, {2.0 / 3.0, 2.0 / 3.0}, {1.0, 1.0}}};

enum class PaintMode { in, out };

struct AugmentConfig {
    BezierPoints bezier_points{{{0.0, 0.0}, {0.3, 0.6}, {0.7, 0.4}, {1.0, 1.0}}};
    double p_bezier = 0.9;

    int shuffle_blocks = 16;
    int shuffle_block_size = 4;
    double p_shuffle = 0.5;

    int paint_count = 3;
    int paint_size_min = 4;
    int paint_size_max = 12;
    double p_paint = 0.5;
    // Given that painting fires, probability of in-painting (else out-painting).
    double p_inpaint = 0.8;

    // Throws ValidationError when an invariant is violated. `patch_size` bounds the
    // block and box sizes.
    void validate(int patch_size) const;
};

nlohmann::json to_json(const AugmentConfig& cfg);
// Missing keys take defaults; unknown keys are rejected.
AugmentConfig augment_config_from_json(const nlohmann::json& j);

// Monotone x -> y lookup built from 1024 samples of a cubic Bézier curve.
class BezierLut {
public:
    static constexpr int kSamples = 1024;
    explicit BezierLut(const BezierPoints& points);
    double operator()(double x) const;

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
};

// Min-max normalises each channel, maps it through the curve, and restores the HU range.
// Constant channels are returned unchanged.
Patch bezier_intensity(const Patch& patch, const BezierPoints& points);

Patch local_pixel_shuffle(const Patch& patch, int n_blocks, int block_size, uint64_t seed);

Patch paint(const Patch& patch, PaintMode mode, int count, std::pair<int, int> size_range, uint64_t seed);

std::pair<Patch, Patch> augment_pair(const Patch& patch, const AugmentConfig& cfg, uint64_t seed);

// Pair dataset consumed by the contrastive trainer (`make-pairs` output):
//   <dir>/pairs.json  {magic:"PAIR1", channels, patch_size, n, normalization, config, records:[...]}
//   <dir>/pairs.raw   per record: view_a then view_b, each channels*p^3 f32le
// Views are stored normalised to [0, 1] via (HU + 1024) / 4095.
struct PairRecord {
    std::string patient_id;
    int patch_index = 0;
    bool normal = false;
};

class PairDatasetWriter {
public:
    PairDatasetWriter(const std::filesystem::path& dir, int patch_size, int channels, nlohmann::json provenance);
    void add(const PairRecord& rec, const Patch& view_a, const Patch& view_b);
    void finish();

private:
    std::filesystem::path dir_;
    int patch_size_;
    int channels_;
    nlohmann::json provenance_;
    std::vector<PairRecord> records_;
    std::ofstream payload_;
};

struct PairDataset {
    int patch_size = 0;
    int channels = 0;
    std::vector<PairRecord> records;
    std::vector<float> payload; // n * 2 * channels * p^3
};

PairDataset read_pair_dataset(const std::filesystem::path& dir);

float normalize_hu(float hu);

} // namespace lungad
