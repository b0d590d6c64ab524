#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lungad {

inline constexpr int16_t kMinHu = -1024;
inline constexpr int16_t kMaxHu = 3071;
inline constexpr double kEmphysemaThresholdHu = -950.0;
inline constexpr double kNormalPatchMaxEmphysema = 0.01;

struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;
    friend bool operator==(const Index3&, const Index3&) = default;
};

// Multi-channel CT grid in Hounsfield units. Storage is channel-major, then z, y, x
// (x fastest), the same order as the VOL1 payload.
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, Spacing spacing, int channels, std::vector<int16_t> hu);
    Volume(Dims dims, Spacing spacing, int channels, int16_t fill);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    int channels() const { return channels_; }

    std::size_t index(int c, int x, int y, int z) const {
        return ((static_cast<std::size_t>(c) * dims_.nz + z) * dims_.ny + y) * dims_.nx + x;
    }
    int16_t at(int c, int x, int y, int z) const { return hu_[index(c, x, y, z)]; }
    void set(int c, int x, int y, int z, int16_t v) { hu_[index(c, x, y, z)] = v; }

    std::span<const int16_t> data() const { return hu_; }
    std::span<int16_t> data() { return hu_; }
    std::span<const int16_t> channel(int c) const {
        return std::span<const int16_t>(hu_).subspan(static_cast<std::size_t>(c) * dims_.voxels(), dims_.voxels());
    }

private:
    Dims dims_{};
    Spacing spacing_{};
    int channels_ = 0;
    std::vector<int16_t> hu_;
};

class LungMask {
public:
    LungMask() = default;
    LungMask(Dims dims, std::vector<uint8_t> labels);
    LungMask(Dims dims, uint8_t fill);

    const Dims& dims() const { return dims_; }
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
    }
    bool at(int x, int y, int z) const { return labels_[index(x, y, z)] != 0; }
    void set(int x, int y, int z, bool lung) { labels_[index(x, y, z)] = lung ? 1 : 0; }
    std::span<const uint8_t> data() const { return labels_; }
    std::size_t lung_voxels() const;

private:
    Dims dims_{};
    std::vector<uint8_t> labels_;
};

// A cubic crop of `size` voxels per axis. Values are HU stored as float so that
// intensity augmentations can produce non-integer output.
struct Patch {
    int size = 0;
    int channels = 0;
    std::vector<float> data; // channel-major, z, y, x
    Index3 origin{};
    double mask_coverage = 0.0;
    double emphysema_fraction = 0.0;
    std::string patient_id;

    std::size_t voxels_per_channel() const {
        return static_cast<std::size_t>(size) * size * size;
    }
    std::size_t index(int c, int x, int y, int z) const {
        return ((static_cast<std::size_t>(c) * size + z) * size + y) * size + x;
    }
    std::span<const float> channel(int c) const {
        return std::span<const float>(data).subspan(c * voxels_per_channel(), voxels_per_channel());
    }
    std::span<float> channel(int c) {
        return std::span<float>(data).subspan(c * voxels_per_channel(), voxels_per_channel());
    }
};

enum class SubjectLabel { healthy, diseased };
enum class Split { train, val, test };

std::string to_string(SubjectLabel label);
std::string to_string(Split split);
SubjectLabel parse_subject_label(const std::string& s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string patient_id;
    std::filesystem::path volume_path; // as written in the manifest
    std::filesystem::path mask_path;
    SubjectLabel label = SubjectLabel::healthy;
    Split split = Split::train;
};

struct CohortManifest {
    std::vector<ManifestEntry> patients;
    // Directory relative paths are resolved against; empty means the working directory.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
};

// VOL1 I/O. `path` may name the sidecar (`<name>.vol1.json`) or the stem `<name>`.
Volume load_volume(const std::filesystem::path& path);
LungMask load_mask(const std::filesystem::path& path);
void write_volume(const Volume& vol, const std::filesystem::path& path);
void write_mask(const LungMask& mask, const std::filesystem::path& path);

CohortManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path);

// Fraction of lung voxels strictly below `threshold_hu`, measured on channel 0.
double emphysema_fraction(const Volume& vol, const LungMask& mask, double threshold_hu = kEmphysemaThresholdHu);

struct GridConfig {
    int patch_size = 32;
    double overlap = 0.0;
    double min_lung_coverage = 0.5;
};

// Window starts along one axis: stride floor(p * (1 - overlap)), last start clamped
// to dim - p, duplicates removed.
std::vector<int> grid_starts(int dim, int patch_size, double overlap);

std::vector<Patch> extract_patch_grid(const Volume& vol, const LungMask& mask, const GridConfig& cfg,
                                      const std::string& patient_id = {});

bool label_patch_normality(const Patch& patch, SubjectLabel subject);

std::vector<Patch> subsample_patches(std::vector<Patch> patches, std::size_t max_n, uint64_t seed);

// Index form of subsample_patches: which of `n` items survive, ascending.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_n, uint64_t seed);

} // namespace lungad
