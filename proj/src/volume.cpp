#include "lungad/volume.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_dims(const Dims& d) {
    if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw ValidationError("dims must be >= 1");
}

fs::path sidecar_path(const fs::path& path) {
    const std::string s = path.string();
    if (s.size() >= 5 && s.ends_with(".json")) return path;
    return fs::path(s + ".vol1.json");
}

struct Sidecar {
    Dims dims;
    Spacing spacing;
    int channels = 1;
    std::string dtype;
    fs::path payload;
};

Sidecar read_sidecar(const fs::path& path) {
    const fs::path side = sidecar_path(path);
    json j;
    try {
        const auto buf = detail::read_file(side);
        j = json::parse(buf.begin(), buf.end());
    } catch (const json::exception& e) {
        throw ValidationError("corrupt sidecar " + side.string() + ": " + e.what());
    }
    Sidecar sc;
    try {
        const auto d = j.at("dims").get<std::vector<int>>();
        const auto s = j.at("spacing").get<std::vector<double>>();
        if (d.size() != 3 || s.size() != 3) throw ValidationError("dims and spacing need 3 entries");
        sc.dims = {d[0], d[1], d[2]};
        sc.spacing = {s[0], s[1], s[2]};
        sc.channels = j.value("channels", 1);
        sc.dtype = j.at("dtype").get<std::string>();
        sc.payload = side.parent_path() / j.at("payload").get<std::string>();
    } catch (const json::exception& e) {
        throw ValidationError("corrupt sidecar " + side.string() + ": " + e.what());
    }
    check_dims(sc.dims);
    if (!(sc.spacing.sx > 0 && sc.spacing.sy > 0 && sc.spacing.sz > 0))
        throw ValidationError("non-positive spacing in " + side.string());
    if (sc.channels < 1) throw ValidationError("channels must be >= 1");
    return sc;
}

void write_sidecar(const fs::path& path, const Dims& d, const Spacing& s, int channels, const std::string& dtype,
                   const std::string& payload_name) {
    json j;
    j["dims"] = {d.nx, d.ny, d.nz};
    j["spacing"] = {s.sx, s.sy, s.sz};
    j["channels"] = channels;
    j["dtype"] = dtype;
    j["payload"] = payload_name;
    auto out = detail::open_for_write(path);
    out << j.dump(2) << '\n';
}

// <dir>/<name>.vol1.json -> ("<dir>/<name>.vol1.json", "<name>.vol1.raw")
std::pair<fs::path, std::string> output_names(const fs::path& path) {
    const fs::path side = sidecar_path(path);
    std::string name = side.filename().string();
    name = name.substr(0, name.size() - 5); // strip .json
    if (!name.ends_with(".vol1")) name += ".vol1";
    return {side, name + ".raw"};
}

} // namespace

Volume::Volume(Dims dims, Spacing spacing, int channels, std::vector<int16_t> hu)
    : dims_(dims), spacing_(spacing), channels_(channels), hu_(std::move(hu)) {
    check_dims(dims_);
    if (!(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0)) throw ValidationError("non-positive spacing");
    if (channels_ < 1) throw ValidationError("channels must be >= 1");
    if (hu_.size() != dims_.voxels() * static_cast<std::size_t>(channels_))
        throw ValidationError("payload size mismatch");
    for (auto& v : hu_) v = std::clamp(v, kMinHu, kMaxHu);
}

Volume::Volume(Dims dims, Spacing spacing, int channels, int16_t fill)
    : Volume(dims, spacing, channels,
             std::vector<int16_t>(dims.voxels() * static_cast<std::size_t>(std::max(channels, 0)), fill)) {}

LungMask::LungMask(Dims dims, std::vector<uint8_t> labels) : dims_(dims), labels_(std::move(labels)) {
    check_dims(dims_);
    if (labels_.size() != dims_.voxels()) throw ValidationError("payload size mismatch");
    for (auto v : labels_)
        if (v > 1) throw ValidationError("mask values must be 0 or 1");
}

LungMask::LungMask(Dims dims, uint8_t fill) : LungMask(dims, std::vector<uint8_t>(dims.voxels(), fill)) {}

std::size_t LungMask::lung_voxels() const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), uint8_t{1}));
}

std::string to_string(SubjectLabel label) { return label == SubjectLabel::healthy ? "healthy" : "diseased"; }

std::string to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

SubjectLabel parse_subject_label(const std::string& s) {
    if (s == "healthy") return SubjectLabel::healthy;
    if (s == "diseased") return SubjectLabel::diseased;
    throw ValidationError("unknown subject label '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

Volume load_volume(const fs::path& path) {
    const Sidecar sc = read_sidecar(path);
    if (sc.dtype != "i16le") throw ValidationError("volume dtype must be i16le, got " + sc.dtype);
    const auto buf = detail::read_file(sc.payload);
    const std::size_t n = sc.dims.voxels() * static_cast<std::size_t>(sc.channels);
    if (buf.size() != n * sizeof(int16_t)) throw ValidationError("payload size mismatch");
    std::vector<int16_t> hu(n);
    std::memcpy(hu.data(), buf.data(), buf.size());
    return Volume(sc.dims, sc.spacing, sc.channels, std::move(hu));
}

LungMask load_mask(const fs::path& path) {
    const Sidecar sc = read_sidecar(path);
    if (sc.dtype != "u8") throw ValidationError("mask dtype must be u8, got " + sc.dtype);
    if (sc.channels != 1) throw ValidationError("mask must have one channel");
    const auto buf = detail::read_file(sc.payload);
    if (buf.size() != sc.dims.voxels()) throw ValidationError("payload size mismatch");
    std::vector<uint8_t> labels(buf.begin(), buf.end());
    return LungMask(sc.dims, std::move(labels));
}

void write_volume(const Volume& vol, const fs::path& path) {
    const auto [side, raw] = output_names(path);
    write_sidecar(side, vol.dims(), vol.spacing(), vol.channels(), "i16le", raw);
    auto out = detail::open_for_write(side.parent_path() / raw);
    detail::put_span(out, vol.data());
    if (!out) throw RuntimeError("write failed: " + raw);
}

void write_mask(const LungMask& mask, const fs::path& path) {
    const auto [side, raw] = output_names(path);
    write_sidecar(side, mask.dims(), Spacing{}, 1, "u8", raw);
    auto out = detail::open_for_write(side.parent_path() / raw);
    detail::put_span(out, mask.data());
    if (!out) throw RuntimeError("write failed: " + raw);
}

CohortManifest load_manifest(const fs::path& path) {
    json j;
    try {
        const auto buf = detail::read_file(path);
        j = json::parse(buf.begin(), buf.end());
    } catch (const json::exception& e) {
        throw ValidationError("corrupt manifest " + path.string() + ": " + e.what());
    }
    CohortManifest m;
    m.base_dir = path.parent_path();
    std::vector<std::string> seen;
    try {
        for (const auto& p : j.at("patients")) {
            ManifestEntry e;
            e.patient_id = p.at("patient_id").get<std::string>();
            e.volume_path = p.at("volume_path").get<std::string>();
            e.mask_path = p.at("mask_path").get<std::string>();
            e.label = parse_subject_label(p.at("subject_label").get<std::string>());
            e.split = parse_split(p.at("split").get<std::string>());
            if (e.patient_id.empty()) throw ValidationError("empty patient_id");
            if (std::find(seen.begin(), seen.end(), e.patient_id) != seen.end())
                throw ValidationError("duplicate patient_id '" + e.patient_id + "'");
            seen.push_back(e.patient_id);
            m.patients.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw ValidationError("corrupt manifest " + path.string() + ": " + e.what());
    }
    for (const auto& e : m.patients) {
        if (!fs::exists(sidecar_path(m.resolve(e.volume_path))))
            throw ValidationError("unresolvable volume_path for " + e.patient_id);
        if (!fs::exists(sidecar_path(m.resolve(e.mask_path))))
            throw ValidationError("unresolvable mask_path for " + e.patient_id);
    }
    return m;
}

void write_manifest(const CohortManifest& manifest, const fs::path& path) {
    json arr = json::array();
    for (const auto& e : manifest.patients) {
        arr.push_back({{"patient_id", e.patient_id},
                       {"volume_path", e.volume_path.generic_string()},
                       {"mask_path", e.mask_path.generic_string()},
                       {"subject_label", to_string(e.label)},
                       {"split", to_string(e.split)}});
    }
    auto out = detail::open_for_write(path);
    out << json{{"patients", arr}}.dump(2) << '\n';
}

double emphysema_fraction(const Volume& vol, const LungMask& mask, double threshold_hu) {
    if (vol.dims() != mask.dims()) throw ValidationError("mask dims differ from volume dims");
    const auto hu = vol.channel(0);
    const auto lung = mask.data();
    std::size_t n_lung = 0;
    std::size_t n_low = 0;
    for (std::size_t i = 0; i < lung.size(); ++i) {
        if (!lung[i]) continue;
        ++n_lung;
        if (hu[i] < threshold_hu) ++n_low;
    }
    if (n_lung == 0) throw ValidationError("no lung voxels");
    return static_cast<double>(n_low) / static_cast<double>(n_lung);
}

std::vector<int> grid_starts(int dim, int patch_size, double overlap) {
    if (patch_size < 1) throw ValidationError("patch_size must be >= 1");
    if (patch_size > dim) throw ValidationError("patch_size exceeds volume dimension");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("overlap must be in [0, 1)");
    const int stride = std::max(1, static_cast<int>(std::floor(patch_size * (1.0 - overlap))));
    const int last = dim - patch_size;
    std::vector<int> starts;
    for (int s = 0; s <= last; s += stride) starts.push_back(s);
    if (starts.back() != last) starts.push_back(last);
    return starts;
}

std::vector<Patch> extract_patch_grid(const Volume& vol, const LungMask& mask, const GridConfig& cfg,
                                      const std::string& patient_id) {
    if (vol.dims() != mask.dims()) throw ValidationError("mask dims differ from volume dims");
    if (!(cfg.min_lung_coverage >= 0.0 && cfg.min_lung_coverage <= 1.0))
        throw ValidationError("min_lung_coverage must be in [0, 1]");
    const Dims& d = vol.dims();
    const int p = cfg.patch_size;
    if (p > d.nx || p > d.ny || p > d.nz) throw ValidationError("patch_size exceeds volume dimension");
    const auto xs = grid_starts(d.nx, p, cfg.overlap);
    const auto ys = grid_starts(d.ny, p, cfg.overlap);
    const auto zs = grid_starts(d.nz, p, cfg.overlap);
    const double per_patch = static_cast<double>(p) * p * p;

    std::vector<Patch> out;
    for (int z0 : zs) {
        for (int y0 : ys) {
            for (int x0 : xs) {
                std::size_t n_lung = 0;
                std::size_t n_low = 0;
                for (int z = z0; z < z0 + p; ++z)
                    for (int y = y0; y < y0 + p; ++y)
                        for (int x = x0; x < x0 + p; ++x) {
                            if (!mask.at(x, y, z)) continue;
                            ++n_lung;
                            if (vol.at(0, x, y, z) < kEmphysemaThresholdHu) ++n_low;
                        }
                const double coverage = static_cast<double>(n_lung) / per_patch;
                if (coverage < cfg.min_lung_coverage) continue;

                Patch patch;
                patch.size = p;
                patch.channels = vol.channels();
                patch.origin = {x0, y0, z0};
                patch.mask_coverage = coverage;
                // Lung-free windows (only reachable with min coverage 0) carry no emphysema.
                patch.emphysema_fraction = n_lung ? static_cast<double>(n_low) / static_cast<double>(n_lung) : 0.0;
                patch.patient_id = patient_id;
                patch.data.resize(patch.voxels_per_channel() * static_cast<std::size_t>(patch.channels));
                for (int c = 0; c < patch.channels; ++c)
                    for (int z = 0; z < p; ++z)
                        for (int y = 0; y < p; ++y)
                            for (int x = 0; x < p; ++x)
                                patch.data[patch.index(c, x, y, z)] = vol.at(c, x0 + x, y0 + y, z0 + z);
                out.push_back(std::move(patch));
            }
        }
    }
    return out;
}

bool label_patch_normality(const Patch& patch, SubjectLabel subject) {
    return subject == SubjectLabel::healthy && patch.emphysema_fraction < kNormalPatchMaxEmphysema;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_n, uint64_t seed) {
    if (max_n < 1) throw ValidationError("max_n must be >= 1");
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (n <= max_n) return all;
    std::vector<std::size_t> picked;
    picked.reserve(max_n);
    std::mt19937_64 rng(seed);
    // std::sample over forward iterators is selection sampling: stable and uniform.
    std::sample(all.begin(), all.end(), std::back_inserter(picked), max_n, rng);
    return picked;
}

std::vector<Patch> subsample_patches(std::vector<Patch> patches, std::size_t max_n, uint64_t seed) {
    const auto keep = subsample_indices(patches.size(), max_n, seed);
    if (keep.size() == patches.size()) return patches;
    std::vector<Patch> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(std::move(patches[i]));
    return out;
}

} // namespace lungad
