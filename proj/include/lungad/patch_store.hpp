#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lungad/volume.hpp"

namespace lungad {

// On-disk layout written by `extract`:
//   <dir>/patches.json            index (PATCH1) with per-patch metadata
//   <dir>/<patient_id>.patches.raw  i16le payload, patches back to back, channel-major z, y, x
struct PatchMeta {
    int patch_index = 0;
    Index3 origin{};
    double mask_coverage = 0.0;
    double emphysema_fraction = 0.0;
    bool normal = false;
};

struct PatientPatchIndex {
    std::string patient_id;
    SubjectLabel label = SubjectLabel::healthy;
    Split split = Split::train;
    std::string payload;
    std::vector<PatchMeta> patches;
};

class PatchStore {
public:
    static PatchStore open(const std::filesystem::path& dir);

    // Writes one patient's patches and records them in the in-memory index.
    // Call save_index() once all patients are added.
    static PatchStore create(const std::filesystem::path& dir, int patch_size, int channels,
                             nlohmann::json provenance);
    void add_patient(const std::string& patient_id, SubjectLabel label, Split split,
                     const std::vector<Patch>& patches);
    void save_index() const;

    int patch_size() const { return patch_size_; }
    int channels() const { return channels_; }
    const nlohmann::json& provenance() const { return provenance_; }
    const std::vector<PatientPatchIndex>& patients() const { return patients_; }
    std::size_t total_patches() const;

    // Loads the patches of patients()[i] with metadata filled in.
    std::vector<Patch> load_patient(std::size_t i) const;

private:
    std::filesystem::path dir_;
    int patch_size_ = 0;
    int channels_ = 0;
    nlohmann::json provenance_;
    std::vector<PatientPatchIndex> patients_;
};

} // namespace lungad
