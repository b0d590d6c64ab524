#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lungad/volume.hpp"

namespace lungad {

struct Embedding {
    std::vector<float> values;
    std::string patient_id;
    uint32_t patch_index = 0;
    bool normal = false;

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

enum class Provenance { handcrafted, external };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);

// Optional per-patient metadata carried in the EMB1 header so that downstream
// commands can recover labels and splits without the manifest.
struct SubjectInfo {
    SubjectLabel label = SubjectLabel::healthy;
    Split split = Split::train;
    friend bool operator==(const SubjectInfo&, const SubjectInfo&) = default;
};

class EmbeddingSet {
public:
    EmbeddingSet() = default;
    EmbeddingSet(std::size_t d, Provenance provenance) : d_(d), provenance_(provenance) {}

    std::size_t dim() const { return d_; }
    Provenance provenance() const { return provenance_; }
    const std::vector<Embedding>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    // Rejects wrong dimension, non-finite values, and duplicate (patient_id, patch_index).
    void add(Embedding e);

    std::map<std::string, SubjectInfo>& subjects() { return subjects_; }
    const std::map<std::string, SubjectInfo>& subjects() const { return subjects_; }
    std::optional<SubjectInfo> subject(const std::string& patient_id) const;

    friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;

private:
    std::size_t d_ = 0;
    Provenance provenance_ = Provenance::handcrafted;
    std::vector<Embedding> rows_;
    std::map<std::pair<std::string, uint32_t>, std::size_t> keys_;
    std::map<std::string, SubjectInfo> subjects_;
};

inline constexpr int kHistogramBins = 16;
inline constexpr int kFeaturesPerChannel = kHistogramBins + 4;

// Per channel: 16-bin histogram over [-1024, 0] HU as mass fractions (values above 0
// land in the last bin), mean, standard deviation, fraction below -950 HU, mean
// forward-difference gradient magnitude.
Embedding handcrafted_features(const Patch& patch);

// EMB1: one JSON header line {magic, d, n, provenance[, subjects]} then n records of
// (u16 id length, utf8 id, u32 patch_index, u8 normal_flag, d x f32le).
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

} // namespace lungad
