#include "lungad/patch_store.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr const char* kIndexName = "patches.json";
constexpr const char* kMagic = "PATCH1";
} // namespace

PatchStore PatchStore::create(const fs::path& dir, int patch_size, int channels, json provenance) {
    if (patch_size < 1 || channels < 1) throw ValidationError("invalid patch store geometry");
    fs::create_directories(dir);
    PatchStore s;
    s.dir_ = dir;
    s.patch_size_ = patch_size;
    s.channels_ = channels;
    s.provenance_ = std::move(provenance);
    return s;
}

void PatchStore::add_patient(const std::string& patient_id, SubjectLabel label, Split split,
                             const std::vector<Patch>& patches) {
    PatientPatchIndex idx;
    idx.patient_id = patient_id;
    idx.label = label;
    idx.split = split;
    idx.payload = patient_id + ".patches.raw";
    auto out = detail::open_for_write(dir_ / idx.payload);
    std::vector<int16_t> buf;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const Patch& p = patches[i];
        if (p.size != patch_size_ || p.channels != channels_) throw ValidationError("patch geometry mismatch");
        buf.resize(p.data.size());
        for (std::size_t v = 0; v < p.data.size(); ++v) buf[v] = static_cast<int16_t>(std::lround(p.data[v]));
        detail::put_span(out, std::span<const int16_t>(buf));
        idx.patches.push_back({static_cast<int>(i), p.origin, p.mask_coverage, p.emphysema_fraction,
                               label_patch_normality(p, label)});
    }
    if (!out) throw RuntimeError("write failed: " + idx.payload);
    patients_.push_back(std::move(idx));
}

void PatchStore::save_index() const {
    json pats = json::array();
    for (const auto& p : patients_) {
        json rows = json::array();
        for (const auto& m : p.patches) {
            rows.push_back({{"patch_index", m.patch_index},
                            {"origin", {m.origin.x, m.origin.y, m.origin.z}},
                            {"mask_coverage", m.mask_coverage},
                            {"emphysema_fraction", m.emphysema_fraction},
                            {"normal", m.normal}});
        }
        pats.push_back({{"patient_id", p.patient_id},
                        {"subject_label", to_string(p.label)},
                        {"split", to_string(p.split)},
                        {"payload", p.payload},
                        {"patches", rows}});
    }
    json j{{"magic", kMagic},
           {"patch_size", patch_size_},
           {"channels", channels_},
           {"provenance", provenance_},
           {"patients", pats}};
    auto out = detail::open_for_write(dir_ / kIndexName);
    out << j.dump(1) << '\n';
}

PatchStore PatchStore::open(const fs::path& dir) {
    const auto buf = detail::read_file(dir / kIndexName);
    PatchStore s;
    s.dir_ = dir;
    try {
        const json j = json::parse(buf.begin(), buf.end());
        if (j.at("magic").get<std::string>() != kMagic) throw ValidationError("not a PATCH1 index");
        s.patch_size_ = j.at("patch_size").get<int>();
        s.channels_ = j.at("channels").get<int>();
        s.provenance_ = j.value("provenance", json::object());
        for (const auto& p : j.at("patients")) {
            PatientPatchIndex idx;
            idx.patient_id = p.at("patient_id").get<std::string>();
            idx.label = parse_subject_label(p.at("subject_label").get<std::string>());
            idx.split = parse_split(p.at("split").get<std::string>());
            idx.payload = p.at("payload").get<std::string>();
            for (const auto& m : p.at("patches")) {
                const auto o = m.at("origin").get<std::vector<int>>();
                if (o.size() != 3) throw ValidationError("origin needs 3 entries");
                idx.patches.push_back({m.at("patch_index").get<int>(),
                                       {o[0], o[1], o[2]},
                                       m.at("mask_coverage").get<double>(),
                                       m.at("emphysema_fraction").get<double>(),
                                       m.at("normal").get<bool>()});
            }
            s.patients_.push_back(std::move(idx));
        }
    } catch (const json::exception& e) {
        throw ValidationError("corrupt patch index: " + std::string(e.what()));
    }
    if (s.patch_size_ < 1 || s.channels_ < 1) throw ValidationError("invalid patch store geometry");
    return s;
}

std::size_t PatchStore::total_patches() const {
    std::size_t n = 0;
    for (const auto& p : patients_) n += p.patches.size();
    return n;
}

std::vector<Patch> PatchStore::load_patient(std::size_t i) const {
    const auto& idx = patients_.at(i);
    const auto buf = detail::read_file(dir_ / idx.payload);
    const std::size_t per_patch = static_cast<std::size_t>(patch_size_) * patch_size_ * patch_size_ * channels_;
    if (buf.size() != per_patch * idx.patches.size() * sizeof(int16_t))
        throw ValidationError("payload size mismatch");
    detail::ByteReader rd(buf);
    std::vector<int16_t> tmp(per_patch);
    std::vector<Patch> out;
    out.reserve(idx.patches.size());
    for (const auto& m : idx.patches) {
        rd.get_span(std::span<int16_t>(tmp));
        Patch p;
        p.size = patch_size_;
        p.channels = channels_;
        p.data.assign(tmp.begin(), tmp.end());
        p.origin = m.origin;
        p.mask_coverage = m.mask_coverage;
        p.emphysema_fraction = m.emphysema_fraction;
        p.patient_id = idx.patient_id;
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace lungad
