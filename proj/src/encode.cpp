#include "lungad/encode.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

using nlohmann::json;

std::string to_string(Provenance p) { return p == Provenance::handcrafted ? "handcrafted" : "external"; }

Provenance parse_provenance(const std::string& s) {
    if (s == "handcrafted") return Provenance::handcrafted;
    if (s == "external") return Provenance::external;
    throw ValidationError("unknown provenance '" + s + "'");
}

void EmbeddingSet::add(Embedding e) {
    if (e.values.size() != d_) throw ValidationError("embedding dimension mismatch");
    if (!std::all_of(e.values.begin(), e.values.end(), [](float v) { return std::isfinite(v); }))
        throw ValidationError("non-finite embedding value");
    if (e.patient_id.size() > 0xFFFF) throw ValidationError("patient_id too long");
    auto key = std::make_pair(e.patient_id, e.patch_index);
    if (keys_.contains(key))
        throw ValidationError("duplicate (patient_id, patch_index): (" + e.patient_id + ", " +
                              std::to_string(e.patch_index) + ")");
    keys_.emplace(std::move(key), rows_.size());
    rows_.push_back(std::move(e));
}

std::optional<SubjectInfo> EmbeddingSet::subject(const std::string& patient_id) const {
    auto it = subjects_.find(patient_id);
    if (it == subjects_.end()) return std::nullopt;
    return it->second;
}

Embedding handcrafted_features(const Patch& patch) {
    if (patch.channels < 1) throw ValidationError("patch has no channels");
    Embedding e;
    e.patient_id = patch.patient_id;
    e.values.reserve(static_cast<std::size_t>(kFeaturesPerChannel) * patch.channels);
    const int p = patch.size;
    const double n = static_cast<double>(patch.voxels_per_channel());
    constexpr double lo = -1024.0;
    constexpr double bin_width = 1024.0 / kHistogramBins;

    for (int c = 0; c < patch.channels; ++c) {
        const auto ch = patch.channel(c);
        std::array<double, kHistogramBins> hist{};
        double sum = 0.0;
        double low = 0.0;
        for (float v : ch) {
            const int bin = std::clamp(static_cast<int>(std::floor((v - lo) / bin_width)), 0, kHistogramBins - 1);
            hist[bin] += 1.0;
            sum += v;
            if (v < kEmphysemaThresholdHu) low += 1.0;
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (float v : ch) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / n);

        // Forward differences; the last slab on each axis uses a zero difference.
        double grad = 0.0;
        for (int z = 0; z < p; ++z)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) {
                    const double v = ch[patch.index(0, x, y, z)];
                    const double dx = x + 1 < p ? ch[patch.index(0, x + 1, y, z)] - v : 0.0;
                    const double dy = y + 1 < p ? ch[patch.index(0, x, y + 1, z)] - v : 0.0;
                    const double dz = z + 1 < p ? ch[patch.index(0, x, y, z + 1)] - v : 0.0;
                    grad += std::sqrt(dx * dx + dy * dy + dz * dz);
                }

        for (double h : hist) e.values.push_back(static_cast<float>(h / n));
        e.values.push_back(static_cast<float>(mean));
        e.values.push_back(static_cast<float>(sd));
        e.values.push_back(static_cast<float>(low / n));
        e.values.push_back(static_cast<float>(grad / n));
    }
    return e;
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    json header{{"magic", "EMB1"}, {"d", set.dim()}, {"n", set.size()}, {"provenance", to_string(set.provenance())}};
    if (!set.subjects().empty()) {
        json subj = json::object();
        for (const auto& [id, info] : set.subjects())
            subj[id] = {{"subject_label", to_string(info.label)}, {"split", to_string(info.split)}};
        header["subjects"] = subj;
    }
    auto out = detail::open_for_write(path);
    out << header.dump() << '\n';
    for (const auto& e : set.rows()) {
        detail::put(out, static_cast<uint16_t>(e.patient_id.size()));
        out.write(e.patient_id.data(), static_cast<std::streamsize>(e.patient_id.size()));
        detail::put(out, e.patch_index);
        detail::put(out, static_cast<uint8_t>(e.normal ? 1 : 0));
        detail::put_span(out, std::span<const float>(e.values));
    }
    if (!out) throw RuntimeError("write failed: " + path.string());
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
    const auto buf = detail::read_file(path);
    const auto [header_text, payload] = detail::split_header_line(buf);
    std::size_t d = 0;
    std::size_t n = 0;
    Provenance prov{};
    json header;
    try {
        header = json::parse(header_text);
        if (header.at("magic").get<std::string>() != "EMB1") throw ValidationError("not an EMB1 file");
        d = header.at("d").get<std::size_t>();
        n = header.at("n").get<std::size_t>();
        prov = parse_provenance(header.at("provenance").get<std::string>());
    } catch (const json::exception& e) {
        throw ValidationError("corrupt EMB1 header: " + std::string(e.what()));
    }
    EmbeddingSet set(d, prov);
    if (header.contains("subjects")) {
        try {
            for (const auto& [id, info] : header.at("subjects").items())
                set.subjects()[id] = {parse_subject_label(info.at("subject_label").get<std::string>()),
                                      parse_split(info.at("split").get<std::string>())};
        } catch (const json::exception& e) {
            throw ValidationError("corrupt EMB1 subjects: " + std::string(e.what()));
        }
    }
    detail::ByteReader rd(payload);
    for (std::size_t i = 0; i < n; ++i) {
        Embedding e;
        const auto len = rd.get<uint16_t>();
        e.patient_id = rd.get_string(len);
        e.patch_index = rd.get<uint32_t>();
        const auto flag = rd.get<uint8_t>();
        if (flag > 1) throw ValidationError("normal_flag must be 0 or 1");
        e.normal = flag == 1;
        e.values.resize(d);
        rd.get_span(std::span<float>(e.values));
        set.add(std::move(e));
    }
    if (rd.remaining() != 0) throw ValidationError("payload size mismatch");
    return set;
}

} // namespace lungad
