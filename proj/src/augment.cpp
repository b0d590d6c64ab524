#include "lungad/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must be in [0, 1]");
}

bool on_diagonal(const BezierPoints& pts) {
    return std::all_of(pts.begin(), pts.end(), [](const Point2& p) { return p.x == p.y; });
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

struct Box {
    int x0, y0, z0, sx, sy, sz;
    bool contains(int x, int y, int z) const {
        return x >= x0 && x < x0 + sx && y >= y0 && y < y0 + sy && z >= z0 && z < z0 + sz;
    }
};

Box random_box(std::mt19937_64& rng, int patch_size, int smin, int smax) {
    Box b{};
    b.sx = uniform_int(rng, smin, smax);
    b.sy = uniform_int(rng, smin, smax);
    b.sz = uniform_int(rng, smin, smax);
    b.x0 = uniform_int(rng, 0, patch_size - b.sx);
    b.y0 = uniform_int(rng, 0, patch_size - b.sy);
    b.z0 = uniform_int(rng, 0, patch_size - b.sz);
    return b;
}

std::pair<float, float> channel_range(std::span<const float> ch) {
    const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
    return {*lo, *hi};
}

} // namespace

void AugmentConfig::validate(int patch_size) const {
    if (bezier_points[0].x != 0.0 || bezier_points[0].y != 0.0 || bezier_points[3].x != 1.0 ||
        bezier_points[3].y != 1.0)
        throw ValidationError("bezier endpoints must be (0,0) and (1,1)");
    for (const auto& p : bezier_points)
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
            throw ValidationError("bezier control points must lie in [0,1]^2");
    check_prob(p_bezier, "p_bezier");
    check_prob(p_shuffle, "p_shuffle");
    check_prob(p_paint, "p_paint");
    check_prob(p_inpaint, "p_inpaint");
    if (shuffle_blocks < 0 || paint_count < 0) throw ValidationError("counts must be >= 0");
    if (shuffle_block_size < 1 || shuffle_block_size > patch_size)
        throw ValidationError("shuffle_block_size must be in [1, patch_size]");
    if (paint_size_min < 1 || paint_size_min > paint_size_max || paint_size_max > patch_size)
        throw ValidationError("paint size range must satisfy 1 <= min <= max <= patch_size");
}

json to_json(const AugmentConfig& cfg) {
    json pts = json::array();
    for (const auto& p : cfg.bezier_points) pts.push_back({p.x, p.y});
    return {{"bezier_points", pts},
            {"p_bezier", cfg.p_bezier},
            {"shuffle_blocks", cfg.shuffle_blocks},
            {"shuffle_block_size", cfg.shuffle_block_size},
            {"p_shuffle", cfg.p_shuffle},
            {"paint_count", cfg.paint_count},
            {"paint_size_range", {cfg.paint_size_min, cfg.paint_size_max}},
            {"p_paint", cfg.p_paint},
            {"p_inpaint", cfg.p_inpaint}};
}

AugmentConfig augment_config_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("augment config must be a JSON object");
    static const std::vector<std::string> known{"bezier_points", "p_bezier",   "shuffle_blocks",
                                                "shuffle_block_size", "p_shuffle", "paint_count",
                                                "paint_size_range", "p_paint", "p_inpaint"};
    for (const auto& [k, _] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ValidationError("unknown augment config key '" + k + "'");
    AugmentConfig cfg;
    try {
        if (j.contains("bezier_points")) {
            const auto pts = j.at("bezier_points").get<std::vector<std::vector<double>>>();
            if (pts.size() != 4) throw ValidationError("bezier_points needs 4 points");
            for (int i = 0; i < 4; ++i) {
                if (pts[i].size() != 2) throw ValidationError("bezier point needs 2 coordinates");
                cfg.bezier_points[i] = {pts[i][0], pts[i][1]};
            }
        }
        cfg.p_bezier = j.value("p_bezier", cfg.p_bezier);
        cfg.shuffle_blocks = j.value("shuffle_blocks", cfg.shuffle_blocks);
        cfg.shuffle_block_size = j.value("shuffle_block_size", cfg.shuffle_block_size);
        cfg.p_shuffle = j.value("p_shuffle", cfg.p_shuffle);
        cfg.paint_count = j.value("paint_count", cfg.paint_count);
        if (j.contains("paint_size_range")) {
            const auto r = j.at("paint_size_range").get<std::vector<int>>();
            if (r.size() != 2) throw ValidationError("paint_size_range needs 2 entries");
            cfg.paint_size_min = r[0];
            cfg.paint_size_max = r[1];
        }
        cfg.p_paint = j.value("p_paint", cfg.p_paint);
        cfg.p_inpaint = j.value("p_inpaint", cfg.p_inpaint);
    } catch (const json::exception& e) {
        throw ValidationError("bad augment config: " + std::string(e.what()));
    }
    return cfg;
}

BezierLut::BezierLut(const BezierPoints& p) : xs_(kSamples), ys_(kSamples) {
    for (int i = 0; i < kSamples; ++i) {
        const double t = static_cast<double>(i) / (kSamples - 1);
        const double u = 1.0 - t;
        const double b0 = u * u * u;
        const double b1 = 3.0 * u * u * t;
        const double b2 = 3.0 * u * t * t;
        const double b3 = t * t * t;
        xs_[i] = b0 * p[0].x + b1 * p[1].x + b2 * p[2].x + b3 * p[3].x;
        ys_[i] = b0 * p[0].y + b1 * p[1].y + b2 * p[2].y + b3 * p[3].y;
    }
    // x(t) is non-decreasing for control points in [0,1]; enforce it against rounding.
    for (int i = 1; i < kSamples; ++i) xs_[i] = std::max(xs_[i], xs_[i - 1]);
}

double BezierLut::operator()(double x) const {
    if (x <= xs_.front()) return ys_.front();
    if (x >= xs_.back()) return ys_.back();
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    const auto hi = static_cast<std::size_t>(it - xs_.begin());
    const auto lo = hi - 1;
    const double dx = xs_[hi] - xs_[lo];
    if (dx <= 0.0) return ys_[lo];
    const double w = (x - xs_[lo]) / dx;
    return ys_[lo] + w * (ys_[hi] - ys_[lo]);
}

Patch bezier_intensity(const Patch& patch, const BezierPoints& points) {
    Patch out = patch;
    if (on_diagonal(points)) return out;
    const BezierLut lut(points);
    for (int c = 0; c < patch.channels; ++c) {
        auto ch = out.channel(c);
        const auto [lo, hi] = channel_range(ch);
        if (!(hi > lo)) continue;
        const double range = static_cast<double>(hi) - lo;
        for (auto& v : ch) v = static_cast<float>(lo + lut((v - lo) / range) * range);
    }
    return out;
}

Patch local_pixel_shuffle(const Patch& patch, int n_blocks, int block_size, uint64_t seed) {
    if (block_size < 1 || block_size > patch.size) throw ValidationError("block_size must be in [1, patch size]");
    Patch out = patch;
    if (block_size == 1) return out;
    std::mt19937_64 rng(seed);
    const int p = patch.size;
    std::vector<std::size_t> pos;
    std::vector<std::size_t> perm;
    std::vector<float> tmp;
    for (int b = 0; b < n_blocks; ++b) {
        const int x0 = uniform_int(rng, 0, p - block_size);
        const int y0 = uniform_int(rng, 0, p - block_size);
        const int z0 = uniform_int(rng, 0, p - block_size);
        pos.clear();
        for (int z = z0; z < z0 + block_size; ++z)
            for (int y = y0; y < y0 + block_size; ++y)
                for (int x = x0; x < x0 + block_size; ++x) pos.push_back(out.index(0, x, y, z));
        perm.resize(pos.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        tmp.resize(pos.size());
        // One permutation for all channels keeps co-registered channels aligned.
        for (int c = 0; c < out.channels; ++c) {
            auto ch = out.channel(c);
            for (std::size_t i = 0; i < pos.size(); ++i) tmp[i] = ch[pos[perm[i]]];
            for (std::size_t i = 0; i < pos.size(); ++i) ch[pos[i]] = tmp[i];
        }
    }
    return out;
}

Patch paint(const Patch& patch, PaintMode mode, int count, std::pair<int, int> size_range, uint64_t seed) {
    const auto [smin, smax] = size_range;
    if (smin < 1 || smin > smax || smax > patch.size) throw ValidationError("paint size range outside patch bounds");
    if (count < 0) throw ValidationError("paint count must be >= 0");
    Patch out = patch;
    std::mt19937_64 rng(seed);
    std::vector<Box> boxes;
    for (int i = 0; i < count; ++i) boxes.push_back(random_box(rng, patch.size, smin, smax));

    std::vector<std::pair<float, float>> ranges;
    for (int c = 0; c < patch.channels; ++c) ranges.push_back(channel_range(patch.channel(c)));
    auto noise = [&](int c) {
        const auto [lo, hi] = ranges[c];
        return static_cast<float>(lo + (static_cast<double>(hi) - lo) * uniform01(rng));
    };

    const int p = patch.size;
    if (mode == PaintMode::in) {
        for (const Box& b : boxes)
            for (int c = 0; c < out.channels; ++c)
                for (int z = b.z0; z < b.z0 + b.sz; ++z)
                    for (int y = b.y0; y < b.y0 + b.sy; ++y)
                        for (int x = b.x0; x < b.x0 + b.sx; ++x) out.data[out.index(c, x, y, z)] = noise(c);
        return out;
    }
    for (int c = 0; c < out.channels; ++c)
        for (int z = 0; z < p; ++z)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) {
                    const bool inside =
                        std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.contains(x, y, z); });
                    if (!inside) out.data[out.index(c, x, y, z)] = noise(c);
                }
    return out;
}

std::pair<Patch, Patch> augment_pair(const Patch& patch, const AugmentConfig& cfg, uint64_t seed) {
    cfg.validate(patch.size);
    auto make_view = [&](uint32_t view) {
        std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), view};
        std::mt19937_64 rng(seq);
        // Every draw happens regardless of outcome so views stay aligned across configs.
        const bool do_bezier = uniform01(rng) < cfg.p_bezier;
        const bool do_shuffle = uniform01(rng) < cfg.p_shuffle;
        const uint64_t shuffle_seed = rng();
        const bool do_paint = uniform01(rng) < cfg.p_paint;
        const PaintMode mode = uniform01(rng) < cfg.p_inpaint ? PaintMode::in : PaintMode::out;
        const uint64_t paint_seed = rng();

        Patch v = patch;
        if (do_bezier) v = bezier_intensity(v, cfg.bezier_points);
        if (do_shuffle) v = local_pixel_shuffle(v, cfg.shuffle_blocks, cfg.shuffle_block_size, shuffle_seed);
        if (do_paint) v = paint(v, mode, cfg.paint_count, {cfg.paint_size_min, cfg.paint_size_max}, paint_seed);
        return v;
    };
    return {make_view(0), make_view(1)};
}

float normalize_hu(float hu) {
    return std::clamp((hu - static_cast<float>(kMinHu)) / static_cast<float>(kMaxHu - kMinHu), 0.0f, 1.0f);
}

PairDatasetWriter::PairDatasetWriter(const fs::path& dir, int patch_size, int channels, json provenance)
    : dir_(dir), patch_size_(patch_size), channels_(channels), provenance_(std::move(provenance)) {
    payload_ = detail::open_for_write(dir_ / "pairs.raw");
}

void PairDatasetWriter::add(const PairRecord& rec, const Patch& a, const Patch& b) {
    if (a.size != patch_size_ || b.size != patch_size_ || a.channels != channels_ || b.channels != channels_)
        throw ValidationError("pair view geometry mismatch");
    std::vector<float> buf(a.data.size());
    for (const Patch* v : {&a, &b}) {
        std::transform(v->data.begin(), v->data.end(), buf.begin(), normalize_hu);
        detail::put_span(payload_, std::span<const float>(buf));
    }
    records_.push_back(rec);
}

void PairDatasetWriter::finish() {
    payload_.close();
    if (!payload_) throw RuntimeError("write failed: pairs.raw");
    json recs = json::array();
    for (const auto& r : records_)
        recs.push_back({{"patient_id", r.patient_id}, {"patch_index", r.patch_index}, {"normal", r.normal}});
    json j{{"magic", "PAIR1"},
           {"channels", channels_},
           {"patch_size", patch_size_},
           {"n", records_.size()},
           {"dtype", "f32le"},
           {"normalization", "(hu + 1024) / 4095"},
           {"payload", "pairs.raw"},
           {"provenance", provenance_},
           {"records", recs}};
    auto out = detail::open_for_write(dir_ / "pairs.json");
    out << j.dump(1) << '\n';
}

PairDataset read_pair_dataset(const fs::path& dir) {
    const auto idx = detail::read_file(dir / "pairs.json");
    PairDataset ds;
    try {
        const json j = json::parse(idx.begin(), idx.end());
        if (j.at("magic").get<std::string>() != "PAIR1") throw ValidationError("not a PAIR1 index");
        ds.patch_size = j.at("patch_size").get<int>();
        ds.channels = j.at("channels").get<int>();
        for (const auto& r : j.at("records"))
            ds.records.push_back(
                {r.at("patient_id").get<std::string>(), r.at("patch_index").get<int>(), r.at("normal").get<bool>()});
        if (j.at("n").get<std::size_t>() != ds.records.size()) throw ValidationError("record count mismatch");
    } catch (const json::exception& e) {
        throw ValidationError("corrupt pair index: " + std::string(e.what()));
    }
    const auto raw = detail::read_file(dir / "pairs.raw");
    const std::size_t per_view = static_cast<std::size_t>(ds.channels) * ds.patch_size * ds.patch_size * ds.patch_size;
    const std::size_t n_floats = ds.records.size() * 2 * per_view;
    if (raw.size() != n_floats * sizeof(float)) throw ValidationError("payload size mismatch");
    ds.payload.resize(n_floats);
    std::memcpy(ds.payload.data(), raw.data(), raw.size());
    return ds;
}

} // namespace lungad
