#include "lungad/genmodel.hpp"

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

namespace fs = std::filesystem;
using nlohmann::json;

double log_density(const GenerativeModel& model, std::span<const double> z) {
    return std::visit([&](const auto& m) { return m.log_density(z); }, model);
}

int model_dim(const GenerativeModel& model) {
    return std::visit([](const auto& m) { return m.dim(); }, model);
}

std::size_t parameter_count(const GenerativeModel& model) {
    return std::visit([](const auto& m) { return m.parameter_count(); }, model);
}

std::string model_type(const GenerativeModel& model) {
    return std::holds_alternative<GmmModel>(model) ? "gmm" : "nf";
}

DataMatrix to_matrix(const EmbeddingSet& set, bool normal_only, std::optional<Split> split) {
    std::vector<const Embedding*> keep;
    for (const auto& e : set.rows()) {
        if (normal_only && !e.normal) continue;
        if (split) {
            const auto info = set.subject(e.patient_id);
            if (info && info->split != *split) continue;
        }
        keep.push_back(&e);
    }
    DataMatrix x(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(set.dim()));
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = 0; j < set.dim(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = keep[i]->values[j];
    return x;
}

namespace {

void put_vector(std::ostream& os, const Eigen::Ref<const Vector>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::put(os, v[i]);
}

Vector get_vector(detail::ByteReader& rd, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rd.get<double>();
    return v;
}

} // namespace

void save_model(const GenerativeModel& model, const fs::path& path, const json& hyperparameters, uint64_t seed) {
    json header{{"type", model_type(model)},
                {"d", model_dim(model)},
                {"seed", seed},
                {"hyperparameters", hyperparameters},
                {"parameter_count", parameter_count(model)}};
    auto out = detail::open_for_write(path);
    if (const auto* g = std::get_if<GmmModel>(&model)) {
        header["magic"] = "GMM1";
        header["k"] = g->k();
        out << header.dump() << '\n';
        put_vector(out, g->weights());
        for (const auto& m : g->means()) put_vector(out, m);
        for (const auto& c : g->covariances())
            for (Eigen::Index i = 0; i < c.rows(); ++i) put_vector(out, c.row(i).transpose());
    } else {
        const auto& f = std::get<NfModel>(model);
        header["magic"] = "NF1";
        header["n_blocks"] = f.blocks().size();
        header["hidden"] = f.hidden();
        header["clamp"] = f.clamp();
        json perms = json::array();
        for (const auto& b : f.blocks()) perms.push_back(b.perm);
        header["permutations"] = perms;
        out << header.dump() << '\n';
        put_vector(out, f.shift());
        put_vector(out, f.scale());
        put_vector(out, f.parameters());
    }
    if (!out) throw RuntimeError("write failed: " + path.string());
}

LoadedModel load_model(const fs::path& path) {
    const auto buf = detail::read_file(path);
    const auto [header_text, payload] = detail::split_header_line(buf);
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw ValidationError("corrupt model header: " + std::string(e.what()));
    }
    detail::ByteReader rd(payload);
    try {
        const std::string magic = header.at("magic").get<std::string>();
        const int d = header.at("d").get<int>();
        if (d < 1) throw ValidationError("model dimension must be >= 1");
        if (magic == "GMM1") {
            const int k = header.at("k").get<int>();
            if (k < 1) throw ValidationError("k must be >= 1");
            Vector w = get_vector(rd, k);
            std::vector<Vector> means;
            for (int j = 0; j < k; ++j) means.push_back(get_vector(rd, d));
            std::vector<Matrix> covs;
            for (int j = 0; j < k; ++j) {
                Matrix c(d, d);
                for (int r = 0; r < d; ++r) c.row(r) = get_vector(rd, d).transpose();
                covs.push_back(std::move(c));
            }
            if (rd.remaining() != 0) throw ValidationError("payload size mismatch");
            return {GmmModel(std::move(w), std::move(means), std::move(covs)), header};
        }
        if (magic == "NF1") {
            FlowArch arch;
            arch.n_blocks = header.at("n_blocks").get<int>();
            arch.hidden = header.at("hidden").get<int>();
            arch.clamp = header.at("clamp").get<double>();
            NfModel f = NfModel::create(d, arch, 0, FlowInit::identity);
            const auto perms = header.at("permutations").get<std::vector<std::vector<int>>>();
            if (static_cast<int>(perms.size()) != arch.n_blocks) throw ValidationError("permutation count mismatch");
            for (int b = 0; b < arch.n_blocks; ++b) f.blocks()[b].perm = perms[b];
            Vector shift = get_vector(rd, d);
            Vector scale = get_vector(rd, d);
            f.set_standardization(std::move(shift), std::move(scale));
            f.set_parameters(get_vector(rd, static_cast<Eigen::Index>(f.parameter_count())));
            if (rd.remaining() != 0) throw ValidationError("payload size mismatch");
            f.validate();
            return {std::move(f), header};
        }
        throw ValidationError("unknown model magic '" + magic + "'");
    } catch (const json::exception& e) {
        throw ValidationError("corrupt model header: " + std::string(e.what()));
    }
}

} // namespace lungad
