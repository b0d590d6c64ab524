#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lungad/cli.hpp"
#include "lungad/encode.hpp"
#include "lungad/eval.hpp"
#include "lungad/genmodel.hpp"
#include "lungad/score.hpp"
#include "lungad/synth.hpp"
#include "lungad/volume.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace lungad;

namespace {

using I16Array = py::array_t<int16_t, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (z, y, x) or (c, z, y, x) array -> channel count and dims.
std::pair<int, Dims> grid_shape(const py::array& a) {
    if (a.ndim() == 3) return {1, Dims{int(a.shape(2)), int(a.shape(1)), int(a.shape(0))}};
    if (a.ndim() == 4) return {int(a.shape(0)), Dims{int(a.shape(3)), int(a.shape(2)), int(a.shape(1))}};
    throw ValidationError("expected a (z, y, x) or (c, z, y, x) array");
}

Volume to_volume(const I16Array& hu) {
    const auto [c, dims] = grid_shape(hu);
    return Volume(dims, Spacing{}, c, std::vector<int16_t>(hu.data(), hu.data() + hu.size()));
}

LungMask to_mask(const U8Array& m) {
    if (m.ndim() != 3) throw ValidationError("mask must be a (z, y, x) array");
    const auto [c, dims] = grid_shape(m);
    return LungMask(dims, std::vector<uint8_t>(m.data(), m.data() + m.size()));
}

I16Array from_volume(const Volume& v) {
    const auto& d = v.dims();
    I16Array out({v.channels(), d.nz, d.ny, d.nx});
    std::copy(v.data().begin(), v.data().end(), out.mutable_data());
    return out;
}

U8Array from_mask(const LungMask& m) {
    const auto& d = m.dims();
    U8Array out({d.nz, d.ny, d.nx});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Patch to_patch(const F32Array& a) {
    const auto [c, dims] = grid_shape(a);
    if (dims.nx != dims.ny || dims.nx != dims.nz) throw ValidationError("patch must be cubic");
    Patch p;
    p.size = dims.nx;
    p.channels = c;
    p.data.assign(a.data(), a.data() + a.size());
    return p;
}

py::array_t<float> from_patch(const Patch& p) {
    py::array_t<float> out({p.channels, p.size, p.size, p.size});
    std::copy(p.data.begin(), p.data.end(), out.mutable_data());
    return out;
}

DataMatrix to_rows(const F64Array& a) {
    if (a.ndim() != 2) throw ValidationError("expected an (n, d) array");
    DataMatrix x(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), x.data());
    return x;
}

// log density for one vector (d,) or each row of (n, d).
template <class Model>
py::object log_density_any(const Model& m, const F64Array& z) {
    if (z.ndim() == 1) return py::float_(m.log_density(std::span<const double>(z.data(), z.size())));
    if (z.ndim() != 2) throw ValidationError("expected a (d,) or (n, d) array");
    py::array_t<double> out(z.shape(0));
    auto* o = out.mutable_data();
    const auto d = static_cast<std::size_t>(z.shape(1));
    for (py::ssize_t i = 0; i < z.shape(0); ++i) o[i] = m.log_density(std::span<const double>(z.data() + i * d, d));
    return out;
}

std::vector<LabeledScore> labeled(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw ValidationError("labels and scores differ in length");
    std::vector<LabeledScore> r;
    for (std::size_t i = 0; i < labels.size(); ++i) r.push_back({labels[i], scores[i]});
    return r;
}

py::dict embeddings_to_dict(const EmbeddingSet& s) {
    py::array_t<float> values({static_cast<py::ssize_t>(s.size()), static_cast<py::ssize_t>(s.dim())});
    std::vector<std::string> ids;
    std::vector<uint32_t> idx;
    std::vector<bool> normal;
    auto* v = values.mutable_data();
    for (const auto& e : s.rows()) {
        v = std::copy(e.values.begin(), e.values.end(), v);
        ids.push_back(e.patient_id);
        idx.push_back(e.patch_index);
        normal.push_back(e.normal);
    }
    py::dict subjects;
    for (const auto& [id, info] : s.subjects())
        subjects[py::str(id)] = py::make_tuple(to_string(info.label), to_string(info.split));
    return py::dict("values"_a = values, "patient_ids"_a = ids, "patch_indices"_a = idx, "normal"_a = normal,
                    "provenance"_a = to_string(s.provenance()), "d"_a = s.dim(), "subjects"_a = subjects);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Patch-level density modelling for lung CT anomaly detection";

    py::register_exception<FlowDivergenceError>(m, "FlowDivergenceError", PyExc_RuntimeError);

    m.def(
        "emphysema_fraction",
        [](const I16Array& hu, const U8Array& mask, double threshold) {
            return emphysema_fraction(to_volume(hu), to_mask(mask), threshold);
        },
        "hu"_a, "mask"_a, "threshold_hu"_a = kEmphysemaThresholdHu,
        "Fraction of lung voxels strictly below the threshold on channel 0.");

    m.def("grid_starts", &grid_starts, "dim"_a, "patch_size"_a, "overlap"_a);

    m.def(
        "extract_patches",
        [](const I16Array& hu, const U8Array& mask, int patch_size, double overlap, double min_coverage) {
            const auto patches = extract_patch_grid(to_volume(hu), to_mask(mask),
                                                    GridConfig{patch_size, overlap, min_coverage}, "");
            py::list out;
            for (const auto& p : patches)
                out.append(py::dict("data"_a = from_patch(p), "origin"_a = py::make_tuple(p.origin.x, p.origin.y, p.origin.z),
                                    "mask_coverage"_a = p.mask_coverage, "emphysema_fraction"_a = p.emphysema_fraction));
            return out;
        },
        "hu"_a, "mask"_a, "patch_size"_a = 32, "overlap"_a = 0.0, "min_coverage"_a = 0.5);

    m.def(
        "generate_phantom",
        [](int dim, double burden, uint64_t seed, int channels) {
            PhantomSpec s;
            s.dims = {dim, dim, dim};
            s.burden = burden;
            s.seed = seed;
            s.channels = channels;
            const Phantom p = generate_phantom(s);
            return py::dict("hu"_a = from_volume(p.volume), "mask"_a = from_mask(p.mask),
                            "achieved_burden"_a = p.achieved_burden);
        },
        "dim"_a = 96, "burden"_a = 0.0, "seed"_a = 0, "channels"_a = 1);

    m.def(
        "generate_cohort",
        [](int n_healthy, int n_diseased, const std::filesystem::path& out, uint64_t seed, int dim) {
            CohortSpec s;
            s.n_healthy = n_healthy;
            s.n_diseased = n_diseased;
            s.seed = seed;
            s.base.dims = {dim, dim, dim};
            return generate_cohort(s, out).patients.size();
        },
        "n_healthy"_a, "n_diseased"_a, "out_dir"_a, "seed"_a = 0, "dim"_a = 96,
        "Writes VOL1 volumes, masks and manifest.json; returns the patient count.");

    m.def(
        "handcrafted_features",
        [](const F32Array& patch) {
            const auto e = handcrafted_features(to_patch(patch));
            py::array_t<float> out(static_cast<py::ssize_t>(e.values.size()));
            std::copy(e.values.begin(), e.values.end(), out.mutable_data());
            return out;
        },
        "patch"_a);

    py::class_<GmmModel>(m, "GmmModel")
        .def(py::init<Vector, std::vector<Vector>, std::vector<Matrix>>(), "weights"_a, "means"_a, "covariances"_a)
        .def_property_readonly("k", &GmmModel::k)
        .def_property_readonly("dim", &GmmModel::dim)
        .def_property_readonly("weights", &GmmModel::weights)
        .def_property_readonly("means", &GmmModel::means)
        .def_property_readonly("covariances", &GmmModel::covariances)
        .def_property_readonly("parameter_count", &GmmModel::parameter_count)
        .def("log_density", &log_density_any<GmmModel>, "z"_a);

    m.def(
        "gmm_fit",
        [](const F64Array& data, int k, uint64_t seed, int max_iters, double rel_tolerance, double ridge) {
            const auto r = gmm_fit(to_rows(data), k, EmConfig{max_iters, rel_tolerance, ridge, seed});
            return py::make_tuple(r.model, r.loglik_trace, r.converged);
        },
        "data"_a, "k"_a, "seed"_a = 0, "max_iters"_a = 200, "rel_tolerance"_a = 1e-6, "ridge"_a = 1e-6,
        "EM fit; returns (model, loglik_trace, converged).");

    py::class_<NfModel>(m, "NfModel")
        .def_static(
            "create",
            [](int d, int n_blocks, int hidden, double clamp, uint64_t seed, bool random_init) {
                return NfModel::create(d, FlowArch{n_blocks, hidden, clamp}, seed,
                                       random_init ? FlowInit::random : FlowInit::identity);
            },
            "d"_a, "n_blocks"_a = 8, "hidden"_a = 256, "clamp"_a = 2.0, "seed"_a = 0, "random_init"_a = false)
        .def_property_readonly("dim", &NfModel::dim)
        .def_property_readonly("parameter_count", &NfModel::parameter_count)
        .def(
            "forward",
            [](const NfModel& f, const Vector& z) {
                return f.forward(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
            },
            "z"_a, "Returns (u, log|det J|).")
        .def(
            "inverse",
            [](const NfModel& f, const Vector& u) {
                return f.inverse(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())));
            },
            "u"_a)
        .def("log_density", &log_density_any<NfModel>, "z"_a);

    m.def(
        "nf_fit",
        [](const F64Array& data, int n_blocks, int hidden, double clamp, double learning_rate, int batch_size, int epochs,
           uint64_t seed, bool standardize) {
            FlowFitConfig cfg{FlowArch{n_blocks, hidden, clamp}, learning_rate, batch_size, epochs, seed, standardize};
            auto r = nf_fit(to_rows(data), cfg);
            return py::make_tuple(std::move(r.model), r.loss_trace, r.final_mean_nll);
        },
        "data"_a, "n_blocks"_a = 8, "hidden"_a = 256, "clamp"_a = 2.0, "learning_rate"_a = 1e-3, "batch_size"_a = 64,
        "epochs"_a = 50, "seed"_a = 0, "standardize"_a = true,
        "Adam fit; returns (model, loss_trace, final_mean_nll).");

    m.def(
        "save_model",
        [](const py::object& model, const std::filesystem::path& path, uint64_t seed) {
            if (py::isinstance<GmmModel>(model)) save_model(model.cast<GmmModel>(), path, nlohmann::json::object(), seed);
            else save_model(model.cast<NfModel>(), path, nlohmann::json::object(), seed);
        },
        "model"_a, "path"_a, "seed"_a = 0);
    m.def(
        "load_model",
        [](const std::filesystem::path& path) -> py::object {
            auto loaded = load_model(path);
            if (auto* g = std::get_if<GmmModel>(&loaded.model)) return py::cast(*g);
            return py::cast(std::get<NfModel>(std::move(loaded.model)));
        },
        "path"_a);

    m.def(
        "aggregate",
        [](const std::vector<double>& scores, const std::string& strategy) {
            return aggregate(scores, parse_strategy(strategy));
        },
        "scores"_a, "strategy"_a = "mean");
    m.attr("STRATEGIES") = [] {
        py::list l;
        for (auto s : kAllStrategies) l.append(to_string(s));
        return l;
    }();

    m.def(
        "auroc", [](const std::vector<int>& labels, const std::vector<double>& scores) { return auroc(labeled(labels, scores)); },
        "labels"_a, "scores"_a);
    m.def(
        "choose_threshold",
        [](const std::vector<int>& labels, const std::vector<double>& scores) {
            return choose_threshold(labeled(labels, scores));
        },
        "labels"_a, "scores"_a);
    m.def(
        "threshold_metrics",
        [](const std::vector<int>& labels, const std::vector<double>& scores, double threshold) {
            const auto t = threshold_metrics(labeled(labels, scores), threshold);
            return py::dict("accuracy"_a = t.accuracy, "precision"_a = t.precision, "recall"_a = t.recall, "tp"_a = t.tp,
                            "fp"_a = t.fp, "fn"_a = t.fn, "tn"_a = t.tn);
        },
        "labels"_a, "scores"_a, "threshold"_a);

    m.def(
        "read_embeddings", [](const std::filesystem::path& p) { return embeddings_to_dict(read_embeddings(p)); }, "path"_a);
    m.def(
        "write_embeddings",
        [](const std::filesystem::path& path, const F32Array& values, const std::vector<std::string>& patient_ids,
           const std::vector<uint32_t>& patch_indices, const std::vector<bool>& normal, const std::string& provenance) {
            if (values.ndim() != 2) throw ValidationError("values must be an (n, d) array");
            const auto n = static_cast<std::size_t>(values.shape(0));
            const auto d = static_cast<std::size_t>(values.shape(1));
            if (patient_ids.size() != n || patch_indices.size() != n || normal.size() != n)
                throw ValidationError("row metadata length differs from values");
            EmbeddingSet s(d, parse_provenance(provenance));
            for (std::size_t i = 0; i < n; ++i)
                s.add({std::vector<float>(values.data() + i * d, values.data() + (i + 1) * d), patient_ids[i],
                       patch_indices[i], normal[i]});
            write_embeddings(s, path);
        },
        "path"_a, "values"_a, "patient_ids"_a, "patch_indices"_a, "normal"_a, "provenance"_a = "external");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"lungad"};
            for (const auto& a : args) argv.push_back(a.c_str());
            return run_cli(static_cast<int>(argv.size()), argv.data());
        },
        "args"_a, "Runs a lungad subcommand; returns its exit status.");
}
