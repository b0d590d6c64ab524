#include "lungad/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "binary_io.hpp"
#include "lungad/augment.hpp"
#include "lungad/encode.hpp"
#include "lungad/error.hpp"
#include "lungad/eval.hpp"
#include "lungad/genmodel.hpp"
#include "lungad/patch_store.hpp"
#include "lungad/score.hpp"
#include "lungad/seed.hpp"
#include "lungad/select.hpp"
#include "lungad/synth.hpp"
#include "lungad/volume.hpp"

namespace lungad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    const auto buf = detail::read_file(path);
    try {
        return json::parse(buf.begin(), buf.end());
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    auto out = detail::open_for_write(path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path.string());
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
            throw ValidationError("unknown key '" + k + "' in " + where);
}

std::optional<Split> parse_split_option(const std::string& s) {
    if (s == "all") return std::nullopt;
    return parse_split(s);
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    int healthy = 0;
    int diseased = 0;
    std::string out;
    uint64_t seed = 0;
    int dim = 96;
    int channels = 1;
};

void cmd_synth(const SynthArgs& a) {
    CohortSpec spec;
    spec.n_healthy = a.healthy;
    spec.n_diseased = a.diseased;
    spec.seed = a.seed;
    spec.base.dims = {a.dim, a.dim, a.dim};
    spec.base.channels = a.channels;
    const auto m = generate_cohort(spec, a.out);
    std::cout << "wrote " << m.patients.size() << " phantoms to " << a.out << '\n';
}

// --- extract -----------------------------------------------------------------

struct ExtractArgs {
    std::string manifest;
    int patch_size = 32;
    double overlap = 0.0;
    double min_coverage = 0.5;
    std::size_t max_ppp = 100;
    std::string out;
    uint64_t seed = 0;
};

void cmd_extract(const ExtractArgs& a) {
    if (a.overlap != 0.0 && a.overlap != 0.2) throw ValidationError("--overlap must be 0.0 or 0.2");
    if (a.max_ppp < 1) throw ValidationError("--max-ppp must be >= 1");
    const CohortManifest m = load_manifest(a.manifest);
    const GridConfig grid{a.patch_size, a.overlap, a.min_coverage};
    json prov{{"manifest", fs::path(a.manifest).filename().string()},
              {"patch_size", a.patch_size},
              {"overlap", a.overlap},
              {"min_coverage", a.min_coverage},
              {"max_ppp", a.max_ppp},
              {"seed", a.seed}};

    std::optional<PatchStore> store;
    for (std::size_t i = 0; i < m.patients.size(); ++i) {
        const auto& e = m.patients[i];
        const Volume vol = load_volume(m.resolve(e.volume_path));
        const LungMask mask = load_mask(m.resolve(e.mask_path));
        if (!store) store = PatchStore::create(a.out, a.patch_size, vol.channels(), prov);
        if (vol.channels() != store->channels()) throw ValidationError("channel count differs across the cohort");
        auto patches = extract_patch_grid(vol, mask, grid, e.patient_id);
        patches = subsample_patches(std::move(patches), a.max_ppp, derive_seed(a.seed, i));
        store->add_patient(e.patient_id, e.label, e.split, patches);
    }
    if (!store) store = PatchStore::create(a.out, a.patch_size, 1, prov);
    store->save_index();
    std::cout << "extracted " << store->total_patches() << " patches from " << m.patients.size() << " patients\n";
}

// --- make-pairs --------------------------------------------------------------

struct PairsArgs {
    std::string patches;
    std::string config;
    uint64_t seed = 0;
    std::string out;
};

void cmd_make_pairs(const PairsArgs& a) {
    const PatchStore store = PatchStore::open(a.patches);
    const AugmentConfig cfg = a.config.empty() ? AugmentConfig{} : augment_config_from_json(read_json_file(a.config));
    cfg.validate(store.patch_size());
    PairDatasetWriter writer(a.out, store.patch_size(), store.channels(),
                             {{"augment", to_json(cfg)}, {"seed", a.seed}});
    uint64_t counter = 0;
    for (std::size_t i = 0; i < store.patients().size(); ++i) {
        const auto& meta = store.patients()[i];
        const auto patches = store.load_patient(i);
        for (std::size_t j = 0; j < patches.size(); ++j) {
            const auto [va, vb] = augment_pair(patches[j], cfg, derive_seed(a.seed, counter++));
            writer.add({meta.patient_id, meta.patches[j].patch_index, meta.patches[j].normal}, va, vb);
        }
    }
    writer.finish();
    std::cout << "wrote " << counter << " view pairs\n";
}

// --- featurize ---------------------------------------------------------------

struct FeaturizeArgs {
    std::string patches;
    std::string encoder = "handcrafted";
    std::string emb;
    std::string out;
};

void cmd_featurize(const FeaturizeArgs& a) {
    const PatchStore store = PatchStore::open(a.patches);
    std::map<std::string, SubjectInfo> subjects;
    std::map<std::pair<std::string, uint32_t>, bool> normal_flags;
    for (const auto& p : store.patients()) {
        subjects[p.patient_id] = {p.label, p.split};
        for (const auto& m : p.patches) normal_flags[{p.patient_id, static_cast<uint32_t>(m.patch_index)}] = m.normal;
    }

    if (a.encoder == "handcrafted") {
        if (!a.emb.empty()) throw ValidationError("--emb is only valid with --encoder external");
        EmbeddingSet set(static_cast<std::size_t>(kFeaturesPerChannel) * store.channels(), Provenance::handcrafted);
        set.subjects() = subjects;
        for (std::size_t i = 0; i < store.patients().size(); ++i) {
            const auto& meta = store.patients()[i];
            const auto patches = store.load_patient(i);
            for (std::size_t j = 0; j < patches.size(); ++j) {
                Embedding e = handcrafted_features(patches[j]);
                e.patch_index = static_cast<uint32_t>(meta.patches[j].patch_index);
                e.normal = meta.patches[j].normal;
                set.add(std::move(e));
            }
        }
        write_embeddings(set, a.out);
        std::cout << "featurized " << set.size() << " patches (d=" << set.dim() << ")\n";
        return;
    }
    if (a.encoder != "external") throw ValidationError("--encoder must be handcrafted or external");
    if (a.emb.empty()) throw ValidationError("--encoder external requires --emb FILE");

    const EmbeddingSet ext = read_embeddings(a.emb);
    EmbeddingSet set(ext.dim(), Provenance::external);
    set.subjects() = subjects;
    for (const auto& e : ext.rows()) {
        const auto it = normal_flags.find({e.patient_id, e.patch_index});
        if (it == normal_flags.end())
            throw ValidationError("external embedding for unknown patch (" + e.patient_id + ", " +
                                  std::to_string(e.patch_index) + ")");
        if (it->second != e.normal) throw ValidationError("normal_flag disagrees with the patch store for " + e.patient_id);
        set.add(e);
    }
    write_embeddings(set, a.out);
    std::cout << "passed through " << set.size() << " external embeddings (d=" << set.dim() << ")\n";
}

// --- fit ---------------------------------------------------------------------

struct FitArgs {
    std::string emb;
    std::string model;
    int k = 1;
    std::string config;
    std::string out;
    uint64_t seed = 0;
    std::string split = "train";
};

void cmd_fit(const FitArgs& a) {
    FitFileConfig cfg = a.config.empty() ? FitFileConfig{} : fit_config_from_json(read_json_file(a.config));
    const EmbeddingSet set = read_embeddings(a.emb);
    const DataMatrix x = to_matrix(set, /*normal_only=*/true, parse_split_option(a.split));
    if (x.rows() == 0) throw ValidationError("no embeddings flagged normal");
    json hyper = to_json(cfg);
    hyper["split"] = a.split;
    hyper["n_train"] = x.rows();
    if (a.model == "gmm") {
        if (a.k != 1 && a.k != 2 && a.k != 4 && a.k != 8) throw ValidationError("--k must be one of 1, 2, 4, 8");
        cfg.em.seed = a.seed;
        const auto res = gmm_fit(x, a.k, cfg.em);
        hyper = {{"em", hyper.at("gmm")}, {"k", a.k}, {"split", a.split}, {"n_train", x.rows()},
                 {"iterations", res.iterations}, {"converged", res.converged},
                 {"final_mean_loglik", res.loglik_trace.back()}};
        save_model(res.model, a.out, hyper, a.seed);
        std::cout << "fitted GMM k=" << a.k << " on " << x.rows() << " normal embeddings, mean loglik "
                  << res.loglik_trace.back() << '\n';
    } else if (a.model == "nf") {
        cfg.nf.seed = a.seed;
        const auto res = nf_fit(x, cfg.nf);
        hyper = {{"nf", hyper.at("nf")}, {"split", a.split}, {"n_train", x.rows()},
                 {"loss_trace", res.loss_trace}, {"final_mean_nll", res.final_mean_nll}};
        save_model(res.model, a.out, hyper, a.seed);
        std::cout << "fitted NF on " << x.rows() << " normal embeddings, mean NLL " << res.final_mean_nll << '\n';
    } else {
        throw ValidationError("--model must be gmm or nf");
    }
}

// --- score -------------------------------------------------------------------

struct ScoreArgs {
    std::string model;
    std::string emb;
    std::string strategy = "mean";
    std::string out;
    std::string split = "all";
};

void cmd_score(const ScoreArgs& a) {
    const auto strategy = parse_strategy(a.strategy);
    const LoadedModel lm = load_model(a.model);
    const EmbeddingSet set = read_embeddings(a.emb);
    if (static_cast<int>(set.dim()) != model_dim(lm.model)) throw ValidationError("dimension mismatch");
    const auto records = score_cohort(lm.model, set, strategy, parse_split_option(a.split));
    write_scores_csv(records, strategy, a.out);
    std::cout << "scored " << records.size() << " patients\n";
}

// --- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
    std::string scores;
    std::string out;
    std::string model;
    std::string threshold_from;
};

std::vector<LabeledScore> labeled(const std::vector<ScoredRow>& rows) {
    std::vector<LabeledScore> out;
    for (const auto& r : rows) out.push_back({r.label, r.aggregate});
    return out;
}

void cmd_evaluate(const EvaluateArgs& a) {
    const auto rows = read_scores_csv(a.scores);
    if (rows.empty()) throw ValidationError("scores file has no rows");
    const auto strategy = rows.front().strategy;
    if (std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.strategy != strategy; }))
        throw ValidationError("scores file mixes aggregation strategies");
    const auto ls = labeled(rows);

    MetricsReport rep;
    rep.strategy = to_string(strategy);
    rep.n = rows.size();
    rep.auroc = auroc(ls);
    rep.threshold = a.threshold_from.empty() ? choose_threshold(ls) : choose_threshold(labeled(read_scores_csv(a.threshold_from)));
    const auto tm = threshold_metrics(ls, rep.threshold);
    rep.accuracy = tm.accuracy;
    rep.precision = tm.precision;
    rep.recall = tm.recall;
    rep.model = fs::path(a.model.empty() ? a.scores : a.model).stem().string();
    rep.provenance = {{"scores", fs::path(a.scores).filename().string()},
                      {"threshold_rule", "youden"},
                      {"threshold_source", a.threshold_from.empty() ? "scores" : fs::path(a.threshold_from).filename().string()}};
    if (!a.model.empty()) {
        const LoadedModel lm = load_model(a.model);
        rep.parameter_count = parameter_count(lm.model);
        rep.provenance["model_type"] = model_type(lm.model);
        rep.provenance["model_seed"] = lm.header.value("seed", json());
        rep.provenance["model_hyperparameters"] = lm.header.value("hyperparameters", json::object());
    }
    write_json_file(to_json(rep), a.out);
    std::cout << rep.model << " " << rep.strategy << ": AUROC " << rep.auroc << '\n';
}

// --- select ------------------------------------------------------------------

struct SelectArgs {
    std::vector<std::string> reports;
    std::string out;
};

void cmd_select(const SelectArgs& a) {
    std::vector<MetricsReport> reps;
    std::vector<SelectionCandidate> cands;
    for (const auto& p : a.reports) {
        reps.push_back(metrics_report_from_json(read_json_file(p)));
        cands.push_back({reps.back().model + "/" + reps.back().strategy, reps.back().auroc,
                         reps.back().parameter_count.value_or(0)});
    }
    const std::size_t best = select_best(cands);
    json all = json::array();
    for (std::size_t i = 0; i < cands.size(); ++i)
        all.push_back({{"report", fs::path(a.reports[i]).filename().string()},
                       {"label", cands[i].label},
                       {"auroc", cands[i].auroc},
                       {"parameter_count", cands[i].parameter_count}});
    write_json_file({{"best", to_json(reps[best])},
                     {"best_report", fs::path(a.reports[best]).filename().string()},
                     {"candidates", all},
                     {"rule", "max auroc; ties -> fewer parameters, then input order"}},
                    a.out);
    std::cout << "selected " << cands[best].label << " (AUROC " << cands[best].auroc << ")\n";
}

} // namespace

FitFileConfig fit_config_from_json(const json& j) {
    reject_unknown(j, {"gmm", "nf"}, "fit config");
    FitFileConfig c;
    try {
        if (j.contains("gmm")) {
            const auto& g = j.at("gmm");
            reject_unknown(g, {"max_iters", "rel_tolerance", "ridge"}, "fit config 'gmm'");
            c.em.max_iters = g.value("max_iters", c.em.max_iters);
            c.em.rel_tolerance = g.value("rel_tolerance", c.em.rel_tolerance);
            c.em.ridge = g.value("ridge", c.em.ridge);
        }
        if (j.contains("nf")) {
            const auto& n = j.at("nf");
            reject_unknown(n,
                           {"n_blocks", "hidden", "clamp", "learning_rate", "batch_size", "epochs", "standardize"},
                           "fit config 'nf'");
            c.nf.arch.n_blocks = n.value("n_blocks", c.nf.arch.n_blocks);
            c.nf.arch.hidden = n.value("hidden", c.nf.arch.hidden);
            c.nf.arch.clamp = n.value("clamp", c.nf.arch.clamp);
            c.nf.learning_rate = n.value("learning_rate", c.nf.learning_rate);
            c.nf.batch_size = n.value("batch_size", c.nf.batch_size);
            c.nf.epochs = n.value("epochs", c.nf.epochs);
            c.nf.standardize = n.value("standardize", c.nf.standardize);
        }
    } catch (const json::exception& e) {
        throw ValidationError("bad fit config: " + std::string(e.what()));
    }
    c.em.validate();
    c.nf.validate();
    return c;
}

json to_json(const FitFileConfig& c) {
    return {{"gmm", {{"max_iters", c.em.max_iters}, {"rel_tolerance", c.em.rel_tolerance}, {"ridge", c.em.ridge}}},
            {"nf",
             {{"n_blocks", c.nf.arch.n_blocks},
              {"hidden", c.nf.arch.hidden},
              {"clamp", c.nf.arch.clamp},
              {"learning_rate", c.nf.learning_rate},
              {"batch_size", c.nf.batch_size},
              {"epochs", c.nf.epochs},
              {"standardize", c.nf.standardize}}}};
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Representation-space anomaly detection for diffuse lung disease on 3D CT patches"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic lung-phantom cohort (VOL1 files + manifest)");
    s->add_option("--healthy", synth.healthy, "Number of healthy phantoms")->required()->check(CLI::NonNegativeNumber);
    s->add_option("--diseased", synth.diseased, "Number of diseased phantoms")->required()->check(CLI::NonNegativeNumber);
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--dim", synth.dim, "Edge length of the cubic phantom grid in voxels")->capture_default_str();
    s->add_option("--channels", synth.channels, "1, or 2 for an emulated registered second channel")
        ->capture_default_str();

    ExtractArgs extract;
    auto* e = app.add_subcommand("extract", "Extract lung patches, label normality, cap patches per patient");
    e->add_option("--manifest", extract.manifest, "Cohort manifest JSON")->required()->check(CLI::ExistingFile);
    e->add_option("--patch-size", extract.patch_size, "Patch edge length in voxels")->capture_default_str();
    e->add_option("--overlap", extract.overlap, "Grid overlap: 0.0 or 0.2")->capture_default_str();
    e->add_option("--min-coverage", extract.min_coverage, "Minimum lung-mask coverage of a patch")
        ->capture_default_str();
    e->add_option("--max-ppp", extract.max_ppp, "Maximum patches kept per patient")->capture_default_str();
    e->add_option("--out", extract.out, "Output patch-store directory")->required();
    e->add_option("--seed", extract.seed, "Seed for per-patient subsampling");

    PairsArgs pairs;
    auto* mp = app.add_subcommand("make-pairs", "Write augmented view pairs for contrastive training");
    mp->add_option("--patches", pairs.patches, "Patch-store directory")->required()->check(CLI::ExistingDirectory);
    mp->add_option("--config", pairs.config, "Augmentation config JSON (defaults when omitted)")
        ->check(CLI::ExistingFile);
    mp->add_option("--seed", pairs.seed, "Random seed");
    mp->add_option("--out", pairs.out, "Output directory")->required();

    FeaturizeArgs feat;
    auto* f = app.add_subcommand("featurize", "Embed patches into an EMB1 file");
    f->add_option("--patches", feat.patches, "Patch-store directory")->required()->check(CLI::ExistingDirectory);
    f->add_option("--encoder", feat.encoder, "handcrafted | external")->capture_default_str();
    f->add_option("--emb", feat.emb, "External EMB1 file (with --encoder external)")->check(CLI::ExistingFile);
    f->add_option("--out", feat.out, "Output EMB1 file")->required();

    FitArgs fit;
    auto* ft = app.add_subcommand("fit", "Fit a density model on normal-patch embeddings");
    ft->add_option("--emb", fit.emb, "EMB1 file")->required()->check(CLI::ExistingFile);
    ft->add_option("--model", fit.model, "gmm | nf")->required();
    ft->add_option("--k", fit.k, "GMM component count: 1, 2, 4 or 8")->capture_default_str();
    ft->add_option("--config", fit.config, "Fit config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    ft->add_option("--out", fit.out, "Output model file (GMM1 / NF1)")->required();
    ft->add_option("--seed", fit.seed, "Random seed");
    ft->add_option("--split", fit.split, "Patients to train on: train | val | test | all")->capture_default_str();

    ScoreArgs score;
    auto* sc = app.add_subcommand("score", "Score patients by aggregated patch negative log-likelihood");
    sc->add_option("--model", score.model, "Model file")->required()->check(CLI::ExistingFile);
    sc->add_option("--emb", score.emb, "EMB1 file")->required()->check(CLI::ExistingFile);
    sc->add_option("--strategy", score.strategy, "mean|median|q3|p95|p99|max|sum95|sum99")->capture_default_str();
    sc->add_option("--out", score.out, "Output CSV")->required();
    sc->add_option("--split", score.split, "Patients to score: train | val | test | all")->capture_default_str();

    EvaluateArgs ev;
    auto* evc = app.add_subcommand("evaluate", "AUROC and thresholded metrics for a scores CSV");
    evc->add_option("--scores", ev.scores, "Scores CSV")->required()->check(CLI::ExistingFile);
    evc->add_option("--out", ev.out, "Output report JSON")->required();
    evc->add_option("--model", ev.model, "Model file, for the report label and parameter count")
        ->check(CLI::ExistingFile);
    evc->add_option("--threshold-from", ev.threshold_from, "Scores CSV to choose the threshold on (e.g. validation)")
        ->check(CLI::ExistingFile);

    SelectArgs sel;
    auto* se = app.add_subcommand("select", "Pick the best model/strategy report by AUROC");
    se->add_option("--reports", sel.reports, "Report JSON files")->required()->check(CLI::ExistingFile);
    se->add_option("--out", sel.out, "Output JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return 2;
    }

    try {
        if (*s) cmd_synth(synth);
        else if (*e) cmd_extract(extract);
        else if (*mp) cmd_make_pairs(pairs);
        else if (*f) cmd_featurize(feat);
        else if (*ft) cmd_fit(fit);
        else if (*sc) cmd_score(score);
        else if (*evc) cmd_evaluate(ev);
        else if (*se) cmd_select(sel);
    } catch (const std::invalid_argument& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace lungad
