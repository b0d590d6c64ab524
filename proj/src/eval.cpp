#include "lungad/eval.hpp"

#include <algorithm>
#include <numeric>

#include "lungad/error.hpp"

namespace lungad {

namespace {

std::pair<std::size_t, std::size_t> class_counts(std::span<const LabeledScore> records) {
    std::size_t pos = 0;
    for (const auto& r : records) {
        if (r.label != 0 && r.label != 1) throw ValidationError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(r.label);
    }
    const std::size_t neg = records.size() - pos;
    if (pos == 0 || neg == 0) throw ValidationError("single-class input");
    return {pos, neg};
}

} // namespace

double auroc(std::span<const LabeledScore> records) {
    const auto [n_pos, n_neg] = class_counts(records);
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return records[a].score < records[b].score; });
    // Rank sum of positives with midranks for ties, in half units to stay exact.
    double pos_rank_sum2 = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && records[idx[j]].score == records[idx[i]].score) ++j;
        const double midrank2 = static_cast<double>(i + 1 + j); // 2 * ((i+1) + j) / 2
        for (std::size_t k = i; k < j; ++k)
            if (records[idx[k]].label == 1) pos_rank_sum2 += midrank2;
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double u2 = pos_rank_sum2 - np * (np + 1.0); // 2U
    return (u2 / 2.0) / (np * static_cast<double>(n_neg));
}

double ThresholdMetrics::precision_or_throw() const {
    if (!precision) throw ValidationError("precision undefined: no positive predictions");
    return *precision;
}

ThresholdMetrics threshold_metrics(std::span<const LabeledScore> records, double threshold) {
    class_counts(records);
    ThresholdMetrics m;
    for (const auto& r : records) {
        const bool predicted = r.score >= threshold;
        if (r.label == 1) (predicted ? m.tp : m.fn)++;
        else (predicted ? m.fp : m.tn)++;
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(records.size());
    m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    return m;
}

double choose_threshold(std::span<const LabeledScore> records) {
    const auto [n_pos, n_neg] = class_counts(records);
    std::vector<LabeledScore> s(records.begin(), records.end());
    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    // Sweep ascending cuts; at cut s[i] everything from i on is predicted diseased.
    std::size_t pos_below = 0;
    std::size_t neg_below = 0;
    double best_j = -2.0;
    double best = s.front().score;
    for (std::size_t i = 0; i < s.size();) {
        const double cut = s[i].score;
        const double sens = static_cast<double>(n_pos - pos_below) / static_cast<double>(n_pos);
        const double spec = static_cast<double>(neg_below) / static_cast<double>(n_neg);
        const double j = sens + spec - 1.0;
        if (j > best_j) {
            best_j = j;
            best = cut;
        }
        while (i < s.size() && s[i].score == cut) {
            (s[i].label == 1 ? pos_below : neg_below)++;
            ++i;
        }
    }
    return best;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j{{"model", r.model},   {"strategy", r.strategy}, {"auroc", r.auroc},
                     {"acc", r.accuracy},  {"recall", r.recall},     {"threshold", r.threshold},
                     {"n", r.n},           {"provenance", r.provenance}};
    j["precision"] = r.precision ? nlohmann::json(*r.precision) : nlohmann::json(nullptr);
    if (r.parameter_count) j["parameter_count"] = *r.parameter_count;
    return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.model = j.at("model").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        r.auroc = j.at("auroc").get<double>();
        r.accuracy = j.at("acc").get<double>();
        if (!j.at("precision").is_null()) r.precision = j.at("precision").get<double>();
        r.recall = j.at("recall").get<double>();
        r.threshold = j.at("threshold").get<double>();
        r.n = j.at("n").get<std::size_t>();
        if (j.contains("parameter_count")) r.parameter_count = j.at("parameter_count").get<std::size_t>();
        r.provenance = j.value("provenance", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed metrics report: " + std::string(e.what()));
    }
    return r;
}

} // namespace lungad
