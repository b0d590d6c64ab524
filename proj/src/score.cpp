#include "lungad/score.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "lungad/error.hpp"

namespace lungad {

std::string to_string(AggregationStrategy s) {
    switch (s) {
    case AggregationStrategy::mean: return "mean";
    case AggregationStrategy::median: return "median";
    case AggregationStrategy::q3: return "q3";
    case AggregationStrategy::p95: return "p95";
    case AggregationStrategy::p99: return "p99";
    case AggregationStrategy::max: return "max";
    case AggregationStrategy::sum95: return "sum95";
    case AggregationStrategy::sum99: return "sum99";
    }
    return "mean";
}

AggregationStrategy parse_strategy(const std::string& s) {
    for (auto st : kAllStrategies)
        if (to_string(st) == s) return st;
    throw ValidationError("unknown aggregation strategy '" + s + "'");
}

double anomaly_score(const GenerativeModel& model, std::span<const double> z) { return -log_density(model, z); }

double anomaly_score(const GenerativeModel& model, const Embedding& e) {
    std::vector<double> z(e.values.begin(), e.values.end());
    return anomaly_score(model, z);
}

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw ValidationError("empty score list");
    const double idx = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(idx));
    const auto hi = static_cast<std::size_t>(std::ceil(idx));
    const double v = sorted[lo] + (idx - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    return std::clamp(v, sorted[lo], sorted[hi]);
}

double aggregate(std::span<const double> scores, AggregationStrategy strategy) {
    if (scores.empty()) throw ValidationError("empty score list");
    // Sorting first makes every reduction, including floating-point sums, order invariant.
    std::vector<double> s(scores.begin(), scores.end());
    std::sort(s.begin(), s.end());
    auto tail_sum = [&](double q) {
        const double cut = percentile_sorted(s, q);
        const auto first = std::lower_bound(s.begin(), s.end(), cut);
        return std::accumulate(first, s.end(), 0.0);
    };
    switch (strategy) {
    case AggregationStrategy::mean: return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    case AggregationStrategy::median: return percentile_sorted(s, 0.50);
    case AggregationStrategy::q3: return percentile_sorted(s, 0.75);
    case AggregationStrategy::p95: return percentile_sorted(s, 0.95);
    case AggregationStrategy::p99: return percentile_sorted(s, 0.99);
    case AggregationStrategy::max: return s.back();
    case AggregationStrategy::sum95: return tail_sum(0.95);
    case AggregationStrategy::sum99: return tail_sum(0.99);
    }
    return 0.0;
}

PatientRecord score_patient(const GenerativeModel& model, std::span<const Embedding> embeddings,
                            AggregationStrategy strategy, int label) {
    if (embeddings.empty()) throw ValidationError("patient has no embeddings");
    PatientRecord rec;
    rec.patient_id = embeddings.front().patient_id;
    rec.label = label;
    rec.patch_scores.reserve(embeddings.size());
    for (const auto& e : embeddings) {
        const double s = anomaly_score(model, e);
        if (!std::isfinite(s)) throw RuntimeError("non-finite anomaly score for " + e.patient_id);
        rec.patch_scores.push_back(s);
    }
    rec.aggregate = aggregate(rec.patch_scores, strategy);
    return rec;
}

std::vector<PatientRecord> score_cohort(const GenerativeModel& model, const EmbeddingSet& set,
                                        AggregationStrategy strategy, std::optional<Split> split) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<Embedding>> groups;
    for (const auto& e : set.rows()) {
        auto [it, inserted] = groups.try_emplace(e.patient_id);
        if (inserted) order.push_back(e.patient_id);
        it->second.push_back(e);
    }
    std::vector<PatientRecord> out;
    for (const auto& id : order) {
        const auto info = set.subject(id);
        if (split && info && info->split != *split) continue;
        const int label = info && info->label == SubjectLabel::diseased ? 1 : 0;
        out.push_back(score_patient(model, groups.at(id), strategy, label));
    }
    return out;
}

void write_scores_csv(const std::vector<PatientRecord>& records, AggregationStrategy strategy,
                      const std::filesystem::path& path) {
    auto out = detail::open_for_write(path);
    out << "patient_id,label,strategy,aggregate,B\n";
    char buf[64];
    for (const auto& r : records) {
        if (!r.aggregate) throw ValidationError("record without aggregate: " + r.patient_id);
        if (r.patient_id.find_first_of(",\"\n") != std::string::npos)
            throw ValidationError("patient_id not representable in CSV: " + r.patient_id);
        const auto res = std::to_chars(buf, buf + sizeof(buf), *r.aggregate);
        out << r.patient_id << ',' << r.label << ',' << to_string(strategy) << ','
            << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << ',' << r.patch_scores.size() << '\n';
    }
    if (!out) throw RuntimeError("write failed: " + path.string());
}

std::vector<ScoredRow> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "patient_id,label,strategy,aggregate,B")
        throw ValidationError("unexpected scores CSV header in " + path.string());
    std::vector<ScoredRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw ValidationError("malformed scores CSV row: " + line);
        ScoredRow r;
        r.patient_id = f[0];
        try {
            r.label = std::stoi(f[1]);
            r.strategy = parse_strategy(f[2]);
            r.aggregate = std::stod(f[3]);
            r.patch_count = std::stoul(f[4]);
        } catch (const std::logic_error&) {
            throw ValidationError("malformed scores CSV row: " + line);
        }
        if (r.label != 0 && r.label != 1) throw ValidationError("label must be 0 or 1: " + line);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace lungad
