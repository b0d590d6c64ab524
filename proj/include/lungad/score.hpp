#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungad/encode.hpp"
#include "lungad/genmodel.hpp"

namespace lungad {

enum class AggregationStrategy { mean, median, q3, p95, p99, max, sum95, sum99 };

inline constexpr std::array<AggregationStrategy, 8> kAllStrategies{
    AggregationStrategy::mean, AggregationStrategy::median, AggregationStrategy::q3,    AggregationStrategy::p95,
    AggregationStrategy::p99,  AggregationStrategy::max,    AggregationStrategy::sum95, AggregationStrategy::sum99};

std::string to_string(AggregationStrategy s);
AggregationStrategy parse_strategy(const std::string& s);

struct PatientRecord {
    std::string patient_id;
    int label = 0; // 1 = diseased
    std::vector<double> patch_scores;
    std::optional<double> aggregate;
};

// Negative log-density of one embedding.
double anomaly_score(const GenerativeModel& model, std::span<const double> z);
double anomaly_score(const GenerativeModel& model, const Embedding& e);

// Percentile with linear interpolation between closest ranks at index q * (n - 1).
// `sorted` must be ascending and non-empty.
double percentile_sorted(std::span<const double> sorted, double q);

// Patient-level aggregate. Every strategy is invariant to the order of `scores`.
double aggregate(std::span<const double> scores, AggregationStrategy strategy);

PatientRecord score_patient(const GenerativeModel& model, std::span<const Embedding> embeddings,
                            AggregationStrategy strategy, int label = 0);

// Groups `set` by patient (first-appearance order) and scores each group. Labels come
// from the set's subject metadata; patients outside `split` are skipped when given.
std::vector<PatientRecord> score_cohort(const GenerativeModel& model, const EmbeddingSet& set,
                                        AggregationStrategy strategy, std::optional<Split> split = std::nullopt);

// CSV with header `patient_id,label,strategy,aggregate,B`.
void write_scores_csv(const std::vector<PatientRecord>& records, AggregationStrategy strategy,
                      const std::filesystem::path& path);

struct ScoredRow {
    std::string patient_id;
    int label = 0;
    AggregationStrategy strategy = AggregationStrategy::mean;
    double aggregate = 0.0;
    std::size_t patch_count = 0;
};

std::vector<ScoredRow> read_scores_csv(const std::filesystem::path& path);

} // namespace lungad
