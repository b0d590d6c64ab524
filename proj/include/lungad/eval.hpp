#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lungad {

// Patient-level (label, aggregate) pair; label 1 = diseased.
struct LabeledScore {
    int label = 0;
    double score = 0.0;
};

// P(diseased score > healthy score) with ties counted 1/2, via midranks.
double auroc(std::span<const LabeledScore> records);

struct ThresholdMetrics {
    double accuracy = 0.0;
    std::optional<double> precision; // empty when nothing is predicted diseased
    double recall = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    // Throws ValidationError when precision is undefined.
    double precision_or_throw() const;
};

// Predict diseased iff score >= threshold.
ThresholdMetrics threshold_metrics(std::span<const LabeledScore> records, double threshold);

// Threshold maximising Youden's J over the observed scores; ties go to the lower cut.
double choose_threshold(std::span<const LabeledScore> records);

struct MetricsReport {
    std::string model;
    std::string strategy;
    double auroc = 0.0;
    double accuracy = 0.0;
    std::optional<double> precision;
    double recall = 0.0;
    double threshold = 0.0;
    std::size_t n = 0;
    std::optional<std::size_t> parameter_count;
    nlohmann::json provenance = nlohmann::json::object();
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

} // namespace lungad
