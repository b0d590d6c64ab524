#pragma once

#include <span>
#include <string>
#include <vector>

#include "lungad/genmodel.hpp"
#include "lungad/score.hpp"

namespace lungad {

struct SelectionCandidate {
    std::string label;
    double auroc = 0.0;
    std::size_t parameter_count = 0;
};

// Index of the highest validation AUROC; ties go to fewer parameters, then to the
// earlier candidate.
std::size_t select_best(std::span<const SelectionCandidate> candidates);

struct ModelCandidate {
    GenerativeModel model;
    std::string label;
};

struct SelectionResult {
    std::size_t best = 0;
    std::vector<SelectionCandidate> scored; // one per input candidate, input order
};

// Scores the validation patients of `val` (label metadata required, both classes present)
// with each candidate, aggregates with `strategy`, and picks by AUROC.
SelectionResult select_model(std::span<const ModelCandidate> candidates, const EmbeddingSet& val,
                             AggregationStrategy strategy);

} // namespace lungad
