#include "lungad/select.hpp"

#include "lungad/error.hpp"
#include "lungad/eval.hpp"

namespace lungad {

std::size_t select_best(std::span<const SelectionCandidate> candidates) {
    if (candidates.empty()) throw ValidationError("no candidates to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const auto& b = candidates[best];
        if (c.auroc > b.auroc || (c.auroc == b.auroc && c.parameter_count < b.parameter_count)) best = i;
    }
    return best;
}

SelectionResult select_model(std::span<const ModelCandidate> candidates, const EmbeddingSet& val,
                             AggregationStrategy strategy) {
    if (candidates.empty()) throw ValidationError("no candidates to select from");
    SelectionResult res;
    for (const auto& c : candidates) {
        const auto records = score_cohort(c.model, val, strategy);
        std::vector<LabeledScore> ls;
        for (const auto& r : records) ls.push_back({r.label, *r.aggregate});
        res.scored.push_back({c.label, auroc(ls), parameter_count(c.model)});
    }
    res.best = select_best(res.scored);
    return res;
}

} // namespace lungad
