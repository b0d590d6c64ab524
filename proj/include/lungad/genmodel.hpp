#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lungad/encode.hpp"
#include "lungad/flow.hpp"
#include "lungad/gmm.hpp"

namespace lungad {

using GenerativeModel = std::variant<GmmModel, NfModel>;

double log_density(const GenerativeModel& model, std::span<const double> z);
int model_dim(const GenerativeModel& model);
std::size_t parameter_count(const GenerativeModel& model);
std::string model_type(const GenerativeModel& model); // "gmm" | "nf"

// Rows of `set` as an n x d matrix. With `normal_only`, keeps rows flagged normal;
// with `split`, keeps rows whose patient is in that split (patients without subject
// metadata are kept).
DataMatrix to_matrix(const EmbeddingSet& set, bool normal_only = false, std::optional<Split> split = std::nullopt);

// GMM1 / NF1: one JSON header line {magic, type, d, seed, hyperparameters, ...} followed
// by the f64le parameter payload.
//   GMM1 payload: weights (k), means (k*d), covariances (k*d*d, row-major)
//   NF1 payload:  shift (d), scale (d), parameters() of the flow
// NF1 permutations are stored in the header.
void save_model(const GenerativeModel& model, const std::filesystem::path& path, const nlohmann::json& hyperparameters,
                uint64_t seed);

struct LoadedModel {
    GenerativeModel model;
    nlohmann::json header;
};

LoadedModel load_model(const std::filesystem::path& path);

} // namespace lungad
