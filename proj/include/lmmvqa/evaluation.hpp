#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmmvqa/decoder.hpp"
#include "lmmvqa/prompting.hpp"

namespace lmmvqa {

struct PredictionRecord {
    std::string video_id;
    QualityPrediction prediction;
    QualityLabel label;
};

// Predictions paired with ground truth; correlation metrics exclude parse
// failures, which are carried as a count.
struct PredictionSet {
    std::vector<PredictionRecord> pairs;
    int parse_failures = 0;
};

struct LevelAccuracy {
    std::optional<double> poor;  // null when that level has no ground truth
    std::optional<double> fair;
    std::optional<double> good;
    double total = 0.0;
};

struct EvalReport {
    std::string dataset;
    double srcc = 0.0;
    double plcc = 0.0;
    std::optional<LevelAccuracy> accuracy;
    int n = 0;
    int parse_failures = 0;
    std::optional<int> fold_id;
    std::string config_fingerprint;
};

// Spearman rank correlation with average-rank tie handling. Throws
// DegenerateInput for length < 2 or an all-constant side.
double srcc(std::span<const double> pred, std::span<const double> gt);

// Raw Pearson correlation (no nonlinear pre-fit).
double plcc(std::span<const double> pred, std::span<const double> gt);

// Per-level and total classification accuracy. Predictions without a level
// (parse failures) count against accuracy; levels absent from the ground
// truth report null.
LevelAccuracy level_accuracy(const PredictionSet& predictions);

// Disjoint covering folds with sizes differing by at most one,
// seed-deterministic. Returns record indices into the manifest.
std::vector<std::vector<std::size_t>> kfold_split(const DatasetManifest& manifest, int k,
                                                  std::uint64_t seed);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string render_report_table(std::span<const EvalReport> reports);

enum class Protocol { in_sample, ood, finetune };
Protocol protocol_from_string(const std::string& name);
std::string to_string(Protocol protocol);

}  // namespace lmmvqa
