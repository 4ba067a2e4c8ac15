#pragma once

#include <filesystem>
#include <optional>

#include "lmmvqa/config.hpp"
#include "lmmvqa/evaluation.hpp"
#include "lmmvqa/training.hpp"

namespace lmmvqa {

// Orchestration shared by the CLI commands and the evaluation protocols.

// Decode + chunk + key-frame one video and write the cache entry; returns the
// existing entry untouched when already cached (idempotent).
CacheEntry preprocess_video(const RunConfig& config, const ManifestRecord& record);

// Resolve tau for a video under the config (0 = round(frame_rate)).
int resolve_tau(const RunConfig& config, double frame_rate);

// Spatial + temporal features for one video, via the on-disk feature cache
// keyed by backend fingerprint, tau and target geometry.
SampleFeatures features_for(const RunConfig& config, const VqaModel& model, const ManifestRecord& record);

FeatureStore build_feature_store(const RunConfig& config, const VqaModel& model,
                                 const DatasetManifest& manifest);

// Two QA pairs per record, K read from the preprocessing cache
// (MissingCache when a video has not been preprocessed).
std::vector<QAInstruction> build_prompts_for_manifest(const RunConfig& config,
                                                      const DatasetManifest& manifest);

// Fresh or checkpoint-initialized model trained on the manifest (after
// data_fraction subsampling). Saves nothing; callers own persistence.
struct TrainOutcome {
    VqaModel model;
    TrainResult result;
};
TrainOutcome train_on_manifest(const RunConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path* init_checkpoint);

// Greedy generation + parsing over a manifest; ground-truth levels default to
// the manifest's own tertiles but can be supplied (fold evaluation inherits
// the full dataset's buckets). Classification questions run only for
// multi-task models.
PredictionSet predict_manifest(const RunConfig& config, const VqaModel& model,
                               const DatasetManifest& manifest,
                               const std::map<std::string, Level>* levels = nullptr);

EvalReport report_from_predictions(const PredictionSet& predictions, const std::string& dataset,
                                   std::optional<int> fold_id, const std::string& config_fingerprint,
                                   bool with_accuracy);

// The §4.2 run matrices. in_sample trains once then scores the test
// manifests; ood scores an existing checkpoint; finetune runs k-fold over the
// manifest and appends the mean report.
std::vector<EvalReport> run_protocol(Protocol protocol, const RunConfig& config);

// End-to-end assessment of a single video file with a trained model.
QualityPrediction predict_video(const RunConfig& config, const VqaModel& model,
                                const std::filesystem::path& video_path);

}  // namespace lmmvqa
