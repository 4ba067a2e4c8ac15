#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmmvqa/decoder.hpp"
#include "lmmvqa/encoders.hpp"
#include "lmmvqa/projectors.hpp"
#include "lmmvqa/prompting.hpp"

namespace lmmvqa {

// Instruction-tuning configuration. Width/backend fields double as the model
// construction recipe so a checkpoint can be rebuilt from its config alone.
struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 0.001;
    int epochs = 6;
    bool multi_task = true;
    bool train_projectors_only = false;  // toy decoder trains by default
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    double validation_fraction = 0.1;

    int n_t = 64;
    int tau = 0;  // 0 = round(frame_rate) per video
    int d_model = 64;
    std::string spatial_backend = "toy-spatial";
    std::string temporal_backend = "toy-temporal";
    int spatial_patch = 14;
    int c_sp = 32;
    int c_tp = 16;
    std::string spatial_projector = "vit";
    int projector_heads = 4;
    bool use_temporal_tokens = true;
    int decoder_layers = 2;
    int decoder_heads = 4;
    int max_answer_len = 24;
    double grad_clip = 1.0;
    int template_count = 2000;
    std::uint64_t template_seed = 7;
    int max_image_placeholders = 64;
    int target_height = 224;
    int target_width = 224;

    void validate() const;  // throws ConfigError
    std::uint64_t fingerprint() const;

    // Checkpoint-owned recipe (architecture, geometry, prompts) overlaid with
    // this config's training-loop knobs; used when fine-tuning from a base.
    TrainConfig architecture_with_loop_knobs(const TrainConfig& architecture) const;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

// Everything the assessment function needs at inference time.
struct VqaModel {
    std::shared_ptr<SpatialEncoder> spatial_encoder;
    std::shared_ptr<TemporalEncoder> temporal_encoder;
    std::unique_ptr<SpatialProjector> spatial_projector;
    std::unique_ptr<TemporalProjector> temporal_projector;
    std::unique_ptr<ToyDecoder> decoder;
    TrainConfig config;

    static VqaModel create(const TrainConfig& config);

    // Per-module weight fingerprints (byte-level, parameter order).
    std::map<std::string, std::uint64_t> module_fingerprints() const;
};

struct SampleFeatures {
    SpatialFeatures spatial;
    TemporalFeatures temporal;
};

using FeatureStore = std::map<std::string, SampleFeatures>;

struct TrainResult {
    std::vector<double> train_loss;  // per-epoch mean
    std::vector<double> val_loss;    // per-epoch mean, empty when no val split
    int epochs_completed = 0;
    std::map<std::string, std::uint64_t> fingerprints_before;
    std::map<std::string, std::uint64_t> fingerprints_after;
};

// Indices of the prompt pairs included under the mixing policy. multi_task
// false keeps regression pairs only; true keeps both and requires both to be
// present (MissingTask otherwise).
std::vector<std::size_t> mix_tasks(const std::vector<QAInstruction>& prompts, bool multi_task,
                                   std::uint64_t seed);

// Seed-deterministic per-epoch shuffle of a mixed stream.
std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& mixed, std::uint64_t seed, int epoch);

// ceil(fraction * n) records chosen uniformly without replacement.
DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

// Instruction tuning per the config. Only the permitted modules change
// (asserted by fingerprints); throws DivergenceError on non-finite loss.
TrainResult train(VqaModel& model, const std::vector<QAInstruction>& prompts, const FeatureStore& features,
                  const TrainConfig& config);

// Checkpoint directory: config + per-module weights + vocab + loss curve.
void save_checkpoint(const std::filesystem::path& dir, const VqaModel& model, const TrainResult& result);
VqaModel load_checkpoint(const std::filesystem::path& dir);
bool checkpoint_exists(const std::filesystem::path& dir);

}  // namespace lmmvqa
