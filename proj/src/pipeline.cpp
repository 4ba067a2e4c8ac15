#include "lmmvqa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

using nlohmann::json;

namespace {

std::string dataset_name(const std::filesystem::path& path) { return path.stem().string(); }

std::uint64_t feature_cache_key(const RunConfig& config, const EncoderBackend& backend, int tau) {
    std::uint64_t fp = backend.fingerprint();
    fp = fnv1a64(backend.name(), fp);
    fp = mix_seed(fp, static_cast<std::uint64_t>(tau));
    fp = mix_seed(fp, static_cast<std::uint64_t>(config.train.target_height));
    fp = mix_seed(fp, static_cast<std::uint64_t>(config.train.target_width));
    return fp;
}

DatasetManifest manifest_from_indices(const DatasetManifest& manifest,
                                      const std::vector<std::size_t>& indices) {
    DatasetManifest out;
    out.scale_min = manifest.scale_min;
    out.scale_max = manifest.scale_max;
    for (std::size_t i : indices) out.records.push_back(manifest.records[i]);
    return out;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    int count = 0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++count;
        }
    if (count == 0) return std::nullopt;
    return sum / count;
}

EvalReport mean_report(const std::vector<EvalReport>& folds) {
    EvalReport mean;
    mean.dataset = folds.front().dataset;
    mean.config_fingerprint = folds.front().config_fingerprint;
    std::vector<std::optional<double>> poor, fair, good;
    double total_acc = 0.0;
    int with_accuracy = 0;
    for (const EvalReport& fold : folds) {
        mean.srcc += fold.srcc;
        mean.plcc += fold.plcc;
        mean.n += fold.n;
        mean.parse_failures += fold.parse_failures;
        if (fold.accuracy) {
            poor.push_back(fold.accuracy->poor);
            fair.push_back(fold.accuracy->fair);
            good.push_back(fold.accuracy->good);
            total_acc += fold.accuracy->total;
            ++with_accuracy;
        }
    }
    const auto k = static_cast<double>(folds.size());
    mean.srcc /= k;
    mean.plcc /= k;
    if (with_accuracy > 0) {
        LevelAccuracy acc;
        acc.poor = mean_of(poor);
        acc.fair = mean_of(fair);
        acc.good = mean_of(good);
        acc.total = total_acc / with_accuracy;
        mean.accuracy = acc;
    }
    return mean;
}

}  // namespace

int resolve_tau(const RunConfig& config, double frame_rate) {
    return config.train.tau > 0 ? config.train.tau : tau_from_frame_rate(frame_rate);
}

CacheEntry preprocess_video(const RunConfig& config, const ManifestRecord& record) {
    if (cache_exists(config.cache_dir, record.video_id))
        return read_cache_entry(config.cache_dir, record.video_id);
    const FrameSequence video = load_video(record.path, config.train.target_height, config.train.target_width);
    const ChunkSet chunks = slice_chunks(video, resolve_tau(config, video.frame_rate));
    const KeyFrameSet keys = select_key_frames(chunks);
    return write_cache(config.cache_dir, record.video_id, video, chunks, keys);
}

SampleFeatures features_for(const RunConfig& config, const VqaModel& model, const ManifestRecord& record) {
    const std::filesystem::path video_dir = std::filesystem::path(config.cache_dir) / record.video_id;

    // tau is known once the video (or its cache entry) is seen; feature cache
    // names carry the backend + geometry so stale blobs never match.
    int tau = config.train.tau;
    if (tau == 0 && cache_exists(config.cache_dir, record.video_id))
        tau = read_cache_entry(config.cache_dir, record.video_id).tau;

    auto spatial_path = [&](int resolved_tau) {
        return video_dir /
               ("feat_sp_" + to_hex(feature_cache_key(config, *model.spatial_encoder, resolved_tau)) + ".f32t");
    };
    auto temporal_path = [&](int resolved_tau) {
        return video_dir /
               ("feat_tp_" + to_hex(feature_cache_key(config, *model.temporal_encoder, resolved_tau)) + ".f32t");
    };

    if (tau > 0 && std::filesystem::exists(spatial_path(tau)) &&
        std::filesystem::exists(temporal_path(tau))) {
        SampleFeatures features;
        features.spatial.tensor = load_feature_tensor(spatial_path(tau));
        features.spatial.patch_size = model.spatial_encoder->patch_size();
        features.temporal.tensor = load_feature_tensor(temporal_path(tau));
        if (features.spatial.width() == model.spatial_encoder->output_width() &&
            features.temporal.width() == model.temporal_encoder->output_width())
            return features;
    }

    const FrameSequence video = load_video(record.path, config.train.target_height, config.train.target_width);
    tau = resolve_tau(config, video.frame_rate);
    const ChunkSet chunks = slice_chunks(video, tau);
    const KeyFrameSet keys = select_key_frames(chunks);
    if (!cache_exists(config.cache_dir, record.video_id))
        write_cache(config.cache_dir, record.video_id, video, chunks, keys);

    SampleFeatures features;
    features.spatial = encode_spatial(keys, *model.spatial_encoder);
    features.temporal = encode_temporal(chunks, *model.temporal_encoder);
    save_feature_tensor(spatial_path(tau), features.spatial.tensor);
    save_feature_tensor(temporal_path(tau), features.temporal.tensor);
    return features;
}

FeatureStore build_feature_store(const RunConfig& config, const VqaModel& model,
                                 const DatasetManifest& manifest) {
    FeatureStore store;
    for (const ManifestRecord& record : manifest.records)
        store.emplace(record.video_id, features_for(config, model, record));
    return store;
}

std::vector<QAInstruction> build_prompts_for_manifest(const RunConfig& config,
                                                      const DatasetManifest& manifest) {
    const auto levels = bucket_levels(manifest);
    const auto templates = generate_templates(config.train.template_count, config.train.template_seed);
    std::vector<QAInstruction> prompts;
    prompts.reserve(manifest.records.size() * 2);
    for (const ManifestRecord& record : manifest.records) {
        if (!cache_exists(config.cache_dir, record.video_id))
            throw MissingCache("video not preprocessed: " + record.video_id);
        const CacheEntry entry = read_cache_entry(config.cache_dir, record.video_id);
        if (entry.chunk_count > config.train.max_image_placeholders)
            throw ConfigError("video " + record.video_id + " needs " + std::to_string(entry.chunk_count) +
                              " image placeholders; raise max_image_placeholders");
        auto [regression, classification] = build_qa_pairs(record, levels.at(record.video_id), templates,
                                                           entry.chunk_count, config.train.seed);
        prompts.push_back(std::move(regression));
        prompts.push_back(std::move(classification));
    }
    return prompts;
}

TrainOutcome train_on_manifest(const RunConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path* init_checkpoint) {
    TrainOutcome outcome{init_checkpoint != nullptr ? load_checkpoint(*init_checkpoint)
                                                    : VqaModel::create(config.train),
                         {}};
    // Fine-tune runs keep the checkpoint's architecture and geometry; only
    // the training-loop knobs come from the new config.
    if (init_checkpoint != nullptr)
        outcome.model.config = config.train.architecture_with_loop_knobs(outcome.model.config);

    RunConfig effective = config;
    effective.train = outcome.model.config;

    const DatasetManifest selected =
        subsample(manifest, effective.train.data_fraction, effective.train.seed);
    for (const ManifestRecord& record : selected.records) preprocess_video(effective, record);

    const std::vector<QAInstruction> prompts = build_prompts_for_manifest(effective, selected);
    const FeatureStore features = build_feature_store(effective, outcome.model, selected);
    outcome.result = train(outcome.model, prompts, features, effective.train);
    return outcome;
}

PredictionSet predict_manifest(const RunConfig& config, const VqaModel& model,
                               const DatasetManifest& manifest,
                               const std::map<std::string, Level>* levels_in) {
    // OOD quality levels come from the evaluation manifest's own tertiles;
    // fold evaluations pass the full dataset's buckets instead.
    const std::map<std::string, Level> levels = levels_in ? *levels_in : bucket_levels(manifest);
    const auto templates = generate_templates(config.train.template_count, config.train.template_seed);

    PredictionSet predictions;
    for (const ManifestRecord& record : manifest.records) {
        const SampleFeatures features = features_for(config, model, record);
        const int chunk_count = features.spatial.chunk_count();
        auto [regression_q, classification_q] =
            build_qa_pairs(record, levels.at(record.video_id), templates, chunk_count, config.train.seed);

        PredictionRecord result;
        result.video_id = record.video_id;
        result.label = QualityLabel{record.mos, levels.at(record.video_id)};

        TokenBlock z_sp = project_spatial(features.spatial, *model.spatial_projector);
        std::optional<TokenBlock> z_tp;
        if (config.train.use_temporal_tokens)
            z_tp = project_temporal(features.temporal, *model.temporal_projector);

        bool failed = false;
        {
            TokenBlock z_text = embed_text(regression_q.question, *model.decoder, false);
            const AggregatedSequence seq = aggregate_tokens(z_sp, z_tp, z_text);
            const GenerationOutput output = model.decoder->generate(seq, config.train.max_answer_len);
            try {
                const QualityPrediction parsed = parse_answer(output.text, Task::regression);
                result.prediction.score = parsed.score;
                result.prediction.raw_text = output.text;
            } catch (const ParseError&) {
                failed = true;
                result.prediction.raw_text = output.text;
            }
        }
        if (model.config.multi_task) {
            TokenBlock z_text = embed_text(classification_q.question, *model.decoder, false);
            const AggregatedSequence seq = aggregate_tokens(z_sp, z_tp, z_text);
            const GenerationOutput output = model.decoder->generate(seq, config.train.max_answer_len);
            try {
                const QualityPrediction parsed = parse_answer(output.text, Task::classification);
                result.prediction.level = parsed.level;
            } catch (const ParseError&) {
                // counted via the regression failure flag only when both fail
            }
        }
        if (failed) ++predictions.parse_failures;
        predictions.pairs.push_back(std::move(result));
    }
    return predictions;
}

EvalReport report_from_predictions(const PredictionSet& predictions, const std::string& dataset,
                                   std::optional<int> fold_id, const std::string& config_fingerprint,
                                   bool with_accuracy) {
    EvalReport report;
    report.dataset = dataset;
    report.fold_id = fold_id;
    report.config_fingerprint = config_fingerprint;
    report.n = static_cast<int>(predictions.pairs.size());
    report.parse_failures = predictions.parse_failures;

    std::vector<double> pred, gt;
    for (const PredictionRecord& record : predictions.pairs) {
        if (!record.prediction.score) continue;  // parse failures leave correlations
        pred.push_back(*record.prediction.score);
        gt.push_back(record.label.mos);
    }
    try {
        if (pred.size() >= 2) {
            report.srcc = srcc(pred, gt);
            report.plcc = plcc(pred, gt);
        }
    } catch (const DegenerateInput&) {
        // constant predictions carry no ranking signal; report zero correlation
    }
    if (with_accuracy) report.accuracy = level_accuracy(predictions);
    return report;
}

std::vector<EvalReport> run_protocol(Protocol protocol, const RunConfig& config) {
    const std::string fingerprint = to_hex(config.train.fingerprint());
    std::vector<EvalReport> reports;

    if (protocol == Protocol::in_sample || protocol == Protocol::ood) {
        if (config.test_manifests.empty())
            throw ManifestMissing("protocol needs at least one test manifest");

        VqaModel model = [&] {
            if (protocol == Protocol::in_sample) {
                if (config.manifest.empty()) throw ManifestMissing("in_sample needs a training manifest");
                TrainOutcome outcome = train_on_manifest(config, load_manifest(config.manifest), nullptr);
                save_checkpoint(config.checkpoint_dir, outcome.model, outcome.result);
                return std::move(outcome.model);
            }
            return load_checkpoint(config.checkpoint_dir);
        }();

        // Inference follows the checkpoint's own recipe.
        RunConfig effective = config;
        effective.train = model.config;
        for (const std::string& path : config.test_manifests) {
            const DatasetManifest manifest = load_manifest(path);
            const PredictionSet predictions = predict_manifest(effective, model, manifest);
            reports.push_back(report_from_predictions(predictions, dataset_name(path), std::nullopt,
                                                      fingerprint, model.config.multi_task));
        }
        return reports;
    }

    // finetune: k-fold cross-validation, mean across folds appended last.
    if (config.manifest.empty()) throw ManifestMissing("finetune needs a manifest");
    const DatasetManifest manifest = load_manifest(config.manifest);
    const auto folds = kfold_split(manifest, config.k_folds, config.train.seed);

    std::filesystem::create_directories(config.report_dir);
    json fold_dump = json::array();
    for (const auto& fold : folds) {
        json ids = json::array();
        for (std::size_t i : fold) ids.push_back(manifest.records[i].video_id);
        fold_dump.push_back(ids);
    }
    std::ofstream fold_out(std::filesystem::path(config.report_dir) / "fold_assignments.json");
    fold_out << fold_dump.dump(2) << "\n";

    const bool has_base = checkpoint_exists(config.checkpoint_dir);
    const std::filesystem::path base_dir = config.checkpoint_dir;
    const std::map<std::string, Level> dataset_levels = bucket_levels(manifest);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train_indices;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) train_indices.insert(train_indices.end(), folds[g].begin(), folds[g].end());
        std::sort(train_indices.begin(), train_indices.end());

        const DatasetManifest train_manifest = manifest_from_indices(manifest, train_indices);
        const DatasetManifest fold_manifest = manifest_from_indices(manifest, folds[f]);

        TrainOutcome outcome =
            train_on_manifest(config, train_manifest, has_base ? &base_dir : nullptr);
        RunConfig effective = config;
        effective.train = outcome.model.config;
        const PredictionSet predictions =
            predict_manifest(effective, outcome.model, fold_manifest, &dataset_levels);
        reports.push_back(report_from_predictions(predictions, dataset_name(config.manifest),
                                                  static_cast<int>(f), fingerprint,
                                                  outcome.model.config.multi_task));
    }
    reports.push_back(mean_report(reports));
    return reports;
}

QualityPrediction predict_video(const RunConfig& config_in, const VqaModel& model,
                                const std::filesystem::path& video_path) {
    RunConfig config = config_in;
    config.train = model.config;  // assessment follows the checkpoint recipe

    ManifestRecord record;
    record.video_id = video_path.stem().string();
    record.path = video_path.string();

    const SampleFeatures features = features_for(config, model, record);
    const auto templates = generate_templates(config.train.template_count, config.train.template_seed);
    // Levels/MOS only shape answers, which predict never renders.
    auto [regression_q, classification_q] =
        build_qa_pairs(record, Level::fair, templates, features.spatial.chunk_count(), config.train.seed);

    TokenBlock z_sp = project_spatial(features.spatial, *model.spatial_projector);
    std::optional<TokenBlock> z_tp;
    if (config.train.use_temporal_tokens)
        z_tp = project_temporal(features.temporal, *model.temporal_projector);

    QualityPrediction prediction;
    {
        TokenBlock z_text = embed_text(regression_q.question, *model.decoder, false);
        const GenerationOutput output = model.decoder->generate(aggregate_tokens(z_sp, z_tp, z_text),
                                                                config.train.max_answer_len);
        prediction = parse_answer(output.text, Task::regression);
    }
    if (model.config.multi_task) {
        TokenBlock z_text = embed_text(classification_q.question, *model.decoder, false);
        const GenerationOutput output = model.decoder->generate(aggregate_tokens(z_sp, z_tp, z_text),
                                                                config.train.max_answer_len);
        try {
            prediction.level = parse_answer(output.text, Task::classification).level;
        } catch (const ParseError&) {
        }
    }
    return prediction;
}

}  // namespace lmmvqa
