#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"
#include "lmmvqa/pipeline.hpp"
#include "lmmvqa/synthetic.hpp"
#include "testutil.hpp"

using namespace lmmvqa;

namespace {

// Desk-scale recipe used across the pipeline tests.
RunConfig pipeline_config(const std::filesystem::path& root) {
    RunConfig config;
    config.cache_dir = (root / "cache").string();
    config.checkpoint_dir = (root / "checkpoint").string();
    config.report_dir = (root / "reports").string();
    config.prompts_path = (root / "prompts.jsonl").string();
    config.train.target_height = 32;
    config.train.target_width = 32;
    config.train.seed = 5;
    config.train.batch_size = 8;
    config.train.epochs = 1;
    config.train.validation_fraction = 0.0;
    config.train.n_t = 4;
    config.train.tau = 0;  // frame rate
    config.train.d_model = 16;
    config.train.spatial_patch = 8;
    config.train.c_sp = 8;
    config.train.c_tp = 8;
    config.train.projector_heads = 2;
    config.train.decoder_layers = 1;
    config.train.decoder_heads = 2;
    config.train.template_count = 30;
    config.train.max_image_placeholders = 8;
    return config;
}

SyntheticSpec corpus_spec(int count, int family, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.count = count;
    spec.family = family;
    spec.frames = 16;
    spec.fps = 8.0;
    spec.seed = seed;
    spec.id_prefix = "clip" + std::to_string(family);
    return spec;
}

}  // namespace

TEST_CASE("synthetic corpus writes decodable videos with monotone MOS") {
    testutil::TempDir dir("synth");
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path(), corpus_spec(5, 0, 1));
    REQUIRE(manifest.size() == 5);
    for (int i = 1; i < manifest.size(); ++i)
        CHECK(manifest.records[i].mos < manifest.records[i - 1].mos);  // more blur, lower MOS

    const FrameSequence video = load_video(manifest.records[0].path, 32, 32);
    CHECK(video.frame_count() == 16);
    CHECK(video.frame_rate == 8.0);

    const DatasetManifest loaded = load_manifest(dir.path() / "manifest.jsonl");
    CHECK(loaded.size() == 5);

    // sharper content moves more between frames than blurred content
    const FrameSequence sharp = load_video(manifest.records.front().path, 32, 32);
    const FrameSequence blurred = load_video(manifest.records.back().path, 32, 32);
    const auto stat = [](const FrameSequence& v) {
        return ToyTemporalEncoder::chunk_statistics(v.frames)(0);
    };
    CHECK(stat(sharp) > stat(blurred));
}

TEST_CASE("preprocess_video is idempotent and caches key frames") {
    testutil::TempDir dir("prep");
    const RunConfig config = pipeline_config(dir.path());
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path() / "videos", corpus_spec(3, 0, 2));

    const CacheEntry entry = preprocess_video(config, manifest.records[0]);
    CHECK(entry.tau == 8);
    CHECK(entry.chunk_count == 2);

    const auto meta = std::filesystem::path(config.cache_dir) / manifest.records[0].video_id / "meta.json";
    const auto stamp = std::filesystem::last_write_time(meta);
    const CacheEntry again = preprocess_video(config, manifest.records[0]);
    CHECK(std::filesystem::last_write_time(meta) == stamp);
    CHECK(again.chunk_count == entry.chunk_count);
}

TEST_CASE("build_prompts_for_manifest pairs every record and needs the cache") {
    testutil::TempDir dir("prompts");
    const RunConfig config = pipeline_config(dir.path());
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path() / "videos", corpus_spec(5, 0, 3));

    CHECK_THROWS_AS(build_prompts_for_manifest(config, manifest), MissingCache);
    for (const auto& record : manifest.records) preprocess_video(config, record);

    const auto prompts = build_prompts_for_manifest(config, manifest);
    CHECK(prompts.size() == 10);
    int regression = 0, classification = 0;
    for (const auto& pair : prompts) {
        if (pair.task == Task::regression) ++regression;
        if (pair.task == Task::classification) ++classification;
        CHECK(pair.question.find("<image-1>") != std::string::npos);
        CHECK(pair.question.find("<image-2>") != std::string::npos);
        CHECK(pair.question.find("<image-3>") == std::string::npos);
    }
    CHECK(regression == 5);
    CHECK(classification == 5);

    // byte-identical output across runs with one seed
    export_prompts(prompts, config.prompts_path);
    std::ifstream first(config.prompts_path);
    std::string content_a((std::istreambuf_iterator<char>(first)), std::istreambuf_iterator<char>());
    const auto prompts_again = build_prompts_for_manifest(config, manifest);
    export_prompts(prompts_again, config.prompts_path);
    std::ifstream second(config.prompts_path);
    std::string content_b((std::istreambuf_iterator<char>(second)), std::istreambuf_iterator<char>());
    CHECK(content_a == content_b);
}

TEST_CASE("feature store round trips through the disk cache") {
    testutil::TempDir dir("feats");
    const RunConfig config = pipeline_config(dir.path());
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path() / "videos", corpus_spec(2, 0, 4));
    const VqaModel model = VqaModel::create(config.train);

    const FeatureStore store = build_feature_store(config, model, manifest);
    REQUIRE(store.size() == 2);
    const auto& features = store.begin()->second;
    CHECK(features.spatial.patches_per_frame() == 16);  // 32/8 squared
    CHECK(features.spatial.width() == 8);
    CHECK(features.temporal.tensor.rows_per_item == 1);

    // second load comes from the cache files and matches to f32 precision
    const FeatureStore cached = build_feature_store(config, model, manifest);
    CHECK((cached.begin()->second.spatial.tensor.data - features.spatial.tensor.data)
              .cwiseAbs()
              .maxCoeff() < 1e-6);
}

TEST_CASE("end-to-end: train, checkpoint, predict and evaluate a tiny run") {
    testutil::TempDir dir("e2e");
    RunConfig config = pipeline_config(dir.path());
    config.train.epochs = 2;
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path() / "videos", corpus_spec(6, 0, 5));
    config.manifest = (dir.path() / "videos" / "manifest.jsonl").string();

    TrainOutcome outcome = train_on_manifest(config, manifest, nullptr);
    CHECK(outcome.result.epochs_completed == 2);
    save_checkpoint(config.checkpoint_dir, outcome.model, outcome.result);

    const VqaModel loaded = load_checkpoint(config.checkpoint_dir);
    const QualityPrediction prediction = predict_video(config, loaded, manifest.records[0].path);
    CHECK(prediction.score.has_value());  // format may be unlearned after 2 epochs, but parseable

    const PredictionSet predictions = predict_manifest(config, loaded, manifest);
    CHECK(predictions.pairs.size() == 6);
    const EvalReport report =
        report_from_predictions(predictions, "toy", std::nullopt, "fp", loaded.config.multi_task);
    CHECK(report.n == 6);
    CHECK(report.srcc >= -1.0);
    CHECK(report.srcc <= 1.0);
}

TEST_CASE("run_protocol shapes: finetune emits k folds plus a mean") {
    testutil::TempDir dir("proto");
    RunConfig config = pipeline_config(dir.path());
    config.train.epochs = 1;
    config.k_folds = 5;
    config.protocol = "finetune";
    generate_synthetic_corpus(dir.path() / "videos", corpus_spec(10, 0, 6));
    config.manifest = (dir.path() / "videos" / "manifest.jsonl").string();

    const auto reports = run_protocol(Protocol::finetune, config);
    REQUIRE(reports.size() == 6);
    for (int f = 0; f < 5; ++f) {
        CHECK(reports[f].fold_id == f);
        CHECK(reports[f].n == 2);
    }
    CHECK_FALSE(reports.back().fold_id.has_value());
    CHECK(reports.back().n == 10);
    CHECK(std::filesystem::exists(std::filesystem::path(config.report_dir) / "fold_assignments.json"));

    // folds disjoint and covering
    std::ifstream in(std::filesystem::path(config.report_dir) / "fold_assignments.json");
    nlohmann::json folds;
    in >> folds;
    std::set<std::string> seen;
    for (const auto& fold : folds)
        for (const auto& id : fold) seen.insert(id.get<std::string>());
    CHECK(seen.size() == 10);
}

TEST_CASE("run_protocol ood requires a checkpoint") {
    testutil::TempDir dir("ood");
    RunConfig config = pipeline_config(dir.path());
    generate_synthetic_corpus(dir.path() / "videos", corpus_spec(4, 1, 7));
    config.test_manifests = {(dir.path() / "videos" / "manifest.jsonl").string()};
    CHECK_THROWS_AS(run_protocol(Protocol::ood, config), CheckpointMissing);
}

TEST_CASE("run config file: unknown keys rejected, known keys load, env overrides cache") {
    testutil::TempDir dir("cfg");
    const auto path = dir.path() / "run.json";
    std::ofstream(path) << R"({"epochs": 3, "n_t": 16, "protocol": "finetune", "k_folds": 4})";
    const RunConfig config = load_run_config(path);
    CHECK(config.train.epochs == 3);
    CHECK(config.train.n_t == 16);
    CHECK(config.k_folds == 4);

    std::ofstream(path) << R"({"epoch": 3})";
    CHECK_THROWS_AS(load_run_config(path), ConfigError);

    std::ofstream(path) << R"({"epochs": -1})";
    CHECK_THROWS_AS(load_run_config(path), ConfigError);

    std::ofstream(path) << R"({"epochs": 2})";
    setenv("LMMVQA_CACHE_ROOT", (dir.path() / "alt_cache").c_str(), 1);
    const RunConfig with_env = load_run_config(path);
    unsetenv("LMMVQA_CACHE_ROOT");
    CHECK(with_env.cache_dir == (dir.path() / "alt_cache").string());
}

TEST_CASE("directory lock refuses concurrent use and releases on destruction") {
    testutil::TempDir dir("lock");
    {
        DirectoryLock lock(dir.path() / "work");
        CHECK_THROWS_AS(DirectoryLock(dir.path() / "work"), ConfigError);
    }
    DirectoryLock relock(dir.path() / "work");  // released, so this succeeds
}

TEST_CASE("evaluation reports are bit-reproducible for a fixed checkpoint") {
    testutil::TempDir dir("repro");
    RunConfig config = pipeline_config(dir.path());
    config.train.epochs = 1;
    const DatasetManifest manifest = generate_synthetic_corpus(dir.path() / "videos", corpus_spec(5, 0, 8));
    config.manifest = (dir.path() / "videos" / "manifest.jsonl").string();

    TrainOutcome outcome = train_on_manifest(config, manifest, nullptr);
    const PredictionSet a = predict_manifest(config, outcome.model, manifest);
    const PredictionSet b = predict_manifest(config, outcome.model, manifest);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].prediction.raw_text == b.pairs[i].prediction.raw_text);
        CHECK(a.pairs[i].prediction.score == b.pairs[i].prediction.score);
    }
}
