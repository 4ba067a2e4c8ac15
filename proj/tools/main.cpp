#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"
#include "lmmvqa/pipeline.hpp"
#include "lmmvqa/synthetic.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;

std::string error_type(const lmmvqa::Error& e) {
    if (dynamic_cast<const lmmvqa::ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const lmmvqa::ManifestMissing*>(&e)) return "ManifestMissing";
    if (dynamic_cast<const lmmvqa::CheckpointMissing*>(&e)) return "CheckpointMissing";
    if (dynamic_cast<const lmmvqa::MissingCache*>(&e)) return "MissingCache";
    if (dynamic_cast<const lmmvqa::MissingTask*>(&e)) return "MissingTask";
    if (dynamic_cast<const lmmvqa::TooFewSamples*>(&e)) return "TooFewSamples";
    if (dynamic_cast<const lmmvqa::GrammarExhausted*>(&e)) return "GrammarExhausted";
    if (dynamic_cast<const lmmvqa::DecodeError*>(&e)) return "DecodeError";
    if (dynamic_cast<const lmmvqa::EmptyVideo*>(&e)) return "EmptyVideo";
    if (dynamic_cast<const lmmvqa::ParseError*>(&e)) return "ParseError";
    if (dynamic_cast<const lmmvqa::DivergenceError*>(&e)) return "DivergenceError";
    if (dynamic_cast<const lmmvqa::BackendError*>(&e)) return "BackendError";
    if (dynamic_cast<const lmmvqa::IoError*>(&e)) return "IoError";
    return "Error";
}

bool is_user_error(const std::string& type) {
    return type == "ConfigError" || type == "ManifestMissing" || type == "CheckpointMissing" ||
           type == "MissingCache" || type == "MissingTask" || type == "TooFewSamples" ||
           type == "GrammarExhausted";
}

void print_status(const std::string& command, json outputs) {
    json status = {{"status", "ok"}, {"command", command}, {"outputs", std::move(outputs)}};
    std::cout << status.dump() << std::endl;
}

int print_error(const std::string& type, const std::string& message) {
    json status = {{"status", "error"}, {"error", {{"type", type}, {"message", message}}}};
    std::cout << status.dump() << std::endl;
    return is_user_error(type) ? kExitUser : kExitInternal;
}

int cmd_preprocess(const lmmvqa::RunConfig& config) {
    if (config.manifest.empty()) throw lmmvqa::ManifestMissing("preprocess needs a manifest");
    const lmmvqa::DatasetManifest manifest = lmmvqa::load_manifest(config.manifest);
    lmmvqa::DirectoryLock lock(config.cache_dir);

    json failures = json::array();
    int cached = 0;
    for (const lmmvqa::ManifestRecord& record : manifest.records) {
        try {
            lmmvqa::preprocess_video(config, record);
            ++cached;
        } catch (const lmmvqa::Error& e) {
            std::cerr << "preprocess failed for " << record.video_id << ": " << e.what() << "\n";
            failures.push_back({{"video_id", record.video_id}, {"message", e.what()}});
        }
    }
    print_status("preprocess", {{"cache_dir", config.cache_dir}, {"cached", cached}, {"failed", failures}});
    return failures.empty() ? kExitOk : kExitInternal;
}

int cmd_build_prompts(const lmmvqa::RunConfig& config) {
    if (config.manifest.empty()) throw lmmvqa::ManifestMissing("build-prompts needs a manifest");
    const lmmvqa::DatasetManifest manifest = lmmvqa::load_manifest(config.manifest);
    const auto prompts = lmmvqa::build_prompts_for_manifest(config, manifest);
    lmmvqa::export_prompts(prompts, config.prompts_path);
    print_status("build-prompts",
                 {{"prompts_path", config.prompts_path}, {"pairs", prompts.size()}});
    return kExitOk;
}

int cmd_train(const lmmvqa::RunConfig& config) {
    if (config.manifest.empty()) throw lmmvqa::ManifestMissing("train needs a manifest");
    const lmmvqa::DatasetManifest manifest = lmmvqa::load_manifest(config.manifest);
    lmmvqa::DirectoryLock lock(config.checkpoint_dir);

    lmmvqa::TrainOutcome outcome = lmmvqa::train_on_manifest(config, manifest, nullptr);
    lmmvqa::save_checkpoint(config.checkpoint_dir, outcome.model, outcome.result);

    json curve = json::array();
    for (double loss : outcome.result.train_loss) curve.push_back(loss);
    print_status("train", {{"checkpoint_dir", config.checkpoint_dir},
                           {"epochs", outcome.result.epochs_completed},
                           {"train_loss", curve},
                           {"final_loss", curve.empty() ? json(nullptr) : curve.back()}});
    return kExitOk;
}

int cmd_evaluate(const lmmvqa::RunConfig& config) {
    lmmvqa::DirectoryLock lock(config.report_dir);
    const lmmvqa::Protocol protocol = lmmvqa::protocol_from_string(config.protocol);
    const std::vector<lmmvqa::EvalReport> reports = lmmvqa::run_protocol(protocol, config);

    std::filesystem::create_directories(config.report_dir);
    json all = json::array();
    for (const lmmvqa::EvalReport& report : reports) all.push_back(lmmvqa::report_to_json(report));
    const std::filesystem::path report_path = std::filesystem::path(config.report_dir) / "reports.json";
    std::ofstream out(report_path);
    if (!out) throw lmmvqa::IoError("cannot write reports: " + report_path.string());
    out << all.dump(2) << "\n";

    std::cerr << lmmvqa::render_report_table(reports);
    print_status("evaluate", {{"protocol", config.protocol},
                              {"report_path", report_path.string()},
                              {"reports", all}});
    return kExitOk;
}

int cmd_predict(const lmmvqa::RunConfig& config, const std::string& video) {
    lmmvqa::VqaModel model = lmmvqa::load_checkpoint(config.checkpoint_dir);
    const lmmvqa::QualityPrediction prediction = lmmvqa::predict_video(config, model, video);
    json out = {{"video", video},
                {"score", prediction.score ? json(*prediction.score) : json(nullptr)},
                {"level", prediction.level ? json(lmmvqa::to_string(*prediction.level)) : json(nullptr)},
                {"raw_text", prediction.raw_text}};
    print_status("predict", out);
    return kExitOk;
}

int cmd_synth(const lmmvqa::RunConfig& config, const std::string& dir, int count, int family,
              int frames, int size, double fps) {
    lmmvqa::SyntheticSpec spec;
    spec.count = count;
    spec.family = family;
    spec.frames = frames;
    spec.height = size;
    spec.width = size;
    spec.fps = fps;
    spec.seed = config.train.seed;
    spec.id_prefix = "syn" + std::to_string(family);
    const lmmvqa::DatasetManifest manifest = lmmvqa::generate_synthetic_corpus(dir, spec);
    print_status("synth", {{"dir", dir},
                           {"manifest", (std::filesystem::path(dir) / "manifest.jsonl").string()},
                           {"videos", manifest.records.size()}});
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LMM-style video quality assessment pipeline"};
    app.require_subcommand(1);

    // --config loads first so flag overrides land on top of the file values.
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string_view(argv[i]) == "--config") config_path = argv[i + 1];

    lmmvqa::RunConfig config;
    try {
        if (!config_path.empty()) config = lmmvqa::load_run_config(config_path);
    } catch (const lmmvqa::Error& e) {
        return print_error(error_type(e), e.what());
    }

    app.add_option("--config", config_path, "JSON run configuration file");
    app.add_option("--manifest", config.manifest, "training / fine-tuning manifest")
        ->capture_default_str();
    app.add_option("--test-manifest", config.test_manifests, "held-out evaluation manifest (repeatable)");
    app.add_option("--cache-dir", config.cache_dir, "preprocessing cache directory")->capture_default_str();
    app.add_option("--checkpoint-dir", config.checkpoint_dir, "checkpoint directory")->capture_default_str();
    app.add_option("--report-dir", config.report_dir, "evaluation report directory")->capture_default_str();
    app.add_option("--prompts-path", config.prompts_path, "prompt JSONL output path")->capture_default_str();
    app.add_option("--target-height", config.train.target_height, "decode resize height")->capture_default_str();
    app.add_option("--target-width", config.train.target_width, "decode resize width")->capture_default_str();
    app.add_option("--template-seed", config.train.template_seed, "template generation seed")->capture_default_str();
    app.add_option("--protocol", config.protocol, "in_sample | ood | finetune")->capture_default_str();
    app.add_option("--k-folds", config.k_folds, "cross-validation fold count")->capture_default_str();

    lmmvqa::TrainConfig& t = config.train;
    app.add_option("--batch-size", t.batch_size, "training batch size")->capture_default_str();
    app.add_option("--learning-rate", t.learning_rate, "optimizer learning rate")->capture_default_str();
    app.add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
    app.add_flag("--multi-task,!--no-multi-task", t.multi_task, "train on both tasks")
        ->capture_default_str();
    app.add_flag("--train-projectors-only,!--train-all", t.train_projectors_only,
                 "freeze the decoder and train projectors only")
        ->capture_default_str();
    app.add_option("--seed", t.seed, "run seed")->capture_default_str();
    app.add_option("--data-fraction", t.data_fraction, "training data fraction (0,1]")
        ->capture_default_str();
    app.add_option("--validation-fraction", t.validation_fraction, "validation video fraction")
        ->capture_default_str();
    app.add_option("--n-t", t.n_t, "temporal token count N_t")->capture_default_str();
    app.add_option("--tau", t.tau, "frames per chunk (0 = frame rate)")->capture_default_str();
    app.add_option("--d-model", t.d_model, "language embedding width")->capture_default_str();
    app.add_option("--spatial-backend", t.spatial_backend, "spatial encoder name")->capture_default_str();
    app.add_option("--temporal-backend", t.temporal_backend, "temporal encoder name")->capture_default_str();
    app.add_option("--spatial-patch", t.spatial_patch, "spatial patch size p")->capture_default_str();
    app.add_option("--c-sp", t.c_sp, "spatial feature width C_sp")->capture_default_str();
    app.add_option("--c-tp", t.c_tp, "temporal feature width C_tp")->capture_default_str();
    app.add_option("--spatial-projector", t.spatial_projector, "vit | mlp")->capture_default_str();
    app.add_option("--projector-heads", t.projector_heads, "spatial projector attention heads")
        ->capture_default_str();
    app.add_flag("--temporal-tokens,!--no-temporal-tokens", t.use_temporal_tokens,
                 "include temporal tokens")
        ->capture_default_str();
    app.add_option("--decoder-layers", t.decoder_layers, "toy decoder layers")->capture_default_str();
    app.add_option("--decoder-heads", t.decoder_heads, "toy decoder heads")->capture_default_str();
    app.add_option("--max-answer-len", t.max_answer_len, "generation length cap")->capture_default_str();
    app.add_option("--grad-clip", t.grad_clip, "global gradient norm clip")->capture_default_str();
    app.add_option("--template-count", t.template_count, "instruction template count")
        ->capture_default_str();
    app.add_option("--max-image-placeholders", t.max_image_placeholders,
                   "largest supported chunk count K")
        ->capture_default_str();

    app.add_subcommand("preprocess", "decode, chunk and cache every manifest video")->fallthrough();
    app.add_subcommand("build-prompts", "emit the QA instruction JSONL for a manifest")->fallthrough();
    app.add_subcommand("train", "instruction-tune on a manifest and save a checkpoint")->fallthrough();
    app.add_subcommand("evaluate", "run the configured evaluation protocol")->fallthrough();

    auto* predict = app.add_subcommand("predict", "assess one video with a trained checkpoint");
    predict->fallthrough();
    std::string video_path;
    predict->add_option("video", video_path, "video file to assess")->required();

    auto* synth = app.add_subcommand("synth", "generate a synthetic demo corpus");
    synth->fallthrough();
    std::string synth_dir = "synthetic";
    int synth_count = 16, synth_family = 0, synth_frames = 24, synth_size = 32;
    double synth_fps = 8.0;
    synth->add_option("--dir", synth_dir, "output directory")->capture_default_str();
    synth->add_option("--count", synth_count, "video count")->capture_default_str();
    synth->add_option("--family", synth_family, "content family (0 or 1)")->capture_default_str();
    synth->add_option("--frames", synth_frames, "frames per video")->capture_default_str();
    synth->add_option("--size", synth_size, "frame height and width")->capture_default_str();
    synth->add_option("--fps", synth_fps, "frame rate")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        config.validate();
        if (app.got_subcommand("preprocess")) return cmd_preprocess(config);
        if (app.got_subcommand("build-prompts")) return cmd_build_prompts(config);
        if (app.got_subcommand("train")) return cmd_train(config);
        if (app.got_subcommand("evaluate")) return cmd_evaluate(config);
        if (app.got_subcommand("predict")) return cmd_predict(config, video_path);
        if (app.got_subcommand("synth"))
            return cmd_synth(config, synth_dir, synth_count, synth_family, synth_frames, synth_size,
                             synth_fps);
    } catch (const lmmvqa::Error& e) {
        return print_error(error_type(e), e.what());
    } catch (const std::exception& e) {
        return print_error("Error", e.what());
    }
    return kExitOk;
}
