#include "lmmvqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"
#include "lmmvqa/serialize.hpp"

namespace lmmvqa {

using autograd::Parameter;
using autograd::Var;
using nlohmann::json;

namespace {

// Momentum-free adaptive optimizer (RMSProp).
class RmsProp {
public:
    RmsProp(std::vector<Parameter*> params, double learning_rate, double decay = 0.9,
            double epsilon = 1e-8)
        : params_(std::move(params)), lr_(learning_rate), decay_(decay), eps_(epsilon) {
        for (Parameter* p : params_) state_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter* p = params_[i];
            state_[i] = decay_ * state_[i] + (1.0 - decay_) * p->grad.cwiseProduct(p->grad);
            p->value -= lr_ * p->grad.cwiseQuotient((state_[i].cwiseSqrt().array() + eps_).matrix());
        }
    }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> state_;
    double lr_, decay_, eps_;
};

void scale_gradients(const std::vector<Parameter*>& params, double factor) {
    for (Parameter* p : params) p->grad *= factor;
}

void clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
    double total = 0.0;
    for (const Parameter* p : params) total += p->grad.squaredNorm();
    total = std::sqrt(total);
    if (total > max_norm && total > 0.0) scale_gradients(params, max_norm / total);
}

void zero_gradients(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

struct PreparedSample {
    const QAInstruction* pair = nullptr;
    const SampleFeatures* features = nullptr;
    std::vector<int> question_ids;
    std::vector<int> target_ids;  // answer tokens + <eos>
};

Var sample_loss(const VqaModel& model, const PreparedSample& sample) {
    const SpatialFeatures& sp = sample.features->spatial;
    Var z_sp = model.spatial_projector->forward(Var::constant(sp.tensor.data), sp.chunk_count());
    Var z_text = model.decoder->embed_node(sample.question_ids);

    std::vector<Var> blocks;
    blocks.push_back(z_sp);
    if (model.config.use_temporal_tokens)
        blocks.push_back(model.temporal_projector->forward(Var::constant(sample.features->temporal.tensor.data)));
    blocks.push_back(z_text);
    Var z_all = autograd::concat_rows(blocks);
    return model.decoder->loss_node(z_all, sample.target_ids);
}

void save_loss_curve(const std::filesystem::path& path, const TrainResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss curve: " + path.string());
    out << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
        out << e + 1 << "," << result.train_loss[e] << ",";
        if (e < result.val_loss.size()) out << result.val_loss[e];
        out << "\n";
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(data_fraction > 0.0) || data_fraction > 1.0) throw ConfigError("data_fraction must be in (0, 1]");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw ConfigError("validation_fraction must be in [0, 1)");
    if (n_t < 1) throw ConfigError("n_t must be >= 1");
    if (tau < 0) throw ConfigError("tau must be >= 0 (0 = frame rate)");
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (spatial_patch < 1) throw ConfigError("spatial_patch must be >= 1");
    if (c_sp < 1 || c_tp < 1) throw ConfigError("feature widths must be >= 1");
    if (projector_heads < 1 || decoder_heads < 1) throw ConfigError("head counts must be >= 1");
    if (d_model % decoder_heads != 0) throw ConfigError("d_model must be divisible by decoder_heads");
    if (spatial_projector == "vit" && c_sp % projector_heads != 0)
        throw ConfigError("c_sp must be divisible by projector_heads for the vit projector");
    if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
    if (max_answer_len < 1) throw ConfigError("max_answer_len must be >= 1");
    if (grad_clip <= 0.0) throw ConfigError("grad_clip must be > 0");
    if (template_count < 1) throw ConfigError("template_count must be >= 1");
    if (max_image_placeholders < 1) throw ConfigError("max_image_placeholders must be >= 1");
    if (target_height < 1 || target_width < 1) throw ConfigError("target size must be positive");
    if (spatial_backend == "toy-spatial" &&
        (target_height % spatial_patch != 0 || target_width % spatial_patch != 0))
        throw ConfigError("target size must be divisible by spatial_patch");
    spatial_variant_from_string(spatial_projector);
}

TrainConfig TrainConfig::architecture_with_loop_knobs(const TrainConfig& architecture) const {
    TrainConfig merged = architecture;
    merged.batch_size = batch_size;
    merged.learning_rate = learning_rate;
    merged.epochs = epochs;
    merged.multi_task = multi_task;
    merged.train_projectors_only = train_projectors_only;
    merged.seed = seed;
    merged.data_fraction = data_fraction;
    merged.validation_fraction = validation_fraction;
    merged.grad_clip = grad_clip;
    merged.max_answer_len = max_answer_len;
    return merged;
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"epochs", c.epochs},
             {"multi_task", c.multi_task},
             {"train_projectors_only", c.train_projectors_only},
             {"seed", c.seed},
             {"data_fraction", c.data_fraction},
             {"validation_fraction", c.validation_fraction},
             {"n_t", c.n_t},
             {"tau", c.tau},
             {"d_model", c.d_model},
             {"spatial_backend", c.spatial_backend},
             {"temporal_backend", c.temporal_backend},
             {"spatial_patch", c.spatial_patch},
             {"c_sp", c.c_sp},
             {"c_tp", c.c_tp},
             {"spatial_projector", c.spatial_projector},
             {"projector_heads", c.projector_heads},
             {"use_temporal_tokens", c.use_temporal_tokens},
             {"decoder_layers", c.decoder_layers},
             {"decoder_heads", c.decoder_heads},
             {"max_answer_len", c.max_answer_len},
             {"grad_clip", c.grad_clip},
             {"template_count", c.template_count},
             {"template_seed", c.template_seed},
             {"max_image_placeholders", c.max_image_placeholders},
             {"target_height", c.target_height},
             {"target_width", c.target_width}};
}

void from_json(const json& j, TrainConfig& c) {
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.multi_task = j.at("multi_task").get<bool>();
    c.train_projectors_only = j.at("train_projectors_only").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data_fraction = j.at("data_fraction").get<double>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.n_t = j.at("n_t").get<int>();
    c.tau = j.at("tau").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.spatial_backend = j.at("spatial_backend").get<std::string>();
    c.temporal_backend = j.at("temporal_backend").get<std::string>();
    c.spatial_patch = j.at("spatial_patch").get<int>();
    c.c_sp = j.at("c_sp").get<int>();
    c.c_tp = j.at("c_tp").get<int>();
    c.spatial_projector = j.at("spatial_projector").get<std::string>();
    c.projector_heads = j.at("projector_heads").get<int>();
    c.use_temporal_tokens = j.at("use_temporal_tokens").get<bool>();
    c.decoder_layers = j.at("decoder_layers").get<int>();
    c.decoder_heads = j.at("decoder_heads").get<int>();
    c.max_answer_len = j.at("max_answer_len").get<int>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.template_count = j.at("template_count").get<int>();
    c.template_seed = j.at("template_seed").get<std::uint64_t>();
    c.max_image_placeholders = j.at("max_image_placeholders").get<int>();
    c.target_height = j.at("target_height").get<int>();
    c.target_width = j.at("target_width").get<int>();
}

std::uint64_t TrainConfig::fingerprint() const {
    json j;
    to_json(j, *this);
    return fnv1a64(j.dump());
}

VqaModel VqaModel::create(const TrainConfig& config) {
    config.validate();

    // Configured instances go through a registry so name resolution follows
    // one code path for built-ins and externals alike.
    BackendRegistry registry;
    if (config.spatial_backend == "toy-spatial")
        registry.register_backend(std::make_shared<ToySpatialEncoder>(config.spatial_patch, config.c_sp));
    if (config.temporal_backend == "toy-temporal")
        registry.register_backend(std::make_shared<ToyTemporalEncoder>(config.c_tp));

    VqaModel model;
    model.config = config;
    model.spatial_encoder = std::dynamic_pointer_cast<SpatialEncoder>(
        registry.resolve(BackendKind::spatial, config.spatial_backend));
    model.temporal_encoder = std::dynamic_pointer_cast<TemporalEncoder>(
        registry.resolve(BackendKind::temporal, config.temporal_backend));
    model.spatial_projector = std::make_unique<SpatialProjector>(
        spatial_variant_from_string(config.spatial_projector), config.c_sp, config.d_model,
        config.projector_heads, mix_seed(config.seed, "spatial-projector"));
    model.temporal_projector = std::make_unique<TemporalProjector>(
        config.c_tp, config.n_t, config.d_model, mix_seed(config.seed, "temporal-projector"));
    model.decoder = std::make_unique<ToyDecoder>(Vocabulary::build(config.max_image_placeholders),
                                                 config.d_model, config.decoder_layers, config.decoder_heads,
                                                 mix_seed(config.seed, "decoder"));
    return model;
}

std::map<std::string, std::uint64_t> VqaModel::module_fingerprints() const {
    return {{"spatial_encoder", spatial_encoder->fingerprint()},
            {"temporal_encoder", temporal_encoder->fingerprint()},
            {"spatial_projector", spatial_projector->fingerprint()},
            {"temporal_projector", temporal_projector->fingerprint()},
            {"decoder", decoder->fingerprint()}};
}

std::vector<std::size_t> mix_tasks(const std::vector<QAInstruction>& prompts, bool multi_task,
                                   std::uint64_t seed) {
    (void)seed;  // ordering is applied per epoch; selection itself is static
    std::vector<std::size_t> mixed;
    bool has_regression = false, has_classification = false;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].task == Task::regression) has_regression = true;
        if (prompts[i].task == Task::classification) has_classification = true;
        if (multi_task || prompts[i].task == Task::regression) mixed.push_back(i);
    }
    if (multi_task && (!has_regression || !has_classification))
        throw MissingTask("multi-task stream needs both regression and classification pairs");
    if (mixed.empty()) throw MissingTask("no regression pairs in the prompt set");
    return mixed;
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& mixed, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order = mixed;
    std::mt19937_64 rng(mix_seed(seed, 0x45504f43ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("fraction must be in (0, 1]");
    const std::size_t n = manifest.records.size();
    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(n)) + 0.5);
    if (keep >= n) return manifest;

    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, "subsample"));
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(keep);
    std::sort(indices.begin(), indices.end());  // keep manifest order

    DatasetManifest out;
    out.scale_min = manifest.scale_min;
    out.scale_max = manifest.scale_max;
    for (std::size_t i : indices) out.records.push_back(manifest.records[i]);
    return out;
}

TrainResult train(VqaModel& model, const std::vector<QAInstruction>& prompts, const FeatureStore& features,
                  const TrainConfig& config) {
    config.validate();
    if (prompts.empty()) throw ConfigError("training needs a nonempty prompt set");

    // Token preparation is strict: unknown tokens are a build-time failure.
    std::vector<PreparedSample> samples;
    samples.reserve(prompts.size());
    for (const QAInstruction& pair : prompts) {
        auto it = features.find(pair.video_id);
        if (it == features.end()) throw MissingCache("no features for video: " + pair.video_id);
        PreparedSample sample;
        sample.pair = &pair;
        sample.features = &it->second;
        sample.question_ids = encode(model.decoder->vocab(), pair.question, true);
        sample.target_ids = encode(model.decoder->vocab(), pair.answer, true);
        sample.target_ids.push_back(model.decoder->vocab().eos_id());
        samples.push_back(std::move(sample));
    }

    const std::vector<std::size_t> mixed = mix_tasks(prompts, config.multi_task, config.seed);

    // Validation holdout at video granularity.
    std::set<std::string> video_ids;
    for (std::size_t i : mixed) video_ids.insert(prompts[i].video_id);
    std::set<std::string> val_videos;
    if (config.validation_fraction > 0.0 && video_ids.size() >= 2) {
        std::vector<std::string> ordered(video_ids.begin(), video_ids.end());
        std::mt19937_64 rng(mix_seed(config.seed, "validation"));
        std::shuffle(ordered.begin(), ordered.end(), rng);
        auto count = static_cast<std::size_t>(
            std::ceil(config.validation_fraction * static_cast<double>(ordered.size())) + 0.5);
        count = std::min(count, ordered.size() - 1);
        val_videos.insert(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(count));
    }
    std::vector<std::size_t> train_stream, val_stream;
    for (std::size_t i : mixed)
        (val_videos.count(prompts[i].video_id) ? val_stream : train_stream).push_back(i);
    if (train_stream.empty()) throw ConfigError("validation split left no training samples");

    std::vector<Parameter*> trainable;
    {
        auto sp = model.spatial_projector->parameters();
        auto tp = model.temporal_projector->parameters();
        trainable.insert(trainable.end(), sp.begin(), sp.end());
        if (config.use_temporal_tokens) trainable.insert(trainable.end(), tp.begin(), tp.end());
        if (!config.train_projectors_only) {
            auto dec = model.decoder->parameters();
            trainable.insert(trainable.end(), dec.begin(), dec.end());
        }
    }
    std::vector<Parameter*> all_params;
    {
        auto sp = model.spatial_projector->parameters();
        auto tp = model.temporal_projector->parameters();
        auto dec = model.decoder->parameters();
        all_params.insert(all_params.end(), sp.begin(), sp.end());
        all_params.insert(all_params.end(), tp.begin(), tp.end());
        all_params.insert(all_params.end(), dec.begin(), dec.end());
    }

    TrainResult result;
    result.fingerprints_before = model.module_fingerprints();

    RmsProp optimizer(trainable, config.learning_rate);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(train_stream, config.seed, epoch);
        double epoch_loss = 0.0;
        std::size_t at = 0;
        while (at < order.size()) {
            const std::size_t batch_end = std::min(at + static_cast<std::size_t>(config.batch_size), order.size());
            zero_gradients(all_params);
            double batch_loss = 0.0;
            for (std::size_t b = at; b < batch_end; ++b) {
                Var loss = sample_loss(model, samples[order[b]]);
                const double value = loss.value()(0, 0);
                if (!std::isfinite(value)) throw DivergenceError("non-finite training loss");
                autograd::backward(loss);
                batch_loss += value;
            }
            const auto batch_n = static_cast<double>(batch_end - at);
            // Mean-of-batch gradient; frozen modules keep their grads
            // discarded (never applied by the optimizer).
            scale_gradients(trainable, 1.0 / batch_n);
            clip_global_norm(trainable, config.grad_clip);
            optimizer.step();
            epoch_loss += batch_loss;
            at = batch_end;
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        if (!val_stream.empty()) {
            autograd::NoGradGuard guard;
            double val_loss = 0.0;
            for (std::size_t i : val_stream) val_loss += sample_loss(model, samples[i]).value()(0, 0);
            result.val_loss.push_back(val_loss / static_cast<double>(val_stream.size()));
        }
    }

    zero_gradients(all_params);
    result.epochs_completed = config.epochs;
    result.fingerprints_after = model.module_fingerprints();

    // Freezing contract: modules outside the trainable set must be untouched.
    auto must_match = [&](const std::string& name) {
        if (result.fingerprints_before.at(name) != result.fingerprints_after.at(name))
            throw DivergenceError("frozen module changed during training: " + name);
    };
    must_match("spatial_encoder");
    must_match("temporal_encoder");
    if (config.train_projectors_only) must_match("decoder");

    return result;
}

void save_checkpoint(const std::filesystem::path& dir, const VqaModel& model, const TrainResult& result) {
    std::filesystem::create_directories(dir);

    std::vector<std::pair<std::string, const Matrix*>> projector_entries;
    for (Parameter* p : const_cast<VqaModel&>(model).spatial_projector->parameters())
        projector_entries.emplace_back(p->name, &p->value);
    for (Parameter* p : const_cast<VqaModel&>(model).temporal_projector->parameters())
        projector_entries.emplace_back(p->name, &p->value);
    save_named_matrices(dir / "projector_weights.bin", projector_entries);
    model.decoder->save_weights(dir / "decoder_weights.bin");
    model.decoder->vocab().save(dir / "vocab.txt");

    json meta;
    to_json(meta["config"], model.config);
    meta["config_fingerprint"] = to_hex(model.config.fingerprint());
    meta["epochs_completed"] = result.epochs_completed;
    json frozen;
    for (const auto& [name, fp] : model.module_fingerprints()) frozen[name] = to_hex(fp);
    meta["module_fingerprints"] = frozen;
    std::ofstream out(dir / "checkpoint.json");
    if (!out) throw IoError("cannot write checkpoint: " + (dir / "checkpoint.json").string());
    out << meta.dump(2) << "\n";

    save_loss_curve(dir / "loss_curve.csv", result);
}

bool checkpoint_exists(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "checkpoint.json");
}

VqaModel load_checkpoint(const std::filesystem::path& dir) {
    const std::filesystem::path meta_path = dir / "checkpoint.json";
    std::ifstream in(meta_path);
    if (!in) throw CheckpointMissing("no checkpoint at " + dir.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint meta: " + std::string(e.what()));
    }
    TrainConfig config;
    from_json(meta.at("config"), config);
    VqaModel model = VqaModel::create(config);

    auto entries = load_named_matrices(dir / "projector_weights.bin");
    auto restore = [&entries](std::vector<Parameter*> params) {
        for (Parameter* p : params) {
            auto it = entries.find(p->name);
            if (it == entries.end()) throw IoError("missing projector weight: " + p->name);
            if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
                throw IoError("projector weight shape mismatch: " + p->name);
            p->value = it->second;
        }
    };
    restore(model.spatial_projector->parameters());
    restore(model.temporal_projector->parameters());
    model.decoder->load_weights(dir / "decoder_weights.bin");

    // Saved-state integrity: the frozen-module fingerprints recorded at save
    // time must match the reloaded weights.
    if (meta.contains("module_fingerprints")) {
        const auto recorded = meta.at("module_fingerprints");
        for (const auto& [name, fp] : model.module_fingerprints()) {
            if (recorded.contains(name) && recorded.at(name).get<std::string>() != to_hex(fp))
                throw IoError("checkpoint fingerprint mismatch for module: " + name);
        }
    }
    return model;
}

}  // namespace lmmvqa
