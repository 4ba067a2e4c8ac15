#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmmvqa/autograd.hpp"
#include "lmmvqa/projectors.hpp"
#include "lmmvqa/prompting.hpp"

namespace lmmvqa {

// Token set with a total token<->id bijection. Specials are disjoint from
// content tokens; image placeholders are registered up to a fixed maximum.
class Vocabulary {
public:
    static Vocabulary build(int max_image_placeholders = 64);
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    // -1 when the token is not in the vocabulary.
    int id(const std::string& token) const;

    int pad_id() const { return pad_; }
    int bos_id() const { return bos_; }
    int eos_id() const { return eos_; }
    int unk_id() const { return unk_; }
    int temporal_marker_id() const { return marker_; }
    int max_image_placeholders() const { return max_placeholders_; }
    bool is_special(int id) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int pad_ = 0, bos_ = 0, eos_ = 0, unk_ = 0, marker_ = 0;
    int max_placeholders_ = 0;

    void index();
};

// Lexical split: words (with internal apostrophes), digit-by-digit numbers,
// single-character punctuation, and atomic <...> placeholder tokens.
std::vector<std::string> tokenize_text(const std::string& text);

// Strict mode throws TokenizeError on unknown tokens (training-data path);
// lenient mode maps them to <unk> (inference path). Empty text is an error.
std::vector<int> encode(const Vocabulary& vocab, const std::string& text, bool strict);

// Inverse with spacing rules chosen so the fixed answer frames round-trip
// byte-exactly. Specials are skipped.
std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids);

// Eq.-8-style aggregation: spatial block, then temporal block, then text.
struct AggregatedSequence {
    Matrix tokens;  // L_all x d_model
    std::vector<Modality> segment_map;
    Eigen::Index spatial_len = 0, temporal_len = 0, text_len = 0;

    Eigen::Index total_len() const { return tokens.rows(); }
};

AggregatedSequence aggregate_tokens(const TokenBlock& spatial, const std::optional<TokenBlock>& temporal,
                                    const TokenBlock& text);

struct GenerationOutput {
    std::vector<int> token_ids;  // includes the terminating <eos> when emitted
    std::string text;
    std::vector<double> per_step_logprobs;
};

struct QualityPrediction {
    std::optional<double> score;
    std::optional<Level> level;
    std::string raw_text;
};

// Autoregressive language-model backend behind Eq. 9/10.
class DecoderBackend {
public:
    virtual ~DecoderBackend() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual int d_model() const = 0;

    // One embedding row per token id (no positional terms).
    virtual Matrix embed(const std::vector<int>& ids) const = 0;

    // Greedy decoding; deterministic, stops at <eos> or max_len.
    virtual GenerationOutput generate(const AggregatedSequence& seq, int max_len) const = 0;

    // Mean teacher-forced negative log-likelihood of the targets.
    virtual double sequence_loss(const AggregatedSequence& seq, const std::vector<int>& targets) const = 0;
};

// Small causal transformer trained from scratch at desk scale.
class ToyDecoder final : public DecoderBackend {
public:
    ToyDecoder(Vocabulary vocab, int d_model, int layers, int heads, std::uint64_t seed);

    const Vocabulary& vocab() const override { return vocab_; }
    int d_model() const override { return d_model_; }
    int layers() const { return static_cast<int>(blocks_.size()); }
    int heads() const { return heads_; }

    Matrix embed(const std::vector<int>& ids) const override;
    GenerationOutput generate(const AggregatedSequence& seq, int max_len) const override;
    double sequence_loss(const AggregatedSequence& seq, const std::vector<int>& targets) const override;

    // Graph-building API used by the trainer.
    autograd::Var embed_node(const std::vector<int>& ids) const;
    autograd::Var logits_node(const autograd::Var& sequence) const;
    autograd::Var loss_node(const autograd::Var& z_all, const std::vector<int>& targets) const;

    std::vector<autograd::Parameter*> parameters();
    std::uint64_t fingerprint() const;

    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

private:
    Vocabulary vocab_;
    int d_model_;
    int heads_;
    autograd::Parameter embedding_;
    std::vector<std::unique_ptr<TransformerBlock>> blocks_;
    autograd::Parameter final_gamma_, final_beta_;
    autograd::Parameter w_head_, b_head_;
};

// Adapter slot for an external pretrained instruct decoder. Weights are never
// vendored; constructing it without them fails with BackendError.
class ExternalDecoder final : public DecoderBackend {
public:
    explicit ExternalDecoder(const std::filesystem::path& weights_dir);
    const Vocabulary& vocab() const override;
    int d_model() const override;
    Matrix embed(const std::vector<int>& ids) const override;
    GenerationOutput generate(const AggregatedSequence& seq, int max_len) const override;
    double sequence_loss(const AggregatedSequence& seq, const std::vector<int>& targets) const override;
};

// One embedding row per prompt token, width d_model.
TokenBlock embed_text(const std::string& prompt, const DecoderBackend& model, bool strict = true);

// Inverse of the fixed answer frames. Fills whichever fields are present;
// throws ParseError when the task's field cannot be recovered.
QualityPrediction parse_answer(const std::string& text, Task task);

// Sinusoidal position table (L x d_model), shared by decoder paths.
Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index d_model);

}  // namespace lmmvqa
