#include "lmmvqa/decoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>

#include "lmmvqa/common.hpp"
#include "lmmvqa/serialize.hpp"

namespace lmmvqa {

using autograd::Parameter;
using autograd::Var;

namespace {

bool is_digit_token(const std::string& t) {
    return t.size() == 1 && std::isdigit(static_cast<unsigned char>(t[0]));
}

bool is_word_char(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
    std::vector<std::string> tokens;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '<') {
            // Atomic placeholder token like <image-3> or <video-temporal>.
            const std::size_t close = text.find('>', i);
            if (close != std::string::npos && close - i <= 24) {
                bool ok = close > i + 1;
                for (std::size_t j = i + 1; j < close && ok; ++j) {
                    const char p = text[j];
                    ok = std::islower(static_cast<unsigned char>(p)) ||
                         std::isdigit(static_cast<unsigned char>(p)) || p == '-';
                }
                if (ok) {
                    tokens.push_back(text.substr(i, close - i + 1));
                    i = close + 1;
                    continue;
                }
            }
            tokens.emplace_back(1, c);
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            std::size_t j = i + 1;
            while (j < n && (is_word_char(text[j]) ||
                             (text[j] == '\'' && j + 1 < n && is_word_char(text[j + 1]))))
                ++j;
            tokens.push_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        // Digits one token each so numeric answers stay learnable.
        tokens.emplace_back(1, c);
        ++i;
    }
    return tokens;
}

Vocabulary Vocabulary::build(int max_image_placeholders) {
    Vocabulary vocab;
    vocab.max_placeholders_ = max_image_placeholders;
    vocab.tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>", kTemporalMarker};
    for (int i = 1; i <= max_image_placeholders; ++i)
        vocab.tokens_.push_back("<image-" + std::to_string(i) + ">");

    std::set<std::string> content;
    for (const std::string& sentence : grammar_corpus())
        for (const std::string& token : tokenize_text(sentence)) content.insert(token);
    for (const std::string& token : content)
        if (token.empty() || token.front() != '<') vocab.tokens_.push_back(token);

    vocab.index();
    return vocab;
}

void Vocabulary::index() {
    ids_.clear();
    for (int i = 0; i < size(); ++i) {
        auto [it, inserted] = ids_.emplace(tokens_[static_cast<std::size_t>(i)], i);
        if (!inserted) throw ConfigError("duplicate vocabulary token: " + tokens_[static_cast<std::size_t>(i)]);
    }
    pad_ = ids_.at("<pad>");
    bos_ = ids_.at("<bos>");
    eos_ = ids_.at("<eos>");
    unk_ = ids_.at("<unk>");
    marker_ = ids_.at(kTemporalMarker);
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? -1 : it->second;
}

bool Vocabulary::is_special(int id) const { return id < 5 + max_placeholders_; }

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary: " + path.string());
    for (const std::string& token : tokens_) out << token << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary: " + path.string());
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) vocab.tokens_.push_back(line);
    // The placeholder budget is implicit in the token list.
    int max_placeholder = 0;
    for (const std::string& token : vocab.tokens_) {
        if (token.rfind("<image-", 0) == 0 && token.back() == '>')
            max_placeholder = std::max(max_placeholder, std::atoi(token.c_str() + 7));
    }
    vocab.max_placeholders_ = max_placeholder;
    vocab.index();
    return vocab;
}

std::vector<int> encode(const Vocabulary& vocab, const std::string& text, bool strict) {
    const std::vector<std::string> tokens = tokenize_text(text);
    if (tokens.empty()) throw TokenizeError("nothing to tokenize");
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& token : tokens) {
        const int id = vocab.id(token);
        if (id < 0) {
            if (strict) throw TokenizeError("unknown token '" + token + "'");
            ids.push_back(vocab.unk_id());
        } else {
            ids.push_back(id);
        }
    }
    return ids;
}

std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::string out;
    std::string prev;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size() || vocab.is_special(id)) continue;
        const std::string& token = vocab.token(id);
        const bool glue = out.empty() ||
                          (token.size() == 1 && std::strchr(".,?!", token[0]) != nullptr) ||
                          (prev == "." && is_digit_token(token)) ||
                          (is_digit_token(prev) && is_digit_token(token));
        if (!glue) out += ' ';
        out += token;
        prev = token;
    }
    return out;
}

AggregatedSequence aggregate_tokens(const TokenBlock& spatial, const std::optional<TokenBlock>& temporal,
                                    const TokenBlock& text) {
    const Eigen::Index width = text.width();
    if (spatial.width() != width)
        throw WidthMismatch("spatial width " + std::to_string(spatial.width()) + " vs text width " +
                            std::to_string(width));
    if (temporal && temporal->width() != width)
        throw WidthMismatch("temporal width " + std::to_string(temporal->width()) + " vs text width " +
                            std::to_string(width));

    AggregatedSequence seq;
    seq.spatial_len = spatial.count();
    seq.temporal_len = temporal ? temporal->count() : 0;
    seq.text_len = text.count();
    seq.tokens.resize(seq.spatial_len + seq.temporal_len + seq.text_len, width);
    seq.tokens.topRows(seq.spatial_len) = spatial.tokens;
    if (temporal) seq.tokens.middleRows(seq.spatial_len, seq.temporal_len) = temporal->tokens;
    seq.tokens.bottomRows(seq.text_len) = text.tokens;

    seq.segment_map.reserve(static_cast<std::size_t>(seq.total_len()));
    for (Eigen::Index i = 0; i < seq.spatial_len; ++i) seq.segment_map.push_back(Modality::spatial);
    for (Eigen::Index i = 0; i < seq.temporal_len; ++i) seq.segment_map.push_back(Modality::temporal);
    for (Eigen::Index i = 0; i < seq.text_len; ++i) seq.segment_map.push_back(Modality::text);
    return seq;
}

Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index d_model) {
    Matrix pos(length, d_model);
    for (Eigen::Index p = 0; p < length; ++p) {
        for (Eigen::Index i = 0; i < d_model; ++i) {
            const double rate = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d_model));
            pos(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * rate)
                                     : std::cos(static_cast<double>(p) * rate);
        }
    }
    return pos;
}

ToyDecoder::ToyDecoder(Vocabulary vocab, int d_model, int layers, int heads, std::uint64_t seed)
    : vocab_(std::move(vocab)),
      d_model_(d_model),
      heads_(heads),
      embedding_("decoder.embedding", detail::uniform_init(vocab_.size(), d_model, mix_seed(seed, 300))),
      final_gamma_("decoder.final_ln.gamma", Matrix::Ones(1, d_model)),
      final_beta_("decoder.final_ln.beta", Matrix::Zero(1, d_model)),
      w_head_("decoder.head.w", detail::uniform_init(d_model, vocab_.size(), mix_seed(seed, 301))),
      b_head_("decoder.head.b", Matrix::Zero(1, vocab_.size())) {
    if (layers < 1) throw ConfigError("decoder needs at least one layer");
    for (int l = 0; l < layers; ++l)
        blocks_.push_back(std::make_unique<TransformerBlock>("decoder.block" + std::to_string(l), d_model,
                                                             heads, true, mix_seed(seed, 400 + l)));
}

Matrix ToyDecoder::embed(const std::vector<int>& ids) const {
    Matrix out(static_cast<Eigen::Index>(ids.size()), d_model_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_.size()) throw TokenizeError("token id out of range");
        out.row(static_cast<Eigen::Index>(i)) = embedding_.value.row(ids[i]);
    }
    return out;
}

Var ToyDecoder::embed_node(const std::vector<int>& ids) const {
    auto* self = const_cast<ToyDecoder*>(this);
    return autograd::rows_gather(Var::leaf(self->embedding_), ids);
}

Var ToyDecoder::logits_node(const Var& sequence) const {
    auto* self = const_cast<ToyDecoder*>(this);
    if (sequence.cols() != d_model_) throw WidthMismatch("decoder expects width " + std::to_string(d_model_));
    Var x = autograd::add(sequence, Var::constant(sinusoidal_positions(sequence.rows(), d_model_)));
    for (const auto& block : blocks_) x = block->forward(x);
    x = autograd::layer_norm_rows(x, Var::leaf(self->final_gamma_), Var::leaf(self->final_beta_));
    return autograd::add_rowwise(autograd::matmul(x, Var::leaf(self->w_head_)), Var::leaf(self->b_head_));
}

Var ToyDecoder::loss_node(const Var& z_all, const std::vector<int>& targets) const {
    if (targets.empty()) throw ConfigError("sequence loss needs a nonempty target");
    const Eigen::Index context_len = z_all.rows();
    Var input = z_all;
    if (targets.size() > 1) {
        std::vector<int> prefix(targets.begin(), targets.end() - 1);
        input = autograd::concat_rows({z_all, embed_node(prefix)});
    }
    Var logits = logits_node(input);
    Var answer_logits =
        autograd::slice_rows(logits, context_len - 1, static_cast<Eigen::Index>(targets.size()));
    return autograd::cross_entropy_mean(answer_logits, targets);
}

double ToyDecoder::sequence_loss(const AggregatedSequence& seq, const std::vector<int>& targets) const {
    autograd::NoGradGuard guard;
    return loss_node(Var::constant(seq.tokens), targets).value()(0, 0);
}

GenerationOutput ToyDecoder::generate(const AggregatedSequence& seq, int max_len) const {
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    autograd::NoGradGuard guard;
    GenerationOutput out;
    Matrix current = seq.tokens;
    for (int step = 0; step < max_len; ++step) {
        const Matrix logits = logits_node(Var::constant(current)).value();
        const Matrix log_probs = autograd::log_softmax_rows_value(logits.bottomRows(1));
        Eigen::Index best = 0;
        log_probs.row(0).maxCoeff(&best);
        out.token_ids.push_back(static_cast<int>(best));
        out.per_step_logprobs.push_back(log_probs(0, best));
        if (static_cast<int>(best) == vocab_.eos_id()) break;
        current.conservativeResize(current.rows() + 1, Eigen::NoChange);
        current.row(current.rows() - 1) = embedding_.value.row(best);
    }
    out.text = detokenize(vocab_, out.token_ids);
    return out;
}

std::vector<Parameter*> ToyDecoder::parameters() {
    std::vector<Parameter*> params = {&embedding_};
    for (const auto& block : blocks_) {
        auto block_params = block->parameters();
        params.insert(params.end(), block_params.begin(), block_params.end());
    }
    params.push_back(&final_gamma_);
    params.push_back(&final_beta_);
    params.push_back(&w_head_);
    params.push_back(&b_head_);
    return params;
}

std::uint64_t ToyDecoder::fingerprint() const {
    return detail::parameters_fingerprint(const_cast<ToyDecoder*>(this)->parameters());
}

void ToyDecoder::save_weights(const std::filesystem::path& path) const {
    std::vector<std::pair<std::string, const Matrix*>> entries;
    for (Parameter* p : const_cast<ToyDecoder*>(this)->parameters()) entries.emplace_back(p->name, &p->value);
    save_named_matrices(path, entries);
}

void ToyDecoder::load_weights(const std::filesystem::path& path) {
    auto entries = load_named_matrices(path);
    for (Parameter* p : parameters()) {
        auto it = entries.find(p->name);
        if (it == entries.end()) throw IoError("missing decoder weight: " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw IoError("decoder weight shape mismatch: " + p->name);
        p->value = it->second;
    }
}

ExternalDecoder::ExternalDecoder(const std::filesystem::path& weights_dir) {
    throw BackendError("external decoder weights are not bundled; expected them under " +
                       weights_dir.string());
}

const Vocabulary& ExternalDecoder::vocab() const { throw BackendError("external decoder is not loaded"); }
int ExternalDecoder::d_model() const { throw BackendError("external decoder is not loaded"); }
Matrix ExternalDecoder::embed(const std::vector<int>&) const {
    throw BackendError("external decoder is not loaded");
}
GenerationOutput ExternalDecoder::generate(const AggregatedSequence&, int) const {
    throw BackendError("external decoder is not loaded");
}
double ExternalDecoder::sequence_loss(const AggregatedSequence&, const std::vector<int>&) const {
    throw BackendError("external decoder is not loaded");
}

TokenBlock embed_text(const std::string& prompt, const DecoderBackend& model, bool strict) {
    const std::vector<int> ids = encode(model.vocab(), prompt, strict);
    return TokenBlock{model.embed(ids), Modality::text};
}

QualityPrediction parse_answer(const std::string& text, Task task) {
    QualityPrediction prediction;
    prediction.raw_text = text;

    static const std::regex number_pattern(R"([-+]?[0-9]+(\.[0-9]+)?)");
    std::smatch match;
    if (std::regex_search(text, match, number_pattern)) prediction.score = std::stod(match.str());

    std::size_t best_pos = std::string::npos;
    for (Level level : {Level::poor, Level::fair, Level::good}) {
        const std::string word = to_string(level);
        std::size_t pos = 0;
        while ((pos = text.find(word, pos)) != std::string::npos) {
            const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
            const std::size_t end = pos + word.size();
            const bool right_ok = end >= text.size() || !is_word_char(text[end]);
            if (left_ok && right_ok) {
                if (pos < best_pos) {
                    best_pos = pos;
                    prediction.level = level;
                }
                break;
            }
            pos = end;
        }
    }

    if (task == Task::regression && !prediction.score)
        throw ParseError("no score found in: " + text);
    if (task == Task::classification && !prediction.level)
        throw ParseError("no quality level found in: " + text);
    return prediction;
}

}  // namespace lmmvqa
