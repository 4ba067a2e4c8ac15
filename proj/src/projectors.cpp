#include "lmmvqa/projectors.hpp"

#include <cmath>
#include <random>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

using autograd::Parameter;
using autograd::Var;

namespace detail {

Matrix uniform_init(int rows, int cols, std::uint64_t seed) {
    // Small-uniform scaled by fan-in (the row count for x*W layouts).
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

std::uint64_t parameters_fingerprint(const std::vector<Parameter*>& params) {
    std::uint64_t fp = fnv1a64("params");
    for (const Parameter* p : params) {
        fp = fnv1a64(p->name, fp);
        for (Eigen::Index c = 0; c < p->value.cols(); ++c)
            fp = fnv1a64(p->value.col(c).data(), sizeof(double) * static_cast<std::size_t>(p->value.rows()), fp);
    }
    return fp;
}

}  // namespace detail

namespace {

Matrix causal_mask(Eigen::Index length) {
    Matrix mask = Matrix::Zero(length, length);
    for (Eigen::Index r = 0; r < length; ++r)
        for (Eigen::Index c = r + 1; c < length; ++c) mask(r, c) = -1e30;
    return mask;
}

}  // namespace

SpatialProjectorVariant spatial_variant_from_string(const std::string& name) {
    if (name == "vit") return SpatialProjectorVariant::vit;
    if (name == "mlp") return SpatialProjectorVariant::mlp;
    throw ConfigError("unknown spatial projector variant: " + name);
}

std::string to_string(SpatialProjectorVariant variant) {
    return variant == SpatialProjectorVariant::vit ? "vit" : "mlp";
}

TransformerBlock::TransformerBlock(const std::string& prefix, int width_in, int heads_in, bool causal_in,
                                   std::uint64_t seed)
    : width(width_in),
      heads(heads_in),
      causal(causal_in),
      ln1_gamma(prefix + ".ln1.gamma", Matrix::Ones(1, width_in)),
      ln1_beta(prefix + ".ln1.beta", Matrix::Zero(1, width_in)),
      wq(prefix + ".attn.wq", detail::uniform_init(width_in, width_in, mix_seed(seed, 1))),
      bq(prefix + ".attn.bq", Matrix::Zero(1, width_in)),
      wk(prefix + ".attn.wk", detail::uniform_init(width_in, width_in, mix_seed(seed, 2))),
      bk(prefix + ".attn.bk", Matrix::Zero(1, width_in)),
      wv(prefix + ".attn.wv", detail::uniform_init(width_in, width_in, mix_seed(seed, 3))),
      bv(prefix + ".attn.bv", Matrix::Zero(1, width_in)),
      wo(prefix + ".attn.wo", detail::uniform_init(width_in, width_in, mix_seed(seed, 4))),
      bo(prefix + ".attn.bo", Matrix::Zero(1, width_in)),
      ln2_gamma(prefix + ".ln2.gamma", Matrix::Ones(1, width_in)),
      ln2_beta(prefix + ".ln2.beta", Matrix::Zero(1, width_in)),
      w_ff1(prefix + ".ff.w1", detail::uniform_init(width_in, 4 * width_in, mix_seed(seed, 5))),
      b_ff1(prefix + ".ff.b1", Matrix::Zero(1, 4 * width_in)),
      w_ff2(prefix + ".ff.w2", detail::uniform_init(4 * width_in, width_in, mix_seed(seed, 6))),
      b_ff2(prefix + ".ff.b2", Matrix::Zero(1, width_in)) {
    if (width_in % heads_in != 0)
        throw ConfigError("transformer width " + std::to_string(width_in) + " not divisible by " +
                          std::to_string(heads_in) + " heads");
}

Var TransformerBlock::forward(const Var& x) const {
    auto* self = const_cast<TransformerBlock*>(this);
    const Eigen::Index length = x.rows();
    const int head_dim = width / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Var normed = autograd::layer_norm_rows(x, Var::leaf(self->ln1_gamma), Var::leaf(self->ln1_beta));
    Var q = autograd::add_rowwise(autograd::matmul(normed, Var::leaf(self->wq)), Var::leaf(self->bq));
    Var k = autograd::add_rowwise(autograd::matmul(normed, Var::leaf(self->wk)), Var::leaf(self->bk));
    Var v = autograd::add_rowwise(autograd::matmul(normed, Var::leaf(self->wv)), Var::leaf(self->bv));

    Var mask = causal ? Var::constant(causal_mask(length)) : Var();
    std::vector<Var> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = autograd::slice_cols(q, static_cast<Eigen::Index>(h) * head_dim, head_dim);
        Var kh = autograd::slice_cols(k, static_cast<Eigen::Index>(h) * head_dim, head_dim);
        Var vh = autograd::slice_cols(v, static_cast<Eigen::Index>(h) * head_dim, head_dim);
        Var scores = autograd::scale(autograd::matmul(qh, autograd::transpose(kh)), att_scale);
        if (causal) scores = autograd::add(scores, mask);
        head_outputs.push_back(autograd::matmul(autograd::softmax_rows(scores), vh));
    }
    Var attended = autograd::concat_cols(head_outputs);
    Var projected = autograd::add_rowwise(autograd::matmul(attended, Var::leaf(self->wo)), Var::leaf(self->bo));
    Var after_attn = autograd::add(x, projected);

    Var normed2 =
        autograd::layer_norm_rows(after_attn, Var::leaf(self->ln2_gamma), Var::leaf(self->ln2_beta));
    Var hidden = autograd::gelu(
        autograd::add_rowwise(autograd::matmul(normed2, Var::leaf(self->w_ff1)), Var::leaf(self->b_ff1)));
    Var ff = autograd::add_rowwise(autograd::matmul(hidden, Var::leaf(self->w_ff2)), Var::leaf(self->b_ff2));
    return autograd::add(after_attn, ff);
}

std::vector<Parameter*> TransformerBlock::parameters() {
    return {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
            &ln2_gamma, &ln2_beta, &w_ff1, &b_ff1, &w_ff2, &b_ff2};
}

SpatialProjector::SpatialProjector(SpatialProjectorVariant variant, int input_width, int d_model, int heads,
                                   std::uint64_t seed)
    : variant_(variant),
      input_width_(input_width),
      d_model_(d_model),
      w_out_("spatial_proj.out.w", detail::uniform_init(input_width, d_model, mix_seed(seed, 100))),
      b_out_("spatial_proj.out.b", Matrix::Zero(1, d_model)) {
    if (variant == SpatialProjectorVariant::vit)
        block_ = std::make_unique<TransformerBlock>("spatial_proj.vit", input_width, heads, false,
                                                    mix_seed(seed, 7));
}

Var SpatialProjector::forward(const Var& stacked, int frames) const {
    if (stacked.cols() != input_width_)
        throw ShapeError("spatial projector expects width " + std::to_string(input_width_) + ", got " +
                         std::to_string(stacked.cols()));
    if (frames < 1 || stacked.rows() % frames != 0)
        throw ShapeError("stacked spatial features not divisible into frames");
    auto* self = const_cast<SpatialProjector*>(this);

    Var transformed = stacked;
    if (block_) {
        // Attention stays within each frame's patch tokens (K is a batch axis).
        const Eigen::Index per_frame = stacked.rows() / frames;
        std::vector<Var> parts;
        parts.reserve(static_cast<std::size_t>(frames));
        for (int j = 0; j < frames; ++j)
            parts.push_back(block_->forward(autograd::slice_rows(stacked, j * per_frame, per_frame)));
        transformed = autograd::concat_rows(parts);
    }
    return autograd::add_rowwise(autograd::matmul(transformed, Var::leaf(self->w_out_)),
                                 Var::leaf(self->b_out_));
}

std::vector<Parameter*> SpatialProjector::parameters() {
    std::vector<Parameter*> params;
    if (block_) {
        auto block_params = block_->parameters();
        params.insert(params.end(), block_params.begin(), block_params.end());
    }
    params.push_back(&w_out_);
    params.push_back(&b_out_);
    return params;
}

std::uint64_t SpatialProjector::fingerprint() const {
    return detail::parameters_fingerprint(const_cast<SpatialProjector*>(this)->parameters());
}

TemporalProjector::TemporalProjector(int input_width, int n_tokens, int d_model, std::uint64_t seed)
    : input_width_(input_width),
      n_tokens_(n_tokens),
      d_model_(d_model),
      w_("temporal_proj.w", detail::uniform_init(input_width, n_tokens * d_model, mix_seed(seed, 200))),
      b_("temporal_proj.b", Matrix::Zero(1, n_tokens * d_model)) {
    if (n_tokens < 1) throw ConfigError("temporal projector needs N_t >= 1");
}

Var TemporalProjector::forward(const Var& features) const {
    if (features.cols() != input_width_)
        throw ShapeError("temporal projector expects width " + std::to_string(input_width_) + ", got " +
                         std::to_string(features.cols()));
    auto* self = const_cast<TemporalProjector*>(this);
    // Each chunk expands to N_t tokens; the mean over the chunk axis keeps
    // the output length independent of K. Rows are projected one at a time
    // and averaged with an order-insensitive sum, so chunk permutations give
    // bit-identical output.
    Var weights = Var::leaf(self->w_);
    Var bias = Var::leaf(self->b_);
    std::vector<Var> per_chunk;
    per_chunk.reserve(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index k = 0; k < features.rows(); ++k)
        per_chunk.push_back(
            autograd::add_rowwise(autograd::matmul(autograd::slice_rows(features, k, 1), weights), bias));
    Var averaged = autograd::mean_rows_stable(autograd::concat_rows(per_chunk));
    return autograd::reshape_rowmajor(averaged, n_tokens_, d_model_);
}

std::vector<Parameter*> TemporalProjector::parameters() { return {&w_, &b_}; }

std::uint64_t TemporalProjector::fingerprint() const {
    return detail::parameters_fingerprint(const_cast<TemporalProjector*>(this)->parameters());
}

TokenBlock project_spatial(const SpatialFeatures& features, const SpatialProjector& proj) {
    if (!features.tensor.all_finite()) throw ShapeError("spatial features contain non-finite values");
    if (features.width() != proj.input_width())
        throw ShapeError("spatial feature width " + std::to_string(features.width()) +
                         " does not match projector input " + std::to_string(proj.input_width()));
    Var out = proj.forward(Var::constant(features.tensor.data), features.chunk_count());
    return TokenBlock{out.value(), Modality::spatial};
}

TokenBlock project_temporal(const TemporalFeatures& features, const TemporalProjector& proj) {
    if (!features.tensor.all_finite()) throw ShapeError("temporal features contain non-finite values");
    if (features.width() != proj.input_width())
        throw ShapeError("temporal feature width " + std::to_string(features.width()) +
                         " does not match projector input " + std::to_string(proj.input_width()));
    Var out = proj.forward(Var::constant(features.tensor.data));
    return TokenBlock{out.value(), Modality::temporal};
}

}  // namespace lmmvqa
