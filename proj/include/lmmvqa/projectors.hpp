#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lmmvqa/autograd.hpp"
#include "lmmvqa/features.hpp"

namespace lmmvqa {

enum class Modality { spatial, temporal, text };

// A contiguous run of language-space tokens from one modality.
struct TokenBlock {
    Matrix tokens;  // L_block x d_model
    Modality modality = Modality::text;

    Eigen::Index count() const { return tokens.rows(); }
    Eigen::Index width() const { return tokens.cols(); }
};

enum class SpatialProjectorVariant { vit, mlp };

SpatialProjectorVariant spatial_variant_from_string(const std::string& name);
std::string to_string(SpatialProjectorVariant variant);

// Multi-head self-attention + feed-forward block, pre-norm, used by the
// spatial projector and the toy decoder.
struct TransformerBlock {
    TransformerBlock(const std::string& prefix, int width, int heads, bool causal, std::uint64_t seed);

    autograd::Var forward(const autograd::Var& x) const;
    std::vector<autograd::Parameter*> parameters();

    int width;
    int heads;
    bool causal;

    autograd::Parameter ln1_gamma, ln1_beta;
    autograd::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    autograd::Parameter ln2_gamma, ln2_beta;
    autograd::Parameter w_ff1, b_ff1, w_ff2, b_ff2;
};

// Maps spatial features into the language token space. The vit variant runs
// one transformer block over each frame's patch tokens before the affine
// output map; the mlp variant is the affine map alone (ablation baseline).
class SpatialProjector {
public:
    SpatialProjector(SpatialProjectorVariant variant, int input_width, int d_model, int heads,
                     std::uint64_t seed);

    // stacked: (frames * N_p) x C_sp. Returns (frames * N_p) x d_model.
    autograd::Var forward(const autograd::Var& stacked, int frames) const;

    SpatialProjectorVariant variant() const { return variant_; }
    int input_width() const { return input_width_; }
    int d_model() const { return d_model_; }
    std::vector<autograd::Parameter*> parameters();
    std::uint64_t fingerprint() const;

private:
    SpatialProjectorVariant variant_;
    int input_width_;
    int d_model_;
    std::unique_ptr<TransformerBlock> block_;  // vit variant only
    autograd::Parameter w_out_, b_out_;
};

// One-layer affine map from C_tp to N_t tokens of width d_model; the chunk
// axis is averaged away so the output length is independent of K.
class TemporalProjector {
public:
    TemporalProjector(int input_width, int n_tokens, int d_model, std::uint64_t seed);

    // features: K x C_tp. Returns N_t x d_model.
    autograd::Var forward(const autograd::Var& features) const;

    int input_width() const { return input_width_; }
    int n_tokens() const { return n_tokens_; }
    int d_model() const { return d_model_; }
    std::vector<autograd::Parameter*> parameters();
    std::uint64_t fingerprint() const;

private:
    int input_width_;
    int n_tokens_;
    int d_model_;
    autograd::Parameter w_, b_;
};

// Contract wrappers over the differentiable forwards.
TokenBlock project_spatial(const SpatialFeatures& features, const SpatialProjector& proj);
TokenBlock project_temporal(const TemporalFeatures& features, const TemporalProjector& proj);

// Shared initialization and fingerprint helpers.
namespace detail {
Matrix uniform_init(int rows, int cols, std::uint64_t seed);
std::uint64_t parameters_fingerprint(const std::vector<autograd::Parameter*>& params);
}  // namespace detail

}  // namespace lmmvqa
