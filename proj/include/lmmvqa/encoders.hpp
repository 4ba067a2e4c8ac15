#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lmmvqa/features.hpp"
#include "lmmvqa/preprocess.hpp"

namespace lmmvqa {

enum class BackendKind { spatial, temporal };

std::string to_string(BackendKind kind);

// A frozen feature extractor. Backends are never trained; registration
// happens once at startup and instances must be safe for concurrent
// read-only encode calls.
class EncoderBackend {
public:
    EncoderBackend(std::string name, BackendKind kind, int output_width, bool deterministic)
        : name_(std::move(name)), kind_(kind), output_width_(output_width), deterministic_(deterministic) {}
    virtual ~EncoderBackend() = default;

    const std::string& name() const { return name_; }
    BackendKind kind() const { return kind_; }
    int output_width() const { return output_width_; }
    bool deterministic() const { return deterministic_; }

    // Fingerprint of the backend's fixed state, used by the training module
    // to assert that encoders stay frozen across a run.
    virtual std::uint64_t fingerprint() const = 0;

private:
    std::string name_;
    BackendKind kind_;
    int output_width_;
    bool deterministic_;
};

class SpatialEncoder : public EncoderBackend {
public:
    SpatialEncoder(std::string name, int output_width, int patch_size, bool deterministic)
        : EncoderBackend(std::move(name), BackendKind::spatial, output_width, deterministic),
          patch_size_(patch_size) {}

    int patch_size() const { return patch_size_; }
    virtual SpatialFeatures encode(const KeyFrameSet& key_frames) const = 0;

private:
    int patch_size_;
};

class TemporalEncoder : public EncoderBackend {
public:
    TemporalEncoder(std::string name, int output_width, bool deterministic)
        : EncoderBackend(std::move(name), BackendKind::temporal, output_width, deterministic) {}

    virtual TemporalFeatures encode(const ChunkSet& chunks) const = 0;
};

// Patch embedding followed by a fixed random-orthogonal projection. The
// projection is derived from a build-time constant, so identical pixels
// always give identical features.
class ToySpatialEncoder : public SpatialEncoder {
public:
    explicit ToySpatialEncoder(int patch_size = 14, int output_width = 32);

    SpatialFeatures encode(const KeyFrameSet& key_frames) const override;
    std::uint64_t fingerprint() const override;

private:
    Matrix projection_;  // (3 * p * p) x C_sp, orthonormal columns
};

// Per-chunk motion statistics (mean/variance of inter-frame differences)
// projected to C_tp through a fixed orthonormal map.
class ToyTemporalEncoder : public TemporalEncoder {
public:
    explicit ToyTemporalEncoder(int output_width = 16);

    TemporalFeatures encode(const ChunkSet& chunks) const override;
    std::uint64_t fingerprint() const override;

    // The raw statistics vector, exposed for tests.
    static Eigen::Vector3d chunk_statistics(const std::vector<Frame>& chunk);

private:
    Matrix projection_;  // C_tp x 3, orthonormal columns
};

// Adapter for pretrained backbones (ViT-L/14, SlowFast). Weights are external
// artifacts loaded from a configured directory; they are never vendored, so
// constructing the adapter without a valid weights directory fails with
// BackendError.
class ExternalSpatialEncoder : public SpatialEncoder {
public:
    ExternalSpatialEncoder(std::string name, const std::filesystem::path& weights_dir,
                           int output_width, int patch_size);
    SpatialFeatures encode(const KeyFrameSet& key_frames) const override;
    std::uint64_t fingerprint() const override;
};

class ExternalTemporalEncoder : public TemporalEncoder {
public:
    // SlowFast-style adapters pool both pathways into the single channel axis.
    ExternalTemporalEncoder(std::string name, const std::filesystem::path& weights_dir, int output_width);
    TemporalFeatures encode(const ChunkSet& chunks) const override;
    std::uint64_t fingerprint() const override;
};

// Checks the kind and the declared output shape around the backend call.
SpatialFeatures encode_spatial(const KeyFrameSet& key_frames, const EncoderBackend& backend);
TemporalFeatures encode_temporal(const ChunkSet& chunks, const EncoderBackend& backend);

class BackendRegistry {
public:
    // Throws DuplicateBackend when (kind, name) is already taken.
    void register_backend(std::shared_ptr<EncoderBackend> backend);
    std::shared_ptr<EncoderBackend> resolve(BackendKind kind, const std::string& name) const;
    std::vector<std::shared_ptr<EncoderBackend>> list() const;

    // Process-wide registry preloaded with the toy backends.
    static BackendRegistry& global();

private:
    std::vector<std::shared_ptr<EncoderBackend>> backends_;
};

}  // namespace lmmvqa
