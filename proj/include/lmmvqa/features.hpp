#pragma once

#include <filesystem>

#include <Eigen/Dense>

namespace lmmvqa {

using Matrix = Eigen::MatrixXd;

// Dense (items x rows_per_item x channels) tensor stored as a stacked
// (items * rows_per_item) x channels matrix. Spatial features use
// rows_per_item = N_p patches, temporal features use rows_per_item = 1.
struct FeatureTensor {
    Matrix data;
    int items = 0;
    int rows_per_item = 0;

    int channels() const { return static_cast<int>(data.cols()); }

    auto item(int j) const {
        return data.middleRows(static_cast<Eigen::Index>(j) * rows_per_item, rows_per_item);
    }

    bool all_finite() const { return data.allFinite(); }
};

struct SpatialFeatures {
    FeatureTensor tensor;  // K x N_p x C_sp
    int patch_size = 0;

    int chunk_count() const { return tensor.items; }
    int patches_per_frame() const { return tensor.rows_per_item; }
    int width() const { return tensor.channels(); }
};

struct TemporalFeatures {
    FeatureTensor tensor;  // K x 1 x C_tp

    int chunk_count() const { return tensor.items; }
    int width() const { return tensor.channels(); }
};

// Binary cache layout: magic "LMMVF32T", three u32 dims (items, rows_per_item,
// channels), then row-major little-endian float32 payload.
void save_feature_tensor(const std::filesystem::path& path, const FeatureTensor& tensor);
FeatureTensor load_feature_tensor(const std::filesystem::path& path);

}  // namespace lmmvqa
