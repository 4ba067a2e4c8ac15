#include "lmmvqa/encoders.hpp"

#include <fstream>
#include <random>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

namespace {

// Build-time constant: toy backends are seed-free from the caller's view.
constexpr std::uint64_t kToyBackendSalt = 0x6c6d6d767161ULL;

Matrix seeded_gaussian(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

// Orthonormal columns of a seeded Gaussian matrix (thin QR).
Matrix orthonormal_columns(int rows, int cols, std::uint64_t seed) {
    if (cols > rows) throw BackendError("projection needs rows >= cols");
    Matrix g = seeded_gaussian(rows, cols, seed);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    return q;
}

std::uint64_t matrix_fingerprint(const Matrix& m) {
    std::uint64_t fp = fnv1a64(&m, 0);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        fp = fnv1a64(m.col(c).data(), sizeof(double) * static_cast<std::size_t>(m.rows()), fp);
    return fp;
}

template <typename T>
void write_binary(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_binary(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

std::string to_string(BackendKind kind) {
    return kind == BackendKind::spatial ? "spatial" : "temporal";
}

void save_feature_tensor(const std::filesystem::path& path, const FeatureTensor& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write feature tensor: " + path.string());
    out.write("LMMVF32T", 8);
    write_binary<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.items));
    write_binary<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rows_per_item));
    write_binary<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.channels()));
    for (Eigen::Index r = 0; r < tensor.data.rows(); ++r)
        for (Eigen::Index c = 0; c < tensor.data.cols(); ++c)
            write_binary<float>(out, static_cast<float>(tensor.data(r, c)));
    if (!out) throw IoError("short write: " + path.string());
}

FeatureTensor load_feature_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read feature tensor: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != "LMMVF32T")
        throw IoError("bad feature tensor magic: " + path.string());
    const auto items = read_binary<std::uint32_t>(in);
    const auto rows = read_binary<std::uint32_t>(in);
    const auto channels = read_binary<std::uint32_t>(in);
    FeatureTensor tensor;
    tensor.items = static_cast<int>(items);
    tensor.rows_per_item = static_cast<int>(rows);
    tensor.data.resize(static_cast<Eigen::Index>(items) * rows, channels);
    for (Eigen::Index r = 0; r < tensor.data.rows(); ++r)
        for (Eigen::Index c = 0; c < tensor.data.cols(); ++c)
            tensor.data(r, c) = static_cast<double>(read_binary<float>(in));
    if (!in) throw IoError("truncated feature tensor: " + path.string());
    return tensor;
}

ToySpatialEncoder::ToySpatialEncoder(int patch_size, int output_width)
    : SpatialEncoder("toy-spatial", output_width, patch_size, true) {
    if (patch_size < 1) throw BackendError("patch size must be >= 1");
    const int patch_dim = 3 * patch_size * patch_size;
    if (output_width > patch_dim)
        throw BackendError("toy-spatial needs C_sp <= 3*p*p, got C_sp=" + std::to_string(output_width));
    projection_ = orthonormal_columns(
        patch_dim, output_width,
        mix_seed(kToyBackendSalt, (static_cast<std::uint64_t>(patch_size) << 32) | static_cast<unsigned>(output_width)));
}

SpatialFeatures ToySpatialEncoder::encode(const KeyFrameSet& key_frames) const {
    if (key_frames.count() == 0) throw EmptyVideo("no key frames to encode");
    const int p = patch_size();
    const Frame& first = key_frames.key_frames.front();
    if (first.height % p != 0 || first.width % p != 0)
        throw ShapeError("frame size " + std::to_string(first.height) + "x" + std::to_string(first.width) +
                         " not divisible by patch size " + std::to_string(p));
    const int grid_h = first.height / p;
    const int grid_w = first.width / p;
    const int n_patches = grid_h * grid_w;
    const int patch_dim = 3 * p * p;

    SpatialFeatures features;
    features.patch_size = p;
    features.tensor.items = key_frames.count();
    features.tensor.rows_per_item = n_patches;
    features.tensor.data.resize(static_cast<Eigen::Index>(key_frames.count()) * n_patches, output_width());

    Eigen::VectorXd patch(patch_dim);
    for (int j = 0; j < key_frames.count(); ++j) {
        const Frame& frame = key_frames.key_frames[static_cast<std::size_t>(j)];
        if (frame.height != first.height || frame.width != first.width)
            throw ShapeError("key frames disagree on geometry");
        for (int gy = 0; gy < grid_h; ++gy) {
            for (int gx = 0; gx < grid_w; ++gx) {
                int idx = 0;
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int c = 0; c < 3; ++c)
                            patch(idx++) = frame.at(gy * p + py, gx * p + px, c) / 255.0;
                features.tensor.data.row(static_cast<Eigen::Index>(j) * n_patches + gy * grid_w + gx) =
                    (patch.transpose() * projection_);
            }
        }
    }
    return features;
}

std::uint64_t ToySpatialEncoder::fingerprint() const { return matrix_fingerprint(projection_); }

ToyTemporalEncoder::ToyTemporalEncoder(int output_width)
    : TemporalEncoder("toy-temporal", output_width, true) {
    if (output_width < 3) throw BackendError("toy-temporal needs C_tp >= 3");
    projection_ = orthonormal_columns(output_width, 3, mix_seed(kToyBackendSalt, 0x74656d70ULL + output_width));
}

Eigen::Vector3d ToyTemporalEncoder::chunk_statistics(const std::vector<Frame>& chunk) {
    // Stats over per-pixel absolute inter-frame differences: global mean,
    // global variance, and the variance of the per-pair means.
    Eigen::Vector3d stats = Eigen::Vector3d::Zero();
    if (chunk.size() < 2) return stats;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    std::vector<double> pair_means;
    pair_means.reserve(chunk.size() - 1);
    for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
        const auto& a = chunk[t].rgb;
        const auto& b = chunk[t + 1].rgb;
        double pair_sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / 255.0;
            pair_sum += d;
            sum_sq += d * d;
        }
        sum += pair_sum;
        count += a.size();
        pair_means.push_back(pair_sum / static_cast<double>(a.size()));
    }
    const double mean = sum / static_cast<double>(count);
    stats(0) = mean;
    stats(1) = sum_sq / static_cast<double>(count) - mean * mean;
    double jitter = 0.0;
    for (double m : pair_means) jitter += (m - mean) * (m - mean);
    stats(2) = jitter / static_cast<double>(pair_means.size());
    return stats;
}

TemporalFeatures ToyTemporalEncoder::encode(const ChunkSet& chunks) const {
    if (chunks.chunks.empty()) throw EmptyVideo("no chunks to encode");
    // Fixed per-statistic gains bring typical motion magnitudes to O(1) so
    // the projected features sit on the same scale as token embeddings.
    const Eigen::Vector3d gains(8.0, 64.0, 512.0);
    TemporalFeatures features;
    features.tensor.items = chunks.chunk_count();
    features.tensor.rows_per_item = 1;
    features.tensor.data.resize(chunks.chunk_count(), output_width());
    for (int j = 0; j < chunks.chunk_count(); ++j) {
        const Eigen::Vector3d stats = chunk_statistics(chunks.chunks[static_cast<std::size_t>(j)]);
        features.tensor.data.row(j) = (projection_ * stats.cwiseProduct(gains)).transpose();
    }
    return features;
}

std::uint64_t ToyTemporalEncoder::fingerprint() const { return matrix_fingerprint(projection_); }

ExternalSpatialEncoder::ExternalSpatialEncoder(std::string name, const std::filesystem::path& weights_dir,
                                               int output_width, int patch_size)
    : SpatialEncoder(std::move(name), output_width, patch_size, true) {
    throw BackendError("external spatial backend weights are not bundled; expected them under " +
                       weights_dir.string());
}

SpatialFeatures ExternalSpatialEncoder::encode(const KeyFrameSet&) const {
    throw BackendError("external spatial backend is not loaded");
}

std::uint64_t ExternalSpatialEncoder::fingerprint() const { return 0; }

ExternalTemporalEncoder::ExternalTemporalEncoder(std::string name, const std::filesystem::path& weights_dir,
                                                 int output_width)
    : TemporalEncoder(std::move(name), output_width, true) {
    throw BackendError("external temporal backend weights are not bundled; expected them under " +
                       weights_dir.string());
}

TemporalFeatures ExternalTemporalEncoder::encode(const ChunkSet&) const {
    throw BackendError("external temporal backend is not loaded");
}

std::uint64_t ExternalTemporalEncoder::fingerprint() const { return 0; }

SpatialFeatures encode_spatial(const KeyFrameSet& key_frames, const EncoderBackend& backend) {
    if (backend.kind() != BackendKind::spatial)
        throw BackendError("encode_spatial needs a spatial backend, got " + backend.name());
    const auto& spatial = dynamic_cast<const SpatialEncoder&>(backend);
    SpatialFeatures features = spatial.encode(key_frames);
    if (features.tensor.items != key_frames.count() || features.width() != backend.output_width())
        throw BackendError("backend " + backend.name() + " violated its declared output shape");
    if (!features.tensor.all_finite())
        throw BackendError("backend " + backend.name() + " produced non-finite features");
    return features;
}

TemporalFeatures encode_temporal(const ChunkSet& chunks, const EncoderBackend& backend) {
    if (backend.kind() != BackendKind::temporal)
        throw BackendError("encode_temporal needs a temporal backend, got " + backend.name());
    const auto& temporal = dynamic_cast<const TemporalEncoder&>(backend);
    TemporalFeatures features = temporal.encode(chunks);
    if (features.tensor.items != chunks.chunk_count() || features.tensor.rows_per_item != 1 ||
        features.width() != backend.output_width())
        throw BackendError("backend " + backend.name() + " violated its declared output shape");
    if (!features.tensor.all_finite())
        throw BackendError("backend " + backend.name() + " produced non-finite features");
    return features;
}

void BackendRegistry::register_backend(std::shared_ptr<EncoderBackend> backend) {
    for (const auto& existing : backends_) {
        if (existing->kind() == backend->kind() && existing->name() == backend->name())
            throw DuplicateBackend("backend already registered: " + to_string(backend->kind()) + "/" +
                                   backend->name());
    }
    backends_.push_back(std::move(backend));
}

std::shared_ptr<EncoderBackend> BackendRegistry::resolve(BackendKind kind, const std::string& name) const {
    for (const auto& backend : backends_)
        if (backend->kind() == kind && backend->name() == name) return backend;
    throw UnknownBackend("no such backend: " + to_string(kind) + "/" + name);
}

std::vector<std::shared_ptr<EncoderBackend>> BackendRegistry::list() const { return backends_; }

BackendRegistry& BackendRegistry::global() {
    static BackendRegistry registry = [] {
        BackendRegistry r;
        r.register_backend(std::make_shared<ToySpatialEncoder>());
        r.register_backend(std::make_shared<ToyTemporalEncoder>());
        return r;
    }();
    return registry;
}

}  // namespace lmmvqa
