#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lmmvqa/common.hpp"
#include "lmmvqa/encoders.hpp"
#include "testutil.hpp"

using namespace lmmvqa;

TEST_CASE("spatial shape law: 224x224 with p=14 gives 256 patches") {
    const ToySpatialEncoder encoder(14, 32);
    const FrameSequence video = testutil::random_video(100, 224, 224, 1, 10.0);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 10));
    const SpatialFeatures features = encode_spatial(keys, encoder);
    CHECK(features.chunk_count() == 10);
    CHECK(features.patches_per_frame() == 256);
    CHECK(features.width() == 32);
    CHECK(features.tensor.data.rows() == 10 * 256);
    CHECK(features.tensor.all_finite());
}

TEST_CASE("spatial encoder single key frame shape") {
    const ToySpatialEncoder encoder(8, 16);
    const FrameSequence video = testutil::random_video(3, 32, 32, 2, 3.0);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 3));
    const SpatialFeatures features = encode_spatial(keys, encoder);
    CHECK(features.chunk_count() == 1);
    CHECK(features.patches_per_frame() == 16);
}

TEST_CASE("spatial encoder rejects non-divisible frames") {
    const ToySpatialEncoder encoder(14, 32);
    const FrameSequence video = testutil::random_video(2, 225, 224, 3, 2.0);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 2));
    CHECK_THROWS_AS(encode_spatial(keys, encoder), ShapeError);
}

TEST_CASE("spatial encoder is deterministic and seed-free") {
    const ToySpatialEncoder a(8, 16);
    const ToySpatialEncoder b(8, 16);
    const FrameSequence video = testutil::random_video(4, 16, 16, 4, 4.0);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 4));
    CHECK((encode_spatial(keys, a).tensor.data - encode_spatial(keys, b).tensor.data).norm() == 0.0);
}

TEST_CASE("temporal shape law K x 1 x C_tp") {
    const ToyTemporalEncoder encoder(64);
    const FrameSequence video = testutil::random_video(50, 8, 8, 5, 5.0);
    const TemporalFeatures features = encode_temporal(slice_chunks(video, 5), encoder);
    CHECK(features.chunk_count() == 10);
    CHECK(features.tensor.rows_per_item == 1);
    CHECK(features.width() == 64);

    const TemporalFeatures one = encode_temporal(slice_chunks(video, 50), encoder);
    CHECK(one.chunk_count() == 1);
}

TEST_CASE("constant chunk and high-motion chunk produce different features") {
    const ToyTemporalEncoder encoder(16);

    FrameSequence constant;
    constant.frame_rate = 4.0;
    constant.source_id = "const";
    for (int i = 0; i < 8; ++i) constant.frames.push_back(make_frame(8, 8, 77));

    const FrameSequence moving = testutil::random_video(8, 8, 8, 6, 4.0);

    const auto f_const = encode_temporal(slice_chunks(constant, 8), encoder);
    const auto f_moving = encode_temporal(slice_chunks(moving, 8), encoder);

    // Direct-computation oracle for the statistics behind the features.
    const Eigen::Vector3d s_const = ToyTemporalEncoder::chunk_statistics(constant.frames);
    Eigen::Vector3d s_moving = ToyTemporalEncoder::chunk_statistics(moving.frames);
    CHECK(s_const.norm() == 0.0);
    CHECK(s_moving(0) > 0.0);
    CHECK((f_const.tensor.data - f_moving.tensor.data).norm() > 1e-6);
    CHECK(f_const.tensor.data.norm() == 0.0);
}

TEST_CASE("chunk statistics match a naive recomputation") {
    const FrameSequence video = testutil::random_video(5, 6, 6, 7, 5.0);
    const Eigen::Vector3d stats = ToyTemporalEncoder::chunk_statistics(video.frames);

    std::vector<double> diffs;
    std::vector<double> pair_means;
    for (std::size_t t = 0; t + 1 < video.frames.size(); ++t) {
        double pair_sum = 0.0;
        for (std::size_t i = 0; i < video.frames[t].rgb.size(); ++i) {
            const double d =
                std::abs(double(video.frames[t].rgb[i]) - double(video.frames[t + 1].rgb[i])) / 255.0;
            diffs.push_back(d);
            pair_sum += d;
        }
        pair_means.push_back(pair_sum / static_cast<double>(video.frames[t].rgb.size()));
    }
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= static_cast<double>(diffs.size());
    double var = 0.0;
    for (double d : diffs) var += (d - mean) * (d - mean);
    var /= static_cast<double>(diffs.size());
    double jitter = 0.0;
    for (double m : pair_means) jitter += (m - mean) * (m - mean);
    jitter /= static_cast<double>(pair_means.size());

    CHECK(stats(0) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(stats(1) == doctest::Approx(var).epsilon(1e-9));
    CHECK(stats(2) == doctest::Approx(jitter).epsilon(1e-9));
}

TEST_CASE("registry round trip and error contracts") {
    BackendRegistry registry;
    auto toy = std::make_shared<ToySpatialEncoder>(8, 16);
    registry.register_backend(toy);
    CHECK(registry.resolve(BackendKind::spatial, "toy-spatial") == toy);
    CHECK_THROWS_AS(registry.register_backend(std::make_shared<ToySpatialEncoder>(8, 16)),
                    DuplicateBackend);
    CHECK_THROWS_AS(registry.resolve(BackendKind::spatial, "missing"), UnknownBackend);
    // same name under a different kind is allowed
    CHECK_THROWS_AS(registry.resolve(BackendKind::temporal, "toy-spatial"), UnknownBackend);
    CHECK(registry.list().size() == 1);
}

TEST_CASE("global registry carries the toy backends") {
    auto& registry = BackendRegistry::global();
    CHECK(registry.resolve(BackendKind::spatial, "toy-spatial")->output_width() == 32);
    CHECK(registry.resolve(BackendKind::temporal, "toy-temporal")->output_width() == 16);
}

TEST_CASE("kind mismatch is a backend error") {
    const ToyTemporalEncoder temporal(16);
    const FrameSequence video = testutil::random_video(4, 16, 16, 8, 4.0);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 4));
    CHECK_THROWS_AS(encode_spatial(keys, temporal), BackendError);
}

TEST_CASE("external adapters refuse to construct without weights") {
    CHECK_THROWS_AS(ExternalSpatialEncoder("vit-l-14", "/nonexistent", 1024, 14), BackendError);
    CHECK_THROWS_AS(ExternalTemporalEncoder("slowfast", "/nonexistent", 2304), BackendError);
}

TEST_CASE("feature tensor disk round trip is float32 lossy but shape exact") {
    testutil::TempDir dir("feat");
    const ToySpatialEncoder encoder(8, 16);
    const FrameSequence video = testutil::random_video(6, 16, 16, 9, 3.0);
    const SpatialFeatures features = encode_spatial(select_key_frames(slice_chunks(video, 3)), encoder);

    const auto path = dir.path() / "sp.f32t";
    save_feature_tensor(path, features.tensor);
    const FeatureTensor loaded = load_feature_tensor(path);
    CHECK(loaded.items == features.tensor.items);
    CHECK(loaded.rows_per_item == features.tensor.rows_per_item);
    CHECK(loaded.channels() == features.tensor.channels());
    CHECK((loaded.data - features.tensor.data).cwiseAbs().maxCoeff() < 1e-6);
}
