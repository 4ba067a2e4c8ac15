#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "lmmvqa/common.hpp"
#include "lmmvqa/preprocess.hpp"
#include "testutil.hpp"

using namespace lmmvqa;

TEST_CASE("slice_chunks floor arithmetic") {
    const FrameSequence video = testutil::random_video(300, 8, 8, 1);
    const ChunkSet chunks = slice_chunks(video, 30);
    CHECK(chunks.chunk_count() == 10);
    CHECK(chunks.tau == 30);
    // chunk 3 covers frames [90, 120)
    CHECK(chunks.chunks[3][0] == video.frames[90]);
    CHECK(chunks.chunks[3][29] == video.frames[119]);
}

TEST_CASE("slice_chunks discards the trailing partial chunk") {
    const FrameSequence video = testutil::random_video(95, 8, 8, 2);
    const ChunkSet chunks = slice_chunks(video, 30);
    CHECK(chunks.chunk_count() == 3);
    CHECK(chunks.chunks.back().back() == video.frames[89]);
}

TEST_CASE("slice_chunks rejects videos shorter than tau") {
    const FrameSequence video = testutil::random_video(29, 8, 8, 3);
    CHECK_THROWS_AS(slice_chunks(video, 30), EmptyVideo);
    CHECK_THROWS_AS(slice_chunks(video, 0), EmptyVideo);
}

TEST_CASE("select_key_frames picks the first frame of every chunk") {
    const FrameSequence video = testutil::random_video(300, 8, 8, 4);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 30));
    REQUIRE(keys.count() == 10);
    CHECK(keys.source_indices == std::vector<int>{0, 30, 60, 90, 120, 150, 180, 210, 240, 270});
    for (int j = 0; j < keys.count(); ++j) CHECK(keys.key_frames[j] == video.frames[30 * j]);
}

TEST_CASE("single chunk video") {
    const FrameSequence video = testutil::random_video(7, 8, 8, 5);
    const KeyFrameSet keys = select_key_frames(slice_chunks(video, 7));
    CHECK(keys.count() == 1);
    CHECK(keys.source_indices == std::vector<int>{0});
}

TEST_CASE("chunk partition property over random sizes") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> n_dist(1, 120);
    std::uniform_int_distribution<int> tau_dist(1, 40);
    for (int round = 0; round < 50; ++round) {
        const int n = n_dist(rng);
        const int tau = tau_dist(rng);
        const FrameSequence video = testutil::random_video(n, 4, 4, 1000 + round);
        if (n < tau) {
            CHECK_THROWS_AS(slice_chunks(video, tau), EmptyVideo);
            continue;
        }
        const ChunkSet chunks = slice_chunks(video, tau);
        CHECK(chunks.chunk_count() == n / tau);
        int at = 0;
        for (const auto& chunk : chunks.chunks) {
            REQUIRE(static_cast<int>(chunk.size()) == tau);
            for (const Frame& frame : chunk) CHECK(frame == video.frames[at++]);
        }
        CHECK(at == (n / tau) * tau);
    }
}

TEST_CASE("tau from frame rate rounds") {
    CHECK(tau_from_frame_rate(29.97) == 30);
    CHECK(tau_from_frame_rate(24.0) == 24);
    CHECK(tau_from_frame_rate(0.2) == 1);
}

TEST_CASE("raw video round trip") {
    testutil::TempDir dir("raw");
    const FrameSequence video = testutil::random_video(12, 16, 12, 6, 8.0);
    const auto path = dir.path() / "clip.rvid";
    write_raw_video(path, video);
    const FrameSequence loaded = read_raw_video(path);
    CHECK(loaded.frame_rate == video.frame_rate);
    REQUIRE(loaded.frame_count() == video.frame_count());
    for (int i = 0; i < video.frame_count(); ++i) CHECK(loaded.frames[i] == video.frames[i]);
}

TEST_CASE("load_video resizes and validates") {
    testutil::TempDir dir("load");
    const FrameSequence video = testutil::random_video(10, 24, 18, 7, 10.0);
    const auto path = dir.path() / "clip.rvid";
    write_raw_video(path, video);

    const FrameSequence loaded = load_video(path, 16, 16);
    CHECK(loaded.frame_count() == 10);
    CHECK(loaded.height() == 16);
    CHECK(loaded.width() == 16);
    CHECK(loaded.frame_rate == 10.0);
    CHECK(loaded.source_id == "clip");
}

TEST_CASE("load_video error contracts") {
    testutil::TempDir dir("err");
    CHECK_THROWS_AS(load_video(dir.path() / "missing.rvid", 8, 8), DecodeError);

    const auto corrupt = dir.path() / "corrupt.rvid";
    std::ofstream(corrupt) << "not a video";
    CHECK_THROWS_AS(load_video(corrupt, 8, 8), DecodeError);

    const auto garbage = dir.path() / "garbage.mp4";
    std::ofstream(garbage) << "still not a video";
    CHECK_THROWS(load_video(garbage, 8, 8));
}

TEST_CASE("resize is identity at the native size") {
    const Frame frame = testutil::random_video(1, 9, 13, 8).frames[0];
    CHECK(resize_bilinear(frame, 9, 13) == frame);
    const Frame shrunk = resize_bilinear(frame, 3, 5);
    CHECK(shrunk.height == 3);
    CHECK(shrunk.width == 5);
}

TEST_CASE("preprocess cache round trip") {
    testutil::TempDir dir("cache");
    const FrameSequence video = testutil::random_video(20, 16, 16, 9, 5.0);
    const ChunkSet chunks = slice_chunks(video, 5);
    const KeyFrameSet keys = select_key_frames(chunks);

    CHECK_FALSE(cache_exists(dir.path(), "vid"));
    const CacheEntry written = write_cache(dir.path(), "vid", video, chunks, keys);
    CHECK(cache_exists(dir.path(), "vid"));
    CHECK(written.chunk_count == 4);

    const CacheEntry loaded = read_cache_entry(dir.path(), "vid");
    CHECK(loaded.tau == 5);
    CHECK(loaded.chunk_count == 4);
    CHECK(loaded.source_indices == keys.source_indices);
    CHECK(loaded.frame_rate == 5.0);

    const KeyFrameSet cached_keys = read_cached_key_frames(dir.path(), "vid");
    REQUIRE(cached_keys.count() == keys.count());
    for (int j = 0; j < keys.count(); ++j) CHECK(cached_keys.key_frames[j] == keys.key_frames[j]);

    CHECK_THROWS_AS(read_cache_entry(dir.path(), "other"), MissingCache);
}
