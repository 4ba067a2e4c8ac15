#pragma once

#include <filesystem>
#include <vector>

#include "lmmvqa/frame.hpp"

namespace lmmvqa {

// K non-overlapping chunks of exactly tau consecutive frames each.
struct ChunkSet {
    std::vector<std::vector<Frame>> chunks;
    int tau = 0;

    int chunk_count() const { return static_cast<int>(chunks.size()); }
};

// First frame of every chunk together with its index in the source video.
struct KeyFrameSet {
    std::vector<Frame> key_frames;
    std::vector<int> source_indices;

    int count() const { return static_cast<int>(key_frames.size()); }
};

// Decodes a video file and resizes every frame to target_height x target_width
// (bilinear). Containers are handled by OpenCV; ".rvid" is the raw format
// documented in the README. Throws DecodeError / EmptyVideo.
FrameSequence load_video(const std::filesystem::path& path, int target_height, int target_width);

// Splits the video into K = floor(N / tau) chunks of tau frames; the trailing
// N mod tau frames are discarded. Throws EmptyVideo when N < tau.
ChunkSet slice_chunks(const FrameSequence& video, int tau);

// key_frames[j] = chunks[j][0], source index tau * j.
KeyFrameSet select_key_frames(const ChunkSet& chunks);

// tau derived from the container frame rate, at least 1.
int tau_from_frame_rate(double frame_rate);

// Raw desk-scale video container (see README for the byte layout).
void write_raw_video(const std::filesystem::path& path, const FrameSequence& video);
FrameSequence read_raw_video(const std::filesystem::path& path);

// On-disk preprocessing cache: one directory per video holding the key frames
// as lossless PNGs plus a JSON sidecar with tau, K and the source indices.
struct CacheEntry {
    std::string video_id;
    int tau = 0;
    int chunk_count = 0;
    std::vector<int> source_indices;
    double frame_rate = 0.0;
    int height = 0;
    int width = 0;
    int frame_count = 0;
};

bool cache_exists(const std::filesystem::path& cache_dir, const std::string& video_id);
CacheEntry write_cache(const std::filesystem::path& cache_dir, const std::string& video_id,
                       const FrameSequence& video, const ChunkSet& chunks, const KeyFrameSet& keys);
CacheEntry read_cache_entry(const std::filesystem::path& cache_dir, const std::string& video_id);
KeyFrameSet read_cached_key_frames(const std::filesystem::path& cache_dir, const std::string& video_id);

}  // namespace lmmvqa
