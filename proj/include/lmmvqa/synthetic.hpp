#pragma once

#include <cstdint>
#include <filesystem>

#include "lmmvqa/preprocess.hpp"
#include "lmmvqa/prompting.hpp"

namespace lmmvqa {

// Procedural desk-scale corpus: noise videos with a controlled blur radius;
// MOS is a fixed monotone function of the radius. Families differ in spatial
// structure (0: per-pixel noise, 1: block noise) but share the amplitude, so
// motion statistics respond to blur the same way in both.
struct SyntheticSpec {
    int count = 8;
    int family = 0;
    int height = 32;
    int width = 32;
    int frames = 24;
    double fps = 8.0;
    double blur_max = 4.0;
    double mos_min = 20.0;
    double mos_max = 92.0;
    std::uint64_t seed = 0;
    std::string id_prefix = "syn";
};

// MOS for a blur radius under the spec's linear map, rounded to one decimal.
double synthetic_mos(const SyntheticSpec& spec, double blur_radius);

// One video with the given blur radius (box blur, fractional radii blended).
FrameSequence synthetic_video(const SyntheticSpec& spec, double blur_radius, std::uint64_t video_seed);

// Writes count .rvid files (blur radii evenly spaced over [0, blur_max]) plus
// a JSON-lines manifest, and returns the manifest.
DatasetManifest generate_synthetic_corpus(const std::filesystem::path& dir, const SyntheticSpec& spec);

}  // namespace lmmvqa
