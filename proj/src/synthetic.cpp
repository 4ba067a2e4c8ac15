#include "lmmvqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

namespace {

// Grayscale buffer helpers; synthetic frames keep the three channels equal.
std::vector<double> box_blur(const std::vector<double>& src, int height, int width, int radius) {
    if (radius <= 0) return src;
    std::vector<double> tmp(src.size()), out(src.size());
    const double norm = 1.0 / (2 * radius + 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double sum = 0.0;
            for (int k = -radius; k <= radius; ++k)
                sum += src[static_cast<std::size_t>(y) * width + std::clamp(x + k, 0, width - 1)];
            tmp[static_cast<std::size_t>(y) * width + x] = sum * norm;
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double sum = 0.0;
            for (int k = -radius; k <= radius; ++k)
                sum += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, height - 1)) * width + x];
            out[static_cast<std::size_t>(y) * width + x] = sum * norm;
        }
    }
    return out;
}

// Static per-video background in [88, 168]; families differ here only.
// Family 0: smooth sinusoidal field, family 1: 8x8 checker blocks.
std::vector<double> background_pattern(const SyntheticSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> gray(static_cast<std::size_t>(spec.height) * spec.width);
    if (spec.family == 0) {
        const double fx = 0.2 + 0.6 * unit(rng);
        const double fy = 0.2 + 0.6 * unit(rng);
        const double phase = 6.28318 * unit(rng);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                gray[static_cast<std::size_t>(y) * spec.width + x] =
                    128.0 + 24.0 * std::sin(fx * x + fy * y + phase);
    } else {
        const int block = 8;
        const int grid_w = (spec.width + block - 1) / block;
        const int grid_h = (spec.height + block - 1) / block;
        std::vector<double> cells(static_cast<std::size_t>(grid_w) * grid_h);
        for (double& v : cells) v = 104.0 + 48.0 * unit(rng);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                gray[static_cast<std::size_t>(y) * spec.width + x] =
                    cells[static_cast<std::size_t>(y / block) * grid_w + x / block];
    }
    return gray;
}

}  // namespace

double synthetic_mos(const SyntheticSpec& spec, double blur_radius) {
    const double t = spec.blur_max > 0.0 ? blur_radius / spec.blur_max : 0.0;
    const double mos = spec.mos_max - (spec.mos_max - spec.mos_min) * t;
    return std::round(mos * 10.0) / 10.0;
}

FrameSequence synthetic_video(const SyntheticSpec& spec, double blur_radius, std::uint64_t video_seed) {
    std::mt19937_64 rng(video_seed);
    const int lo = static_cast<int>(std::floor(blur_radius));
    const double frac = blur_radius - lo;

    // Frame = static family background + iid per-frame noise, blurred as a
    // whole. The background is shared across a family's videos, so within a
    // family only the blur level separates samples; frame differences reduce
    // to blurred noise differences, making the blur->motion-statistics curve
    // family-independent.
    std::mt19937_64 family_rng(mix_seed(spec.seed, 0xBA5EULL + static_cast<unsigned>(spec.family)));
    const std::vector<double> background = background_pattern(spec, family_rng);
    std::uniform_real_distribution<double> noise(-60.0, 60.0);

    FrameSequence video;
    video.frame_rate = spec.fps;
    video.frames.reserve(static_cast<std::size_t>(spec.frames));
    for (int f = 0; f < spec.frames; ++f) {
        std::vector<double> gray(background.size());
        for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = background[i] + noise(rng);
        const std::vector<double> blur_lo = box_blur(gray, spec.height, spec.width, lo);
        const std::vector<double> blur_hi =
            frac > 0.0 ? box_blur(gray, spec.height, spec.width, lo + 1) : blur_lo;

        Frame frame = make_frame(spec.height, spec.width);
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * spec.width + x;
                const double v = (1.0 - frac) * blur_lo[i] + frac * blur_hi[i];
                const auto byte = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
                frame.at(y, x, 0) = byte;
                frame.at(y, x, 1) = byte;
                frame.at(y, x, 2) = byte;
            }
        }
        video.frames.push_back(std::move(frame));
    }
    return video;
}

DatasetManifest generate_synthetic_corpus(const std::filesystem::path& dir, const SyntheticSpec& spec) {
    if (spec.count < 1) throw ConfigError("synthetic corpus needs count >= 1");
    std::filesystem::create_directories(dir);

    DatasetManifest manifest;
    manifest.scale_min = spec.mos_min;
    manifest.scale_max = spec.mos_max;
    for (int i = 0; i < spec.count; ++i) {
        const double radius =
            spec.count == 1 ? 0.0 : spec.blur_max * static_cast<double>(i) / (spec.count - 1);
        const std::string video_id =
            spec.id_prefix + "_f" + std::to_string(spec.family) + "_" + std::to_string(i);
        const std::filesystem::path path = dir / (video_id + ".rvid");

        const FrameSequence video = synthetic_video(
            spec, radius, mix_seed(spec.seed, fnv1a64(video_id) + static_cast<std::uint64_t>(spec.family)));
        write_raw_video(path, video);

        ManifestRecord record;
        record.video_id = video_id;
        record.path = path.string();
        record.mos = synthetic_mos(spec, radius);
        manifest.records.push_back(std::move(record));
    }
    save_manifest(manifest, dir / "manifest.jsonl");
    return manifest;
}

}  // namespace lmmvqa
