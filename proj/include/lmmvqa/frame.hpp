#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lmmvqa {

// One RGB frame, 8-bit interleaved channels, row-major.
struct Frame {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3 bytes

    std::uint8_t& at(int y, int x, int c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }

    bool operator==(const Frame& other) const = default;
};

Frame make_frame(int height, int width, std::uint8_t fill = 0);

// Bilinear resize; returns the input unchanged when the size already matches.
Frame resize_bilinear(const Frame& src, int target_height, int target_width);

// Decoded video: equally sized frames plus the container frame rate.
struct FrameSequence {
    std::vector<Frame> frames;
    double frame_rate = 0.0;
    std::string source_id;

    int frame_count() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.empty() ? 0 : frames.front().height; }
    int width() const { return frames.empty() ? 0 : frames.front().width; }

    // Throws EmptyVideo / DecodeError when the invariants do not hold.
    void validate() const;
};

}  // namespace lmmvqa
