#include "lmmvqa/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

namespace {

constexpr char kRawMagic[8] = {'L', 'M', 'M', 'V', 'R', 'A', 'W', 'V'};
constexpr double kFallbackFps = 30.0;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

Frame frame_from_mat(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Frame frame;
    frame.height = rgb.rows;
    frame.width = rgb.cols;
    frame.rgb.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
    if (rgb.isContinuous()) {
        std::memcpy(frame.rgb.data(), rgb.data, frame.rgb.size());
    } else {
        for (int y = 0; y < rgb.rows; ++y)
            std::memcpy(frame.rgb.data() + static_cast<std::size_t>(y) * rgb.cols * 3, rgb.ptr(y),
                        static_cast<std::size_t>(rgb.cols) * 3);
    }
    return frame;
}

cv::Mat mat_from_frame(const Frame& frame) {
    cv::Mat rgb(frame.height, frame.width, CV_8UC3);
    std::memcpy(rgb.data, frame.rgb.data(), frame.rgb.size());
    return rgb;
}

FrameSequence decode_with_opencv(const std::filesystem::path& path, int target_height, int target_width) {
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) throw DecodeError("cannot open video: " + path.string());
    FrameSequence video;
    video.frame_rate = cap.get(cv::CAP_PROP_FPS);
    if (!(video.frame_rate > 0.0) || !std::isfinite(video.frame_rate)) video.frame_rate = kFallbackFps;
    cv::Mat bgr;
    while (cap.read(bgr)) {
        if (bgr.empty()) break;
        Frame frame = frame_from_mat(bgr);
        video.frames.push_back(resize_bilinear(frame, target_height, target_width));
    }
    return video;
}

}  // namespace

Frame make_frame(int height, int width, std::uint8_t fill) {
    Frame frame;
    frame.height = height;
    frame.width = width;
    frame.rgb.assign(static_cast<std::size_t>(height) * width * 3, fill);
    return frame;
}

Frame resize_bilinear(const Frame& src, int target_height, int target_width) {
    if (src.height == target_height && src.width == target_width) return src;
    cv::Mat in = mat_from_frame(src);
    cv::Mat out;
    cv::resize(in, out, cv::Size(target_width, target_height), 0.0, 0.0, cv::INTER_LINEAR);
    Frame frame;
    frame.height = out.rows;
    frame.width = out.cols;
    frame.rgb.resize(static_cast<std::size_t>(out.rows) * out.cols * 3);
    std::memcpy(frame.rgb.data(), out.data, frame.rgb.size());
    return frame;
}

void FrameSequence::validate() const {
    if (frames.empty()) throw EmptyVideo("frame sequence is empty: " + source_id);
    if (!(frame_rate > 0.0)) throw DecodeError("non-positive frame rate: " + source_id);
    const int h = frames.front().height;
    const int w = frames.front().width;
    for (const Frame& f : frames) {
        if (f.height != h || f.width != w || f.rgb.size() != static_cast<std::size_t>(h) * w * 3)
            throw DecodeError("inconsistent frame geometry: " + source_id);
    }
}

FrameSequence load_video(const std::filesystem::path& path, int target_height, int target_width) {
    if (!std::filesystem::exists(path)) throw DecodeError("no such file: " + path.string());
    if (target_height < 1 || target_width < 1) throw DecodeError("invalid target size");
    FrameSequence video;
    if (path.extension() == ".rvid") {
        video = read_raw_video(path);
        for (Frame& frame : video.frames) frame = resize_bilinear(frame, target_height, target_width);
    } else {
        video = decode_with_opencv(path, target_height, target_width);
    }
    if (video.frames.empty()) throw EmptyVideo("decoded zero frames: " + path.string());
    video.source_id = path.stem().string();
    video.validate();
    return video;
}

ChunkSet slice_chunks(const FrameSequence& video, int tau) {
    if (tau < 1) throw EmptyVideo("tau must be >= 1");
    video.validate();
    const int n = video.frame_count();
    const int k = n / tau;
    if (k == 0) throw EmptyVideo("video shorter than one chunk: N=" + std::to_string(n) +
                                 " tau=" + std::to_string(tau));
    ChunkSet set;
    set.tau = tau;
    set.chunks.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        std::vector<Frame> chunk(video.frames.begin() + static_cast<std::ptrdiff_t>(j) * tau,
                                 video.frames.begin() + static_cast<std::ptrdiff_t>(j + 1) * tau);
        set.chunks.push_back(std::move(chunk));
    }
    return set;
}

KeyFrameSet select_key_frames(const ChunkSet& chunks) {
    if (chunks.chunks.empty()) throw EmptyVideo("chunk set is empty");
    KeyFrameSet keys;
    keys.key_frames.reserve(chunks.chunks.size());
    keys.source_indices.reserve(chunks.chunks.size());
    for (int j = 0; j < chunks.chunk_count(); ++j) {
        keys.key_frames.push_back(chunks.chunks[static_cast<std::size_t>(j)].front());
        keys.source_indices.push_back(chunks.tau * j);
    }
    return keys;
}

int tau_from_frame_rate(double frame_rate) {
    return std::max(1, static_cast<int>(std::lround(frame_rate)));
}

void write_raw_video(const std::filesystem::path& path, const FrameSequence& video) {
    video.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write: " + path.string());
    out.write(kRawMagic, sizeof(kRawMagic));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(video.frame_count()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(video.height()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(video.width()));
    write_pod<double>(out, video.frame_rate);
    for (const Frame& frame : video.frames)
        out.write(reinterpret_cast<const char*>(frame.rgb.data()),
                  static_cast<std::streamsize>(frame.rgb.size()));
    if (!out) throw IoError("short write: " + path.string());
}

FrameSequence read_raw_video(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open raw video: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kRawMagic, sizeof(magic)) != 0)
        throw DecodeError("bad raw video magic: " + path.string());
    const auto n = read_pod<std::uint32_t>(in);
    const auto h = read_pod<std::uint32_t>(in);
    const auto w = read_pod<std::uint32_t>(in);
    const auto fps = read_pod<double>(in);
    if (!in || h == 0 || w == 0 || h > 1u << 14 || w > 1u << 14)
        throw DecodeError("bad raw video header: " + path.string());
    FrameSequence video;
    video.frame_rate = fps > 0.0 ? fps : kFallbackFps;
    video.frames.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Frame frame = make_frame(static_cast<int>(h), static_cast<int>(w));
        in.read(reinterpret_cast<char*>(frame.rgb.data()), static_cast<std::streamsize>(frame.rgb.size()));
        if (!in) throw DecodeError("truncated raw video: " + path.string());
        video.frames.push_back(std::move(frame));
    }
    if (video.frames.empty()) throw EmptyVideo("raw video has zero frames: " + path.string());
    video.source_id = path.stem().string();
    return video;
}

bool cache_exists(const std::filesystem::path& cache_dir, const std::string& video_id) {
    return std::filesystem::exists(cache_dir / video_id / "meta.json");
}

CacheEntry write_cache(const std::filesystem::path& cache_dir, const std::string& video_id,
                       const FrameSequence& video, const ChunkSet& chunks, const KeyFrameSet& keys) {
    const std::filesystem::path dir = cache_dir / video_id;
    std::filesystem::create_directories(dir);
    CacheEntry entry;
    entry.video_id = video_id;
    entry.tau = chunks.tau;
    entry.chunk_count = chunks.chunk_count();
    entry.source_indices = keys.source_indices;
    entry.frame_rate = video.frame_rate;
    entry.height = video.height();
    entry.width = video.width();
    entry.frame_count = video.frame_count();

    for (int j = 0; j < keys.count(); ++j) {
        cv::Mat rgb = mat_from_frame(keys.key_frames[static_cast<std::size_t>(j)]);
        cv::Mat bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        char name[32];
        std::snprintf(name, sizeof(name), "key_%04d.png", j);
        if (!cv::imwrite((dir / name).string(), bgr))
            throw IoError("cannot write key frame: " + (dir / name).string());
    }

    nlohmann::json meta = {
        {"video_id", entry.video_id},   {"tau", entry.tau},
        {"chunk_count", entry.chunk_count}, {"source_indices", entry.source_indices},
        {"frame_rate", entry.frame_rate},   {"height", entry.height},
        {"width", entry.width},             {"frame_count", entry.frame_count},
    };
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write cache sidecar: " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
    return entry;
}

CacheEntry read_cache_entry(const std::filesystem::path& cache_dir, const std::string& video_id) {
    const std::filesystem::path meta_path = cache_dir / video_id / "meta.json";
    std::ifstream in(meta_path);
    if (!in) throw MissingCache("no cache entry for video: " + video_id);
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt cache sidecar for " + video_id + ": " + e.what());
    }
    CacheEntry entry;
    entry.video_id = meta.at("video_id").get<std::string>();
    entry.tau = meta.at("tau").get<int>();
    entry.chunk_count = meta.at("chunk_count").get<int>();
    entry.source_indices = meta.at("source_indices").get<std::vector<int>>();
    entry.frame_rate = meta.at("frame_rate").get<double>();
    entry.height = meta.at("height").get<int>();
    entry.width = meta.at("width").get<int>();
    entry.frame_count = meta.at("frame_count").get<int>();
    return entry;
}

KeyFrameSet read_cached_key_frames(const std::filesystem::path& cache_dir, const std::string& video_id) {
    const CacheEntry entry = read_cache_entry(cache_dir, video_id);
    KeyFrameSet keys;
    keys.source_indices = entry.source_indices;
    for (int j = 0; j < entry.chunk_count; ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "key_%04d.png", j);
        cv::Mat bgr = cv::imread((cache_dir / video_id / name).string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw MissingCache("missing cached key frame " + std::string(name) + " for " + video_id);
        keys.key_frames.push_back(frame_from_mat(bgr));
    }
    return keys;
}

}  // namespace lmmvqa
