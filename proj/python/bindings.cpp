#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lmmvqa/common.hpp"
#include "lmmvqa/decoder.hpp"
#include "lmmvqa/encoders.hpp"
#include "lmmvqa/evaluation.hpp"
#include "lmmvqa/preprocess.hpp"
#include "lmmvqa/prompting.hpp"
#include "lmmvqa/synthetic.hpp"

namespace py = pybind11;

namespace {

lmmvqa::FrameSequence frames_from_numpy(const py::array_t<std::uint8_t>& array, double frame_rate) {
    if (array.ndim() != 4 || array.shape(3) != 3)
        throw lmmvqa::DecodeError("expected frames of shape (N, H, W, 3)");
    auto view = array.unchecked<4>();
    lmmvqa::FrameSequence video;
    video.frame_rate = frame_rate;
    for (py::ssize_t f = 0; f < view.shape(0); ++f) {
        lmmvqa::Frame frame = lmmvqa::make_frame(static_cast<int>(view.shape(1)),
                                                 static_cast<int>(view.shape(2)));
        for (py::ssize_t y = 0; y < view.shape(1); ++y)
            for (py::ssize_t x = 0; x < view.shape(2); ++x)
                for (py::ssize_t c = 0; c < 3; ++c)
                    frame.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(c)) =
                        view(f, y, x, c);
        video.frames.push_back(std::move(frame));
    }
    video.source_id = "numpy";
    video.validate();
    return video;
}

py::array_t<double> tensor_to_numpy(const lmmvqa::FeatureTensor& tensor) {
    py::array_t<double> out({tensor.items, tensor.rows_per_item, tensor.channels()});
    auto view = out.mutable_unchecked<3>();
    for (int k = 0; k < tensor.items; ++k)
        for (int r = 0; r < tensor.rows_per_item; ++r)
            for (int c = 0; c < tensor.channels(); ++c)
                view(k, r, c) = tensor.data(static_cast<Eigen::Index>(k) * tensor.rows_per_item + r, c);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Video quality assessment pipeline core operations";

    py::register_exception<lmmvqa::Error>(m, "PipelineError");

    m.def(
        "chunk_video",
        [](const py::array_t<std::uint8_t>& frames, double frame_rate, int tau) {
            const lmmvqa::FrameSequence video = frames_from_numpy(frames, frame_rate);
            const lmmvqa::ChunkSet chunks = lmmvqa::slice_chunks(video, tau);
            const lmmvqa::KeyFrameSet keys = lmmvqa::select_key_frames(chunks);
            return py::make_tuple(chunks.chunk_count(), keys.source_indices);
        },
        py::arg("frames"), py::arg("frame_rate"), py::arg("tau"),
        "Chunk count and key-frame indices for an (N, H, W, 3) uint8 array");

    m.def(
        "encode_features",
        [](const py::array_t<std::uint8_t>& frames, double frame_rate, int tau, int patch_size,
           int c_sp, int c_tp) {
            const lmmvqa::FrameSequence video = frames_from_numpy(frames, frame_rate);
            const lmmvqa::ChunkSet chunks = lmmvqa::slice_chunks(video, tau);
            const lmmvqa::KeyFrameSet keys = lmmvqa::select_key_frames(chunks);
            const lmmvqa::ToySpatialEncoder spatial(patch_size, c_sp);
            const lmmvqa::ToyTemporalEncoder temporal(c_tp);
            return py::make_tuple(tensor_to_numpy(lmmvqa::encode_spatial(keys, spatial).tensor),
                                  tensor_to_numpy(lmmvqa::encode_temporal(chunks, temporal).tensor));
        },
        py::arg("frames"), py::arg("frame_rate"), py::arg("tau"), py::arg("patch_size") = 8,
        py::arg("c_sp") = 32, py::arg("c_tp") = 16,
        "Toy-backend spatial and temporal feature tensors");

    m.def(
        "srcc",
        [](const std::vector<double>& pred, const std::vector<double>& gt) {
            return lmmvqa::srcc(pred, gt);
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "plcc",
        [](const std::vector<double>& pred, const std::vector<double>& gt) {
            return lmmvqa::plcc(pred, gt);
        },
        py::arg("pred"), py::arg("gt"));

    m.def(
        "generate_templates",
        [](int count, std::uint64_t seed) {
            std::vector<py::dict> out;
            for (const lmmvqa::PromptTemplate& tpl : lmmvqa::generate_templates(count, seed)) {
                py::dict d;
                d["template_id"] = tpl.template_id;
                d["system_prompt"] = tpl.system_prompt;
                d["instruction"] = tpl.instruction;
                d["response_restriction"] = tpl.response_restriction;
                out.push_back(std::move(d));
            }
            return out;
        },
        py::arg("count"), py::arg("seed"));

    m.def(
        "bucket_levels",
        [](const std::vector<std::pair<std::string, double>>& scores) {
            lmmvqa::DatasetManifest manifest;
            for (const auto& [video_id, mos] : scores)
                manifest.records.push_back({video_id, "", mos, ""});
            std::map<std::string, std::string> out;
            for (const auto& [video_id, level] : lmmvqa::bucket_levels(manifest))
                out[video_id] = lmmvqa::to_string(level);
            return out;
        },
        py::arg("scores"), "Tertile level per video_id from (video_id, mos) pairs");

    m.def(
        "build_qa_pairs",
        [](const std::string& video_id, double mos, const std::string& level, int chunk_count,
           int template_count, std::uint64_t seed) {
            const auto templates = lmmvqa::generate_templates(template_count, seed);
            lmmvqa::ManifestRecord record{video_id, "", mos, ""};
            auto [regression, classification] = lmmvqa::build_qa_pairs(
                record, lmmvqa::level_from_string(level), templates, chunk_count, seed);
            auto to_dict = [](const lmmvqa::QAInstruction& pair) {
                py::dict d;
                d["video_id"] = pair.video_id;
                d["task"] = lmmvqa::to_string(pair.task);
                d["question"] = pair.question;
                d["answer"] = pair.answer;
                d["template_id"] = pair.template_id;
                return d;
            };
            return py::make_tuple(to_dict(regression), to_dict(classification));
        },
        py::arg("video_id"), py::arg("mos"), py::arg("level"), py::arg("chunk_count"),
        py::arg("template_count") = 2000, py::arg("seed") = 7);

    m.def(
        "parse_answer",
        [](const std::string& text, const std::string& task) {
            const lmmvqa::QualityPrediction parsed =
                lmmvqa::parse_answer(text, lmmvqa::task_from_string(task));
            py::dict d;
            d["score"] = parsed.score ? py::cast(*parsed.score) : py::none();
            d["level"] = parsed.level ? py::cast(lmmvqa::to_string(*parsed.level)) : py::none();
            return d;
        },
        py::arg("text"), py::arg("task"));

    m.def(
        "write_synthetic_corpus",
        [](const std::string& dir, int count, int family, int frames, int size, double fps,
           std::uint64_t seed) {
            lmmvqa::SyntheticSpec spec;
            spec.count = count;
            spec.family = family;
            spec.frames = frames;
            spec.height = size;
            spec.width = size;
            spec.fps = fps;
            spec.seed = seed;
            spec.id_prefix = "syn" + std::to_string(family);
            const lmmvqa::DatasetManifest manifest = lmmvqa::generate_synthetic_corpus(dir, spec);
            std::vector<py::dict> out;
            for (const lmmvqa::ManifestRecord& record : manifest.records) {
                py::dict d;
                d["video_id"] = record.video_id;
                d["path"] = record.path;
                d["mos"] = record.mos;
                out.push_back(std::move(d));
            }
            return out;
        },
        py::arg("dir"), py::arg("count") = 8, py::arg("family") = 0, py::arg("frames") = 24,
        py::arg("size") = 32, py::arg("fps") = 8.0, py::arg("seed") = 0);
}
