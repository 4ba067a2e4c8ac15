#include "lmmvqa/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

namespace {

using nlohmann::json;

const std::vector<std::string> kSystemPrompts = {
    "You are an expert in video quality assessment.",
    "You are a professional video quality rater.",
    "You are a perceptual quality analyst for streaming video.",
    "You serve as an impartial judge of video quality.",
    "You are a vision specialist focused on video quality.",
};

struct VerbForms {
    std::string base;
    std::string gerund;
};

const std::vector<VerbForms> kVerbs = {
    {"assess", "assessing"},     {"evaluate", "evaluating"}, {"estimate", "estimating"},
    {"judge", "judging"},        {"rate", "rating"},         {"determine", "determining"},
    {"gauge", "gauging"},        {"appraise", "appraising"},
};

// Imperative openers take the base verb form.
const std::vector<std::string> kImperativeOpeners = {
    "Please",       "Kindly",          "Now",
    "Carefully",    "Go ahead and",    "Take a moment to",
    "First,",       "As requested,",
};

// Interrogative openers; the flag marks gerund agreement ("Would you mind").
const std::vector<std::pair<std::string, bool>> kQuestionOpeners = {
    {"Would you mind", true},
    {"Could you", false},
    {"Can you", false},
    {"Would you be willing to", false},
};

const std::vector<std::string> kTaskPhrases = {
    "the {task} of this video",
    "the {task} of the given video",
    "the overall {task} of the clip",
    "the {task} of the footage",
    "the perceptual {task} of this video",
    "the {task} of the presented video",
    "this video's {task}",
};

const std::vector<std::string> kFrameClauses = {
    "based on the provided frames",
    "using the frames shown below",
    "with the help of these frames",
    "by inspecting the following frames",
    "from the sampled key frames and motion cues",
    "after viewing the attached frames",
};

const std::vector<std::string> kRestrictions = {
    "Respond with exactly one sentence of the form {format}",
    "Your answer must be a single sentence of the form {format}",
    "Reply using only the sentence pattern {format}",
    "Give your answer strictly in the form {format}",
};

constexpr const char* kRegressionTaskWord = "quality score";
constexpr const char* kClassificationTaskWord = "quality level";
constexpr const char* kRegressionFormat =
    "'The quality score of the video is X.' where X is a number with one decimal.";
constexpr const char* kClassificationFormat =
    "'The quality of the video is L.' where L is one of poor, fair, or good.";

std::string replace_all(std::string text, const std::string& what, const std::string& with) {
    std::size_t pos = 0;
    while ((pos = text.find(what, pos)) != std::string::npos) {
        text.replace(pos, what.size(), with);
        pos += with.size();
    }
    return text;
}

std::string instruction_at(int index) {
    const int n_task = static_cast<int>(kTaskPhrases.size());
    const int n_clause = static_cast<int>(kFrameClauses.size());
    const int imperative_count = static_cast<int>(kImperativeOpeners.size() * kVerbs.size()) * n_task * n_clause;

    std::string opener, verb;
    int rest;
    if (index < imperative_count) {
        const int verb_index = index / (n_task * n_clause) % static_cast<int>(kVerbs.size());
        const int opener_index = index / (n_task * n_clause * static_cast<int>(kVerbs.size()));
        opener = kImperativeOpeners[static_cast<std::size_t>(opener_index)];
        verb = kVerbs[static_cast<std::size_t>(verb_index)].base;
        rest = index % (n_task * n_clause);
    } else {
        const int q = index - imperative_count;
        const int verb_index = q / (n_task * n_clause) % static_cast<int>(kVerbs.size());
        const int opener_index = q / (n_task * n_clause * static_cast<int>(kVerbs.size()));
        const auto& [text, gerund] = kQuestionOpeners[static_cast<std::size_t>(opener_index)];
        opener = text;
        verb = gerund ? kVerbs[static_cast<std::size_t>(verb_index)].gerund
                      : kVerbs[static_cast<std::size_t>(verb_index)].base;
        rest = q % (n_task * n_clause);
    }
    const std::string& task_phrase = kTaskPhrases[static_cast<std::size_t>(rest / n_clause)];
    const std::string& clause = kFrameClauses[static_cast<std::size_t>(rest % n_clause)];
    const bool question = index >= imperative_count;
    return opener + " " + verb + " " + task_phrase + " " + clause + (question ? "?" : ".");
}

}  // namespace

const char* const kTemporalMarker = "<video-temporal>";

std::string to_string(Task task) { return task == Task::regression ? "regression" : "classification"; }

std::string to_string(Level level) {
    switch (level) {
        case Level::poor: return "poor";
        case Level::fair: return "fair";
        default: return "good";
    }
}

Task task_from_string(const std::string& name) {
    if (name == "regression") return Task::regression;
    if (name == "classification") return Task::classification;
    throw ConfigError("unknown task: " + name);
}

Level level_from_string(const std::string& name) {
    if (name == "poor") return Level::poor;
    if (name == "fair") return Level::fair;
    if (name == "good") return Level::good;
    throw ConfigError("unknown level: " + name);
}

int template_grammar_capacity() {
    return static_cast<int>((kImperativeOpeners.size() + kQuestionOpeners.size()) * kVerbs.size() *
                            kTaskPhrases.size() * kFrameClauses.size());
}

std::vector<std::string> grammar_corpus() {
    std::vector<std::string> corpus = kSystemPrompts;
    const int capacity = template_grammar_capacity();
    corpus.reserve(static_cast<std::size_t>(capacity) * 2 + 32);
    for (int i = 0; i < capacity; ++i) {
        const std::string raw = instruction_at(i);
        corpus.push_back(replace_all(raw, "{task}", kRegressionTaskWord));
        corpus.push_back(replace_all(raw, "{task}", kClassificationTaskWord));
    }
    for (const std::string& restriction : kRestrictions) {
        corpus.push_back(replace_all(restriction, "{format}", kRegressionFormat));
        corpus.push_back(replace_all(restriction, "{format}", kClassificationFormat));
    }
    corpus.push_back(render_regression_answer(1234567890.5));
    corpus.push_back(render_classification_answer(Level::poor));
    corpus.push_back(render_classification_answer(Level::fair));
    corpus.push_back(render_classification_answer(Level::good));
    return corpus;
}

std::vector<PromptTemplate> generate_templates(int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("template count must be >= 1");
    const int capacity = template_grammar_capacity();
    if (count > capacity)
        throw GrammarExhausted("grammar yields " + std::to_string(capacity) +
                               " distinct instructions, requested " + std::to_string(count));

    std::vector<int> order(static_cast<std::size_t>(capacity));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, "templates"));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<PromptTemplate> templates;
    templates.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        PromptTemplate tpl;
        tpl.template_id = i;
        const int pick = order[static_cast<std::size_t>(i)];
        tpl.system_prompt = kSystemPrompts[static_cast<std::size_t>(pick) % kSystemPrompts.size()];
        tpl.instruction = instruction_at(pick);
        tpl.response_restriction = kRestrictions[static_cast<std::size_t>(pick) % kRestrictions.size()];
        templates.push_back(std::move(tpl));
    }
    return templates;
}

std::map<std::string, Level> bucket_levels(const DatasetManifest& manifest) {
    const int n = manifest.size();
    if (n < 3) throw TooFewSamples("tertile bucketing needs at least 3 records, got " + std::to_string(n));

    std::vector<const ManifestRecord*> sorted;
    sorted.reserve(static_cast<std::size_t>(n));
    for (const auto& record : manifest.records) sorted.push_back(&record);
    std::sort(sorted.begin(), sorted.end(), [](const ManifestRecord* a, const ManifestRecord* b) {
        if (a->mos != b->mos) return a->mos < b->mos;
        return a->video_id < b->video_id;
    });

    // Remainder samples go to the lower buckets first.
    const int base = n / 3;
    const int rem = n % 3;
    const int poor_count = base + (rem >= 1 ? 1 : 0);
    const int fair_count = base + (rem >= 2 ? 1 : 0);

    std::map<std::string, Level> levels;
    for (int i = 0; i < n; ++i) {
        Level level = Level::good;
        if (i < poor_count) level = Level::poor;
        else if (i < poor_count + fair_count) level = Level::fair;
        levels[sorted[static_cast<std::size_t>(i)]->video_id] = level;
    }
    return levels;
}

std::string render_regression_answer(double mos) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "The quality score of the video is %.1f.", mos);
    return buf;
}

std::string render_classification_answer(Level level) {
    return "The quality of the video is " + to_string(level) + ".";
}

std::string render_question(const PromptTemplate& tpl, Task task, int chunk_count) {
    if (chunk_count < 1) throw EmptyVideo("question needs at least one chunk");
    const std::string task_word =
        task == Task::regression ? kRegressionTaskWord : kClassificationTaskWord;
    const std::string format = task == Task::regression ? kRegressionFormat : kClassificationFormat;

    std::string question = tpl.system_prompt + " " + replace_all(tpl.instruction, "{task}", task_word) +
                           " " + replace_all(tpl.response_restriction, "{format}", format) + " ";
    for (int i = 1; i <= chunk_count; ++i) question += "<image-" + std::to_string(i) + ">";
    question += kTemporalMarker;
    return question;
}

std::pair<QAInstruction, QAInstruction> build_qa_pairs(const ManifestRecord& record, Level level,
                                                       std::span<const PromptTemplate> templates,
                                                       int chunk_count, std::uint64_t seed) {
    if (templates.empty()) throw ConfigError("no templates to sample from");
    if (chunk_count < 1) throw EmptyVideo("chunk count must be >= 1 for " + record.video_id);

    std::mt19937_64 rng(mix_seed(seed, record.video_id));
    std::uniform_int_distribution<std::size_t> pick(0, templates.size() - 1);

    const PromptTemplate& reg_tpl = templates[pick(rng)];
    const PromptTemplate& cls_tpl = templates[pick(rng)];

    QAInstruction regression;
    regression.video_id = record.video_id;
    regression.task = Task::regression;
    regression.question = render_question(reg_tpl, Task::regression, chunk_count);
    regression.answer = render_regression_answer(record.mos);
    regression.template_id = reg_tpl.template_id;

    QAInstruction classification;
    classification.video_id = record.video_id;
    classification.task = Task::classification;
    classification.question = render_question(cls_tpl, Task::classification, chunk_count);
    classification.answer = render_classification_answer(level);
    classification.template_id = cls_tpl.template_id;

    return {std::move(regression), std::move(classification)};
}

void export_prompts(std::span<const QAInstruction> pairs, const std::filesystem::path& path) {
    if (pairs.empty()) throw ConfigError("no prompts to export");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write prompts: " + path.string());
    for (const QAInstruction& pair : pairs) {
        json line = {{"video_id", pair.video_id},
                     {"task", to_string(pair.task)},
                     {"question", pair.question},
                     {"answer", pair.answer},
                     {"template_id", pair.template_id}};
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + path.string());
}

std::vector<QAInstruction> import_prompts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read prompts: " + path.string());
    std::vector<QAInstruction> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json parsed;
        try {
            parsed = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("bad prompt line: " + std::string(e.what()));
        }
        QAInstruction pair;
        pair.video_id = parsed.at("video_id").get<std::string>();
        pair.task = task_from_string(parsed.at("task").get<std::string>());
        pair.question = parsed.at("question").get<std::string>();
        pair.answer = parsed.at("answer").get<std::string>();
        pair.template_id = parsed.at("template_id").get<int>();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestMissing("cannot read manifest: " + path.string());
    DatasetManifest manifest;
    bool scale_declared = false;
    std::string line;

    if (path.extension() == ".csv") {
        if (!std::getline(in, line)) throw IoError("empty manifest: " + path.string());
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream row(line);
            ManifestRecord record;
            std::string mos_text;
            if (!std::getline(row, record.video_id, ',') || !std::getline(row, record.path, ',') ||
                !std::getline(row, mos_text, ','))
                throw IoError("bad manifest row: " + line);
            record.mos = std::stod(mos_text);
            manifest.records.push_back(std::move(record));
        }
    } else {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json parsed;
            try {
                parsed = json::parse(line);
            } catch (const json::exception& e) {
                throw IoError("bad manifest line: " + std::string(e.what()));
            }
            if (parsed.contains("scale")) {
                manifest.scale_min = parsed.at("scale").at(0).get<double>();
                manifest.scale_max = parsed.at("scale").at(1).get<double>();
                scale_declared = true;
                continue;
            }
            ManifestRecord record;
            record.video_id = parsed.at("video_id").get<std::string>();
            record.path = parsed.at("path").get<std::string>();
            record.mos = parsed.at("mos").get<double>();
            if (parsed.contains("split")) record.split = parsed.at("split").get<std::string>();
            manifest.records.push_back(std::move(record));
        }
    }

    if (manifest.records.empty()) throw IoError("manifest has no records: " + path.string());
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        for (std::size_t j = i + 1; j < manifest.records.size(); ++j)
            if (manifest.records[i].video_id == manifest.records[j].video_id)
                throw IoError("duplicate video_id in manifest: " + manifest.records[i].video_id);

    if (!scale_declared) {
        auto [lo, hi] = std::minmax_element(manifest.records.begin(), manifest.records.end(),
                                            [](const auto& a, const auto& b) { return a.mos < b.mos; });
        manifest.scale_min = lo->mos;
        manifest.scale_max = hi->mos;
    } else {
        for (const auto& record : manifest.records)
            if (record.mos < manifest.scale_min || record.mos > manifest.scale_max)
                throw IoError("mos outside declared scale for " + record.video_id);
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << json{{"scale", {manifest.scale_min, manifest.scale_max}}}.dump() << "\n";
    for (const auto& record : manifest.records) {
        json line = {{"video_id", record.video_id}, {"path", record.path}, {"mos", record.mos}};
        if (!record.split.empty()) line["split"] = record.split;
        out << line.dump() << "\n";
    }
}

}  // namespace lmmvqa
