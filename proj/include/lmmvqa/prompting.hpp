#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lmmvqa {

enum class Task { regression, classification };
enum class Level { poor, fair, good };

std::string to_string(Task task);
std::string to_string(Level level);
Task task_from_string(const std::string& name);
Level level_from_string(const std::string& name);

// One instruction template. The instruction and restriction carry a "{task}"
// slot that is filled per task when a question is rendered, mirroring the
// paired per-task prompts.
struct PromptTemplate {
    int template_id = 0;
    std::string system_prompt;
    std::string instruction;
    std::string response_restriction;
};

struct QualityLabel {
    double mos = 0.0;
    Level level = Level::fair;
};

struct QAInstruction {
    std::string video_id;
    Task task = Task::regression;
    std::string question;
    std::string answer;
    int template_id = 0;

    bool operator==(const QAInstruction&) const = default;
};

struct ManifestRecord {
    std::string video_id;
    std::string path;
    double mos = 0.0;
    std::string split;  // optional tag
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    double scale_min = 0.0;
    double scale_max = 0.0;

    int size() const { return static_cast<int>(records.size()); }
};

// Deterministic rule-based grammar (politeness opener x verb x task noun
// phrase x frame clause). Throws GrammarExhausted when count exceeds the
// number of distinct instructions the grammar can produce.
std::vector<PromptTemplate> generate_templates(int count, std::uint64_t seed);

// Upper bound on distinct instructions the grammar yields.
int template_grammar_capacity();

// Every sentence the grammar and the answer frames can emit, rendered for
// both tasks. The decoder vocabulary is built from this corpus so question
// wording never falls outside it.
std::vector<std::string> grammar_corpus();

// Sort by (mos, video_id) and split into equal tertiles; remainders go to
// the lower buckets first (poor, then fair). Throws TooFewSamples for < 3.
std::map<std::string, Level> bucket_levels(const DatasetManifest& manifest);

std::string render_regression_answer(double mos);
std::string render_classification_answer(Level level);

// The temporal-block marker appended after the last image placeholder.
extern const char* const kTemporalMarker;

std::string render_question(const PromptTemplate& tpl, Task task, int chunk_count);

// One regression and one classification pair; templates drawn uniformly from
// a stream seeded by (seed, video_id) so records can be built in parallel.
std::pair<QAInstruction, QAInstruction> build_qa_pairs(const ManifestRecord& record, Level level,
                                                       std::span<const PromptTemplate> templates,
                                                       int chunk_count, std::uint64_t seed);

// JSON-lines round trip: {video_id, task, question, answer, template_id}.
void export_prompts(std::span<const QAInstruction> pairs, const std::filesystem::path& path);
std::vector<QAInstruction> import_prompts(const std::filesystem::path& path);

// Manifest ingestion: ".csv" (header video_id,path,mos) or JSON lines with
// fields {video_id, path, mos, split?}. The MOS scale is taken from the data
// unless the JSON lines carry an explicit {"scale": [min, max]} header row.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace lmmvqa
