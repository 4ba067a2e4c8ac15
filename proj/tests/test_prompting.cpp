#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "lmmvqa/common.hpp"
#include "lmmvqa/prompting.hpp"
#include "testutil.hpp"

using namespace lmmvqa;

TEST_CASE("generate_templates: count, distinctness, determinism") {
    const auto templates = generate_templates(2000, 7);
    REQUIRE(templates.size() == 2000);
    std::set<std::string> instructions;
    for (const auto& tpl : templates) {
        CHECK_FALSE(tpl.system_prompt.empty());
        CHECK_FALSE(tpl.instruction.empty());
        CHECK_FALSE(tpl.response_restriction.empty());
        instructions.insert(tpl.instruction);
    }
    CHECK(instructions.size() == 2000);

    const auto again = generate_templates(2000, 7);
    for (std::size_t i = 0; i < templates.size(); ++i) {
        CHECK(templates[i].instruction == again[i].instruction);
        CHECK(templates[i].template_id == again[i].template_id);
    }
    const auto reseeded = generate_templates(2000, 8);
    CHECK(reseeded[0].instruction != templates[0].instruction);
}

TEST_CASE("generate_templates bounds") {
    CHECK(generate_templates(1, 3).size() == 1);
    CHECK_THROWS_AS(generate_templates(template_grammar_capacity() + 1, 3), GrammarExhausted);
    CHECK(template_grammar_capacity() >= 2000);
}

TEST_CASE("bucket_levels splits equal tertiles") {
    const auto manifest = testutil::manifest_of_scores({10, 20, 30, 40, 50, 60});
    const auto levels = bucket_levels(manifest);
    CHECK(levels.at("vid_000") == Level::poor);
    CHECK(levels.at("vid_001") == Level::poor);
    CHECK(levels.at("vid_002") == Level::fair);
    CHECK(levels.at("vid_003") == Level::fair);
    CHECK(levels.at("vid_004") == Level::good);
    CHECK(levels.at("vid_005") == Level::good);
}

TEST_CASE("bucket_levels remainder goes to the lower buckets") {
    const auto manifest = testutil::manifest_of_scores({1, 2, 3, 4, 5, 6, 7});
    const auto levels = bucket_levels(manifest);
    int counts[3] = {0, 0, 0};
    for (const auto& [id, level] : levels) ++counts[static_cast<int>(level)];
    CHECK(counts[0] == 3);  // poor
    CHECK(counts[1] == 2);  // fair
    CHECK(counts[2] == 2);  // good

    const auto eight = bucket_levels(testutil::manifest_of_scores({1, 2, 3, 4, 5, 6, 7, 8}));
    int counts8[3] = {0, 0, 0};
    for (const auto& [id, level] : eight) ++counts8[static_cast<int>(level)];
    CHECK(counts8[0] == 3);
    CHECK(counts8[1] == 3);
    CHECK(counts8[2] == 2);
}

TEST_CASE("bucket_levels ties break by video_id and stay total") {
    const auto manifest = testutil::manifest_of_scores({5, 5, 5, 5, 5, 5});
    const auto levels = bucket_levels(manifest);
    CHECK(levels.size() == 6);
    CHECK(levels.at("vid_000") == Level::poor);
    CHECK(levels.at("vid_005") == Level::good);
    // deterministic across calls
    CHECK(bucket_levels(manifest) == bucket_levels(manifest));
}

TEST_CASE("bucket_levels needs three records") {
    CHECK_THROWS_AS(bucket_levels(testutil::manifest_of_scores({1, 2})), TooFewSamples);
}

TEST_CASE("bucket_levels is invariant under strictly increasing transforms") {
    const std::vector<double> scores = {12.5, 3.1, 88.0, 41.7, 41.8, 9.9, 60.2};
    const auto base = bucket_levels(testutil::manifest_of_scores(scores));
    std::vector<double> transformed;
    for (double s : scores) transformed.push_back(std::exp(s / 25.0) + 3.0);
    const auto mapped = bucket_levels(testutil::manifest_of_scores(transformed));
    CHECK(base == mapped);
}

TEST_CASE("build_qa_pairs renders both tasks with the answer frames") {
    const auto templates = generate_templates(50, 1);
    const ManifestRecord record{"clip_a", "clip_a.rvid", 67.5, ""};
    const auto [regression, classification] = build_qa_pairs(record, Level::good, templates, 8, 99);

    CHECK(regression.task == Task::regression);
    CHECK(regression.answer == "The quality score of the video is 67.5.");
    CHECK(classification.task == Task::classification);
    CHECK(classification.answer == "The quality of the video is good.");

    for (int i = 1; i <= 8; ++i) {
        const std::string placeholder = "<image-" + std::to_string(i) + ">";
        CHECK(regression.question.find(placeholder) != std::string::npos);
    }
    CHECK(regression.question.find("<image-9>") == std::string::npos);
    CHECK(regression.question.find(kTemporalMarker) != std::string::npos);

    // placeholders in order, after the quality prompt text, marker last
    std::size_t prev = 0;
    for (int i = 1; i <= 8; ++i) {
        const std::size_t pos = regression.question.find("<image-" + std::to_string(i) + ">");
        CHECK(pos > prev);
        prev = pos;
    }
    CHECK(regression.question.find(kTemporalMarker) > prev);
    CHECK(regression.question.find('<') > regression.question.find("quality"));

    // same seed, same selections
    const auto [r2, c2] = build_qa_pairs(record, Level::good, templates, 8, 99);
    CHECK(r2.question == regression.question);
    CHECK(r2.template_id == regression.template_id);
}

TEST_CASE("integer-valued scores render with one decimal") {
    const auto templates = generate_templates(5, 2);
    const ManifestRecord record{"clip_b", "clip_b.rvid", 42.0, ""};
    const auto [regression, classification] = build_qa_pairs(record, Level::fair, templates, 1, 1);
    CHECK(regression.answer == "The quality score of the video is 42.0.");
    CHECK(classification.answer == "The quality of the video is fair.");
}

TEST_CASE("prompt export/import round trip") {
    testutil::TempDir dir("prompts");
    const auto templates = generate_templates(10, 3);
    std::vector<QAInstruction> pairs;
    for (int i = 0; i < 3; ++i) {
        const ManifestRecord record{"v" + std::to_string(i), "p", 30.0 + i, ""};
        auto [regression, classification] = build_qa_pairs(record, Level::poor, templates, 2, 5);
        pairs.push_back(regression);
        pairs.push_back(classification);
    }
    const auto path = dir.path() / "prompts.jsonl";
    export_prompts(pairs, path);

    std::ifstream in(path);
    int lines = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++lines;
    CHECK(lines == 6);

    const auto loaded = import_prompts(path);
    CHECK(loaded == pairs);

    CHECK_THROWS_AS(export_prompts(pairs, dir.path() / "no_such_dir" / "x.jsonl"), IoError);
}

TEST_CASE("manifest CSV and JSONL ingestion") {
    testutil::TempDir dir("manifest");
    const auto csv_path = dir.path() / "data.csv";
    std::ofstream(csv_path) << "video_id,path,mos\nv1,/a.rvid,10.5\nv2,/b.rvid,90.0\n";
    const DatasetManifest csv = load_manifest(csv_path);
    REQUIRE(csv.size() == 2);
    CHECK(csv.records[0].video_id == "v1");
    CHECK(csv.records[1].mos == 90.0);
    CHECK(csv.scale_min == 10.5);
    CHECK(csv.scale_max == 90.0);

    const auto jsonl_path = dir.path() / "data.jsonl";
    std::ofstream(jsonl_path) << R"({"scale": [0, 100]})" << "\n"
                              << R"({"video_id": "v1", "path": "/a.rvid", "mos": 10.5})" << "\n"
                              << R"({"video_id": "v2", "path": "/b.rvid", "mos": 90.0, "split": "test"})"
                              << "\n";
    const DatasetManifest jsonl = load_manifest(jsonl_path);
    REQUIRE(jsonl.size() == 2);
    CHECK(jsonl.scale_max == 100.0);
    CHECK(jsonl.records[1].split == "test");

    // round trip through save_manifest
    const auto saved_path = dir.path() / "saved.jsonl";
    save_manifest(jsonl, saved_path);
    const DatasetManifest reloaded = load_manifest(saved_path);
    CHECK(reloaded.size() == 2);
    CHECK(reloaded.scale_min == 0.0);

    const auto dup_path = dir.path() / "dup.csv";
    std::ofstream(dup_path) << "video_id,path,mos\nv1,/a,1\nv1,/b,2\n";
    CHECK_THROWS_AS(load_manifest(dup_path), IoError);

    CHECK_THROWS_AS(load_manifest(dir.path() / "missing.csv"), ManifestMissing);
}
