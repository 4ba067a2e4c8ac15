#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lmmvqa/training.hpp"

namespace lmmvqa {

// Declarative run configuration: the training recipe plus paths and the
// evaluation protocol. Loaded from JSON; unknown keys are rejected before any
// work starts. The LMMVQA_CACHE_ROOT environment variable overrides cache_dir.
struct RunConfig {
    TrainConfig train;

    std::string manifest;                     // training / fine-tuning manifest
    std::vector<std::string> test_manifests;  // held-out evaluation manifests
    std::string cache_dir = "cache";
    std::string checkpoint_dir = "checkpoint";
    std::string report_dir = "reports";
    std::string prompts_path = "prompts.jsonl";

    std::string protocol = "in_sample";
    int k_folds = 5;

    void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

// Advisory lock: refuses to run two commands against the same writable
// directory at once. Released on destruction.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path lock_path_;
    bool held_ = false;
};

}  // namespace lmmvqa
