#include "lmmvqa/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"
#include "lmmvqa/evaluation.hpp"

namespace lmmvqa {

using nlohmann::json;

namespace {

const std::set<std::string> kRunKeys = {
    "manifest",     "test_manifests", "cache_dir", "checkpoint_dir",
    "report_dir",   "prompts_path",   "protocol",  "k_folds",
};

std::set<std::string> train_keys() {
    json j;
    to_json(j, TrainConfig{});
    std::set<std::string> keys;
    for (const auto& [key, value] : j.items()) keys.insert(key);
    return keys;
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    if (k_folds < 2) throw ConfigError("k_folds must be >= 2");
    protocol_from_string(protocol);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("bad config JSON: " + std::string(e.what()));
    }

    const std::set<std::string> known_train = train_keys();
    RunConfig config;
    json train_patch;
    to_json(train_patch, config.train);
    for (const auto& [key, value] : j.items()) {
        if (known_train.count(key)) {
            train_patch[key] = value;
        } else if (kRunKeys.count(key)) {
            continue;  // handled below
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    try {
        from_json(train_patch, config.train);
        if (j.contains("manifest")) config.manifest = j.at("manifest").get<std::string>();
        if (j.contains("test_manifests"))
            config.test_manifests = j.at("test_manifests").get<std::vector<std::string>>();
        if (j.contains("cache_dir")) config.cache_dir = j.at("cache_dir").get<std::string>();
        if (j.contains("checkpoint_dir")) config.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
        if (j.contains("report_dir")) config.report_dir = j.at("report_dir").get<std::string>();
        if (j.contains("prompts_path")) config.prompts_path = j.at("prompts_path").get<std::string>();
        if (j.contains("protocol")) config.protocol = j.at("protocol").get<std::string>();
        if (j.contains("k_folds")) config.k_folds = j.at("k_folds").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError("bad config value: " + std::string(e.what()));
    }

    if (const char* cache_root = std::getenv("LMMVQA_CACHE_ROOT"); cache_root && *cache_root)
        config.cache_dir = cache_root;

    config.validate();
    return config;
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
    json j;
    to_json(j, config.train);
    j["manifest"] = config.manifest;
    j["test_manifests"] = config.test_manifests;
    j["cache_dir"] = config.cache_dir;
    j["checkpoint_dir"] = config.checkpoint_dir;
    j["report_dir"] = config.report_dir;
    j["prompts_path"] = config.prompts_path;
    j["protocol"] = config.protocol;
    j["k_folds"] = config.k_folds;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path.string());
    out << j.dump(2) << "\n";
}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    lock_path_ = dir / ".lmmvqa.lock";
    if (std::filesystem::exists(lock_path_))
        throw ConfigError("directory is locked by another command: " + dir.string());
    std::ofstream out(lock_path_);
    if (!out) throw IoError("cannot create lock file: " + lock_path_.string());
    out << "locked\n";
    held_ = true;
}

DirectoryLock::~DirectoryLock() {
    if (held_) {
        std::error_code ec;
        std::filesystem::remove(lock_path_, ec);
    }
}

}  // namespace lmmvqa
