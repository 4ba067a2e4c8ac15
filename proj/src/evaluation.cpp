#include "lmmvqa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

using nlohmann::json;

namespace {

void check_metric_input(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size()) throw DegenerateInput("metric inputs differ in length");
    if (pred.size() < 2) throw DegenerateInput("metric needs at least 2 samples");
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(pred) || constant(gt)) throw DegenerateInput("constant input vector");
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= n;
    mean_y /= n;
    double cov = 0.0, var_x = 0.0, var_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    return cov / std::sqrt(var_x * var_y);
}

// Average ranks (1-based); ties share the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
        i = j + 1;
    }
    return ranks;
}

json accuracy_to_json(const std::optional<LevelAccuracy>& accuracy) {
    if (!accuracy) return nullptr;
    json j;
    j["poor"] = accuracy->poor ? json(*accuracy->poor) : json(nullptr);
    j["fair"] = accuracy->fair ? json(*accuracy->fair) : json(nullptr);
    j["good"] = accuracy->good ? json(*accuracy->good) : json(nullptr);
    j["total"] = accuracy->total;
    return j;
}

}  // namespace

double srcc(std::span<const double> pred, std::span<const double> gt) {
    check_metric_input(pred, gt);
    const std::vector<double> rank_pred = average_ranks(pred);
    const std::vector<double> rank_gt = average_ranks(gt);
    return pearson(rank_pred, rank_gt);
}

double plcc(std::span<const double> pred, std::span<const double> gt) {
    check_metric_input(pred, gt);
    return pearson(pred, gt);
}

LevelAccuracy level_accuracy(const PredictionSet& predictions) {
    int counts[3] = {0, 0, 0};
    int correct[3] = {0, 0, 0};
    for (const PredictionRecord& record : predictions.pairs) {
        const int gt = static_cast<int>(record.label.level);
        ++counts[gt];
        if (record.prediction.level && *record.prediction.level == record.label.level) ++correct[gt];
    }
    const int total_n = counts[0] + counts[1] + counts[2];
    LevelAccuracy accuracy;
    auto ratio = [](int num, int den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    accuracy.poor = ratio(correct[0], counts[0]);
    accuracy.fair = ratio(correct[1], counts[1]);
    accuracy.good = ratio(correct[2], counts[2]);
    accuracy.total =
        total_n == 0 ? 0.0 : static_cast<double>(correct[0] + correct[1] + correct[2]) / total_n;
    return accuracy;
}

std::vector<std::vector<std::size_t>> kfold_split(const DatasetManifest& manifest, int k,
                                                  std::uint64_t seed) {
    const std::size_t n = manifest.records.size();
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    if (n < static_cast<std::size_t>(k))
        throw TooFewSamples("k-fold needs at least k records, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, "kfold"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
    return folds;
}

json report_to_json(const EvalReport& report) {
    json j;
    j["dataset"] = report.dataset;
    j["srcc"] = report.srcc;
    j["plcc"] = report.plcc;
    j["accuracy"] = accuracy_to_json(report.accuracy);
    j["n"] = report.n;
    j["parse_failures"] = report.parse_failures;
    j["fold_id"] = report.fold_id ? json(*report.fold_id) : json(nullptr);
    j["config_fingerprint"] = report.config_fingerprint;
    return j;
}

EvalReport report_from_json(const json& j) {
    EvalReport report;
    report.dataset = j.at("dataset").get<std::string>();
    report.srcc = j.at("srcc").get<double>();
    report.plcc = j.at("plcc").get<double>();
    if (!j.at("accuracy").is_null()) {
        LevelAccuracy accuracy;
        const auto& a = j.at("accuracy");
        if (!a.at("poor").is_null()) accuracy.poor = a.at("poor").get<double>();
        if (!a.at("fair").is_null()) accuracy.fair = a.at("fair").get<double>();
        if (!a.at("good").is_null()) accuracy.good = a.at("good").get<double>();
        accuracy.total = a.at("total").get<double>();
        report.accuracy = accuracy;
    }
    report.n = j.at("n").get<int>();
    report.parse_failures = j.at("parse_failures").get<int>();
    if (!j.at("fold_id").is_null()) report.fold_id = j.at("fold_id").get<int>();
    report.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    return report;
}

std::string render_report_table(std::span<const EvalReport> reports) {
    std::ostringstream out;
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("   n/a");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%6.4f", *v);
        return std::string(buf);
    };
    out << "dataset                fold    n   srcc    plcc    poor    fair    good   total  fails\n";
    for (const EvalReport& r : reports) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-22s %4s %4d %6.4f  %6.4f", r.dataset.c_str(),
                      r.fold_id ? std::to_string(*r.fold_id).c_str() : "mean", r.n, r.srcc, r.plcc);
        out << line;
        if (r.accuracy)
            out << "  " << cell(r.accuracy->poor) << "  " << cell(r.accuracy->fair) << "  "
                << cell(r.accuracy->good) << "  " << cell(r.accuracy->total);
        else
            out << "     n/a     n/a     n/a     n/a";
        out << "  " << r.parse_failures << "\n";
    }
    return out.str();
}

Protocol protocol_from_string(const std::string& name) {
    if (name == "in_sample") return Protocol::in_sample;
    if (name == "ood") return Protocol::ood;
    if (name == "finetune") return Protocol::finetune;
    throw ConfigError("unknown protocol: " + name);
}

std::string to_string(Protocol protocol) {
    switch (protocol) {
        case Protocol::in_sample: return "in_sample";
        case Protocol::ood: return "ood";
        default: return "finetune";
    }
}

}  // namespace lmmvqa
