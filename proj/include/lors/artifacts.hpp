#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "lors/train.hpp"

namespace lors {

/// FNV-1a over a canonical config string; embedded in artifact filenames so
/// runs of different configs never collide.
inline std::string config_digest(const std::string& canonical) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline nlohmann::json run_record_to_json(const RunRecord& rec) {
    nlohmann::json j;
    j["task"] = rec.task;
    j["label"] = rec.label;
    j["seed"] = rec.seed;
    j["recorded_steps"] = rec.recorded_steps;
    j["final_train_loss"] =
        rec.diverged ? nlohmann::json() : nlohmann::json(rec.final_train_loss);
    j["final_loss"] = rec.diverged ? nlohmann::json() : nlohmann::json(rec.final_loss);
    j["final_metric"] = rec.final_metric;
    j["covered_params"] = rec.covered_params;
    j["total_params"] = rec.total_params;
    j["wall_seconds"] = rec.wall_seconds;
    j["diverged"] = rec.diverged;
    j["config_digest"] = rec.config_digest;
    j["metrics"] = rec.metrics;
    return j;
}

/// Writes <out_dir>/run_<digest>_<label>_seed<seed>.json plus a CSV loss
/// curve with columns step,loss. Returns the JSON path.
inline std::string persist_run(const RunRecord& rec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string stem = "run_" + (rec.config_digest.empty() ? "na" : rec.config_digest) +
                             "_" + rec.label + "_seed" + std::to_string(rec.seed);
    const std::string json_path = (fs::path(out_dir) / (stem + ".json")).string();
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw ContractError("cannot write '" + json_path + "'");
    js << run_record_to_json(rec).dump(2) << "\n";

    const std::string csv_path = (fs::path(out_dir) / (stem + ".csv")).string();
    std::ofstream cs(csv_path, std::ios::trunc);
    if (!cs) throw ContractError("cannot write '" + csv_path + "'");
    cs << "step,loss\n";
    cs.precision(17);
    for (std::size_t i = 0; i < rec.losses.size(); ++i) {
        cs << i << "," << rec.losses[i] << "\n";
    }
    return json_path;
}

inline nlohmann::json comparison_to_json(const ComparisonReport& report) {
    nlohmann::json j;
    j["task"] = report.baseline.task;
    j["baseline"] = run_record_to_json(report.baseline);
    j["candidate"] = run_record_to_json(report.candidate);
    j["loss_gap_rel"] = report.loss_gap_rel;
    j["metric_gap"] = report.metric_gap;
    j["param_ratio"] = report.param_ratio;
    j["loss_tolerance"] = report.loss_tolerance;
    j["parity"] = report.parity;
    j["verdict"] = report.verdict();
    return j;
}

inline std::string persist_comparison(const ComparisonReport& report,
                                      const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string stem = "compare_" +
                             (report.baseline.config_digest.empty()
                                  ? "na"
                                  : report.baseline.config_digest) +
                             "_seed" + std::to_string(report.baseline.seed);
    const std::string path = (fs::path(out_dir) / (stem + ".json")).string();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ContractError("cannot write '" + path + "'");
    os << comparison_to_json(report).dump(2) << "\n";
    return path;
}

}  // namespace lors
