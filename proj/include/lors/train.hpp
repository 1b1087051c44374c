#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lors/adamw.hpp"
#include "lors/tasks.hpp"

namespace lors {

/// Optimization settings for a single run. The reference detector setting is
/// lr=2.5e-5 with decay 1e-4; the desk-scale default lr is 1e-3 (picked by
/// convergence-rate sanity runs), with step drops by a factor of 10.
struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::uint64_t seed = 0;
    std::vector<int> lr_drop_steps;
    double lr_drop_factor = 0.1;
    int eval_batches = 16;

    void validate() const {
        if (steps < 0 || batch < 1 || eval_batches < 1) {
            throw ConfigError("train config requires steps >= 0, batch >= 1");
        }
        if (!(lr > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 ||
            weight_decay < 0.0) {
            throw ConfigError("train config requires lr > 0, betas in [0, 1), decay >= 0");
        }
        if (!(lr_drop_factor > 0.0) || lr_drop_factor > 1.0) {
            throw ConfigError("lr drop factor must lie in (0, 1]");
        }
    }
};

/// The full trace of one training run.
struct RunRecord {
    std::string task;    // regression_stack | patch_classify
    std::string label;   // caller-chosen, e.g. dense | lors
    std::uint64_t seed = 0;
    int recorded_steps = 0;
    std::vector<double> losses;   // one entry per executed step
    std::vector<double> metrics;  // classification: eval accuracy per eval point
    double final_train_loss = 0.0;  // loss over the training pool after the last step
    double final_loss = 0.0;        // held-out eval loss after the last step
    double final_metric = 0.0;      // held-out accuracy (classification only)
    long long covered_params = 0;  // weight count of the components under study
    long long total_params = 0;
    double wall_seconds = 0.0;
    bool diverged = false;
    std::string config_digest;
};

namespace detail {

class LrSchedule {
public:
    LrSchedule(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.lr) {}
    double at_step(int step) {
        for (int drop : cfg_.lr_drop_steps) {
            if (drop == step) lr_ *= cfg_.lr_drop_factor;
        }
        return lr_;
    }

private:
    TrainConfig cfg_;
    double lr_;
};

inline long long total_param_count(const ParamList& params) {
    long long total = 0;
    for (const NamedTensor& p : params) total += static_cast<long long>(p.tensor.numel());
    return total;
}

}  // namespace detail

/// Trains a decoder against the regression task. The task is never mutated;
/// identical (model, task, config) inputs give bit-identical records.
inline RunRecord train(MixerDecoder& model, const RegressionStackTask& task,
                       const TrainConfig& config, const std::string& label = "") {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.task = "regression_stack";
    rec.label = label.empty() ? to_string(model.config().weight_mode) : label;
    rec.seed = config.seed;
    ParamList params = model.parameters();
    rec.total_params = detail::total_param_count(params);
    rec.covered_params = model.count().weights();

    AdamW opt({.lr = config.lr,
               .beta1 = config.beta1,
               .beta2 = config.beta2,
               .weight_decay = config.weight_decay});
    detail::LrSchedule schedule(config);
    for (int step = 0; step < config.steps; ++step) {
        opt.set_lr(schedule.at_step(step));
        RegressionStackTask::Batch batch = task.sample(static_cast<std::uint64_t>(step));
        zero_grads(params);
        Tensor loss = mse(model.forward(batch.state), batch.target);
        const double loss_value = loss.value();
        rec.losses.push_back(loss_value);
        ++rec.recorded_steps;
        if (!std::isfinite(loss_value)) {
            rec.diverged = true;
            break;
        }
        backward(loss);
        opt.step(params);
    }
    if (!rec.diverged) {
        auto mean_loss = [&](const std::vector<RegressionStackTask::Batch>& batches) {
            double total = 0.0;
            for (const auto& batch : batches) {
                total += mse(model.forward(batch.state), batch.target).value();
            }
            return total / static_cast<double>(batches.size());
        };
        rec.final_train_loss = mean_loss(task.train_pool());
        rec.final_loss = mean_loss(task.eval_set(config.eval_batches));
    } else {
        rec.final_train_loss = std::numeric_limits<double>::quiet_NaN();
        rec.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Trains an encoder against the classification task; the metric is held-out
/// teacher-label accuracy.
inline RunRecord train(MiniEncoder& model, const PatchClassifyTask& task,
                       const TrainConfig& config, const std::string& label = "") {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.task = "patch_classify";
    rec.label = label.empty() ? to_string(model.config().weight_mode) : label;
    rec.seed = config.seed;
    ParamList params = model.parameters();
    rec.total_params = detail::total_param_count(params);
    rec.covered_params = model.stack_weight_count();

    const auto eval = task.eval_set(config.eval_batches);
    auto evaluate = [&] {
        int correct = 0, total = 0;
        double loss = 0.0;
        for (const auto& batch : eval) {
            Tensor logits = model.forward(batch.patches);
            loss += cross_entropy_logits(logits, batch.labels).value();
            const int classes = logits.extent(1);
            for (int i = 0; i < logits.extent(0); ++i) {
                int best = 0;
                for (int c = 1; c < classes; ++c) {
                    if (logits.data()[i * classes + c] > logits.data()[i * classes + best]) {
                        best = c;
                    }
                }
                correct += (best == batch.labels[static_cast<std::size_t>(i)]) ? 1 : 0;
                ++total;
            }
        }
        return std::pair<double, double>(loss / static_cast<double>(eval.size()),
                                         static_cast<double>(correct) / total);
    };

    AdamW opt({.lr = config.lr,
               .beta1 = config.beta1,
               .beta2 = config.beta2,
               .weight_decay = config.weight_decay});
    detail::LrSchedule schedule(config);
    const int eval_every = std::max(1, config.steps / 10);
    for (int step = 0; step < config.steps; ++step) {
        opt.set_lr(schedule.at_step(step));
        PatchClassifyTask::Batch batch = task.sample(static_cast<std::uint64_t>(step));
        zero_grads(params);
        Tensor loss = cross_entropy_logits(model.forward(batch.patches), batch.labels);
        const double loss_value = loss.value();
        rec.losses.push_back(loss_value);
        ++rec.recorded_steps;
        if (!std::isfinite(loss_value)) {
            rec.diverged = true;
            break;
        }
        backward(loss);
        opt.step(params);
        if ((step + 1) % eval_every == 0) rec.metrics.push_back(evaluate().second);
    }
    if (!rec.diverged) {
        double train_loss = 0.0;
        const auto pool = task.train_pool();
        for (const auto& batch : pool) {
            train_loss += cross_entropy_logits(model.forward(batch.patches), batch.labels)
                              .value();
        }
        rec.final_train_loss = train_loss / static_cast<double>(pool.size());
        const auto [eval_loss, accuracy] = evaluate();
        rec.final_loss = eval_loss;
        rec.final_metric = accuracy;
    } else {
        rec.final_train_loss = std::numeric_limits<double>::quiet_NaN();
        rec.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Outcome of pairing two runs of the same task family.
struct ComparisonReport {
    RunRecord baseline;  // conventionally the dense run
    RunRecord candidate;
    double loss_gap_rel = 0.0;    // (candidate - baseline) / |baseline|
    double metric_gap = 0.0;      // candidate - baseline (accuracy points for classify)
    double param_ratio = 0.0;     // candidate covered / baseline covered
    double loss_tolerance = 0.2;
    bool parity = false;

    std::string verdict() const { return parity ? "parity" : "gap"; }
};

inline ComparisonReport compare_runs(const RunRecord& baseline, const RunRecord& candidate,
                                     double loss_tolerance = 0.2) {
    if (baseline.task != candidate.task) {
        throw ContractError("comparing runs of different tasks: " + baseline.task + " vs " +
                            candidate.task);
    }
    ComparisonReport report;
    report.baseline = baseline;
    report.candidate = candidate;
    report.loss_tolerance = loss_tolerance;
    const double denom = std::max(std::fabs(baseline.final_loss), 1e-300);
    report.loss_gap_rel = (candidate.final_loss - baseline.final_loss) / denom;
    report.metric_gap = candidate.final_metric - baseline.final_metric;
    report.param_ratio = baseline.covered_params > 0
                             ? static_cast<double>(candidate.covered_params) /
                                   static_cast<double>(baseline.covered_params)
                             : 0.0;
    if (baseline.diverged || candidate.diverged) {
        report.parity = false;
    } else if (baseline.task == "patch_classify") {
        report.parity = report.metric_gap >= -loss_tolerance;
    } else {
        report.parity = report.loss_gap_rel <= loss_tolerance;
    }
    return report;
}

}  // namespace lors
