#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lors/ops.hpp"
#include "lors/tensor.hpp"

namespace lors {

/// A parameter tensor with a stable, human-readable name. Containers expose
/// their trainable state as ordered lists of these; order is part of the
/// determinism contract.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Result of comparing analytic gradients against central differences.
struct CheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    std::string worst_param;
    bool pass = false;
    double tolerance = 0.0;
};

/// Compares backward-pass gradients of a deterministic scalar function
/// against central finite differences, parameter by parameter.
///
/// The error metric is |analytic - numeric| / max(1, |analytic|, |numeric|):
/// relative for large gradients, absolute near zero.
inline CheckReport grad_check(const std::function<Tensor()>& f, const ParamList& params,
                              double h = 1e-5, double tolerance = 1e-4) {
    if (!(h > 0.0)) throw ContractError("grad_check step h must be positive");
    CheckReport report;
    report.tolerance = tolerance;

    for (const NamedTensor& p : params) p.tensor.node()->zero_grad();
    Tensor loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const NamedTensor& p : params) {
        analytic.push_back(p.tensor.has_grad() ? p.tensor.grad()
                                               : std::vector<double>(p.tensor.numel(), 0.0));
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor handle = params[pi].tensor;  // shares storage with the parameter
        ParamCheck pc;
        pc.name = params[pi].name;
        auto& values = handle.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().value();
            values[i] = saved - h;
            const double down = f().value();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel >= pc.max_rel_error) {
                pc.max_rel_error = rel;
                pc.worst_index = i;
                pc.analytic = a;
                pc.numeric = numeric;
            }
        }
        if (pc.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = pc.max_rel_error;
            report.worst_param = pc.name;
        }
        report.params.push_back(std::move(pc));
    }
    report.pass = report.max_rel_error < tolerance;
    return report;
}

}  // namespace lors
