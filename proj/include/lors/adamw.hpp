#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lors/grad_check.hpp"
#include "lors/tensor.hpp"

namespace lors {

/// Aborted optimization step: a gradient went non-finite. The message names
/// the offending parameter.
class GradientError : public std::runtime_error {
public:
    explicit GradientError(const std::string& msg) : std::runtime_error(msg) {}
};

/// AdamW with decoupled weight decay: the decay term scales the parameter
/// directly and never enters the moment estimates.
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW() = default;
    explicit AdamW(Options opts) : opts_(opts) {
        if (!(opts_.lr > 0.0) || opts_.beta1 < 0.0 || opts_.beta1 >= 1.0 ||
            opts_.beta2 < 0.0 || opts_.beta2 >= 1.0 || !(opts_.eps > 0.0) ||
            opts_.weight_decay < 0.0) {
            throw ConfigError("invalid AdamW options");
        }
    }

    const Options& options() const { return opts_; }
    void set_lr(double lr) { opts_.lr = lr; }
    long long step_count() const { return step_; }

    /// One update over the parameter list. Parameters without a populated
    /// grad are treated as zero-gradient (they still receive weight decay).
    void step(const ParamList& params) {
        if (state_.size() != params.size()) {
            state_.assign(params.size(), Moments{});
            for (std::size_t i = 0; i < params.size(); ++i) {
                state_[i].m.assign(params[i].tensor.numel(), 0.0);
                state_[i].v.assign(params[i].tensor.numel(), 0.0);
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = params[i].tensor;
            auto& values = t.data();
            const bool has_grad = t.has_grad();
            Moments& st = state_[i];
            for (std::size_t j = 0; j < values.size(); ++j) {
                const double g = has_grad ? t.grad()[j] : 0.0;
                if (!std::isfinite(g)) {
                    throw GradientError("non-finite gradient in parameter '" + params[i].name +
                                        "' at element " + std::to_string(j));
                }
                st.m[j] = opts_.beta1 * st.m[j] + (1.0 - opts_.beta1) * g;
                st.v[j] = opts_.beta2 * st.v[j] + (1.0 - opts_.beta2) * g * g;
                const double m_hat = st.m[j] / bc1;
                const double v_hat = st.v[j] / bc2;
                values[j] -= opts_.lr * (m_hat / (std::sqrt(v_hat) + opts_.eps) +
                                         opts_.weight_decay * values[j]);
            }
        }
    }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    Options opts_;
    std::vector<Moments> state_;
    long long step_ = 0;
};

inline void zero_grads(const ParamList& params) {
    for (const NamedTensor& p : params) p.tensor.node()->zero_grad();
}

}  // namespace lors
