#pragma once

#include <string>
#include <vector>

#include "lors/budget.hpp"
#include "lors/lors.hpp"
#include "lors/ops.hpp"
#include "lors/rng.hpp"

namespace lors {

/// Whether a stacked weight family stores plain per-layer weights or a
/// shared-plus-low-rank decomposition.
enum class WeightMode { kDense, kLors };

inline const char* to_string(WeightMode m) {
    return m == WeightMode::kDense ? "dense" : "lors";
}

/// One stacked d×h weight family that is a stored parameter per layer:
/// either N dense matrices or a static low-rank-residual container.
class StaticFamily {
public:
    StaticFamily() = default;

    StaticFamily(WeightMode mode, int d, int h, int n_layers, int rank,
                 std::vector<int> schedule, LorsMode lors_mode)
        : mode_(mode), d_(d), h_(h), n_layers_(n_layers) {
        if (mode_ == WeightMode::kDense) {
            dense_.reserve(static_cast<std::size_t>(n_layers));
            for (int i = 0; i < n_layers; ++i) {
                dense_.push_back(Tensor::zeros({d, h}, true));
            }
        } else {
            lors_ = StaticLorsParam(d, h, n_layers, rank, std::move(schedule), lors_mode);
        }
    }

    WeightMode mode() const { return mode_; }
    int d() const { return d_; }
    int h() const { return h_; }
    StaticLorsParam& lors() { return lors_; }
    const StaticLorsParam& lors() const { return lors_; }
    Tensor& dense_weight(int layer) { return dense_.at(static_cast<std::size_t>(layer)); }

    Tensor weight(int layer) const {
        if (mode_ == WeightMode::kDense) return dense_.at(static_cast<std::size_t>(layer));
        return lors_.fused_weight(layer);
    }

    void init(Rng& rng) {
        if (mode_ == WeightMode::kDense) {
            for (Tensor& w : dense_) xavier_uniform(w, rng);
        } else {
            lors_.init(rng.next_u64());
        }
    }

    void append_params(ParamList& out, const std::string& prefix) const {
        if (mode_ == WeightMode::kDense) {
            for (int i = 0; i < n_layers_; ++i) {
                out.push_back({prefix + ".layer" + std::to_string(i) + ".weight",
                               dense_[static_cast<std::size_t>(i)]});
            }
        } else {
            lors_.append_params(out, prefix);
        }
    }

    CountRow count(const std::string& name) const {
        CountRow row;
        row.component = name;
        if (mode_ == WeightMode::kDense) {
            row.private_ = static_cast<long long>(n_layers_) * d_ * h_;
        } else {
            row.shared = lors_.shared_param_count();
            row.private_ = lors_.private_param_count();
        }
        return row;
    }

private:
    WeightMode mode_ = WeightMode::kDense;
    int d_ = 0, h_ = 0, n_layers_ = 0;
    std::vector<Tensor> dense_;
    StaticLorsParam lors_;
};

/// One stacked d×h weight family generated from a query: either a dense
/// per-layer linear generator or an adaptive low-rank-residual container.
class AdaptiveFamily {
public:
    AdaptiveFamily() = default;

    AdaptiveFamily(WeightMode mode, int query_dim, int d, int h, int n_layers, int rank,
                   std::vector<int> schedule, LorsMode lors_mode, bool use_bias)
        : mode_(mode), query_dim_(query_dim), d_(d), h_(h), n_layers_(n_layers),
          use_bias_(use_bias) {
        if (mode_ == WeightMode::kDense) {
            for (int i = 0; i < n_layers; ++i) {
                dense_weight_.push_back(Tensor::zeros({query_dim, d * h}, true));
                if (use_bias) dense_bias_.push_back(Tensor::zeros({d * h}, true));
            }
        } else {
            lors_ = AdaptiveLorsParam(query_dim, d, h, n_layers, rank, std::move(schedule),
                                      lors_mode, use_bias);
        }
    }

    WeightMode mode() const { return mode_; }
    AdaptiveLorsParam& lors() { return lors_; }
    const AdaptiveLorsParam& lors() const { return lors_; }
    Tensor& dense_weight(int layer) { return dense_weight_.at(static_cast<std::size_t>(layer)); }
    Tensor& dense_bias(int layer) { return dense_bias_.at(static_cast<std::size_t>(layer)); }

    /// Per-query weights [batch × d × h] for queries [batch × d_q].
    Tensor weight(int layer, const Tensor& queries) const {
        if (mode_ == WeightMode::kLors) return lors_.fused_weight(layer, queries);
        Tensor flat = matmul(queries, dense_weight_.at(static_cast<std::size_t>(layer)));
        if (use_bias_) flat = add(flat, dense_bias_[static_cast<std::size_t>(layer)]);
        return reshape(flat, {queries.extent(0), d_, h_});
    }

    void init(Rng& rng) {
        if (mode_ == WeightMode::kDense) {
            for (Tensor& w : dense_weight_) xavier_uniform(w, rng);
            for (Tensor& b : dense_bias_) fill_constant(b, 0.0);
        } else {
            lors_.init(rng.next_u64());
        }
    }

    void append_params(ParamList& out, const std::string& prefix) const {
        if (mode_ == WeightMode::kDense) {
            for (int i = 0; i < n_layers_; ++i) {
                const std::string stem = prefix + ".layer" + std::to_string(i);
                out.push_back({stem + ".weight", dense_weight_[static_cast<std::size_t>(i)]});
                if (use_bias_) {
                    out.push_back({stem + ".bias", dense_bias_[static_cast<std::size_t>(i)]});
                }
            }
        } else {
            lors_.append_params(out, prefix);
        }
    }

    CountRow count(const std::string& name) const {
        CountRow row;
        row.component = name;
        if (mode_ == WeightMode::kDense) {
            row.private_ = static_cast<long long>(n_layers_) * query_dim_ * d_ * h_;
            if (use_bias_) row.bias = static_cast<long long>(n_layers_) * d_ * h_;
        } else {
            row.shared = lors_.shared_param_count();
            row.private_ = lors_.private_param_count();
            row.bias = lors_.bias_param_count();
        }
        return row;
    }

private:
    WeightMode mode_ = WeightMode::kDense;
    int query_dim_ = 0, d_ = 0, h_ = 0, n_layers_ = 0;
    bool use_bias_ = true;
    std::vector<Tensor> dense_weight_;
    std::vector<Tensor> dense_bias_;
    AdaptiveLorsParam lors_;
};

}  // namespace lors
