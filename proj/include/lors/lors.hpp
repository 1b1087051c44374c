#pragma once

#include <string>
#include <vector>

#include "lors/grad_check.hpp"
#include "lors/ops.hpp"
#include "lors/rng.hpp"
#include "lors/tensor.hpp"

namespace lors {

/// Which terms of weight = shared + private are active. shared_only turns a
/// stack into a recurrent-style structure with one weight for all layers;
/// private_only keeps just the per-layer low-rank residuals.
enum class LorsMode { kFull, kSharedOnly, kPrivateOnly };

inline const char* to_string(LorsMode m) {
    switch (m) {
        case LorsMode::kFull: return "full";
        case LorsMode::kSharedOnly: return "shared_only";
        case LorsMode::kPrivateOnly: return "private_only";
    }
    return "?";
}

/// Reference low-rank adaptation of a base matrix: W + down·up.
inline Tensor lora_adapt(const Tensor& base, const Tensor& down, const Tensor& up) {
    if (base.rank() != 2 || down.rank() != 2 || up.rank() != 2 ||
        down.extent(0) != base.extent(0) || up.extent(1) != base.extent(1) ||
        down.extent(1) != up.extent(0)) {
        throw ShapeError("lora_adapt shapes W=" + shape_str(base.shape()) + " B=" +
                         shape_str(down.shape()) + " A=" + shape_str(up.shape()));
    }
    return add(matmul(down, up), base);
}

namespace detail {

inline void check_lors_dims(int d, int h, int n_layers, int rank,
                            const std::vector<int>& groups_per_layer) {
    if (d <= 0 || h <= 0 || n_layers < 0) {
        throw ConfigError("invalid weight dims d=" + std::to_string(d) +
                          " h=" + std::to_string(h) + " layers=" + std::to_string(n_layers));
    }
    if (rank < 1 || rank > std::min(d, h)) {
        throw ConfigError("rank " + std::to_string(rank) + " outside [1, min(" +
                          std::to_string(d) + ", " + std::to_string(h) + ")]");
    }
    if (static_cast<int>(groups_per_layer.size()) != n_layers) {
        throw ConfigError("group schedule has " + std::to_string(groups_per_layer.size()) +
                          " entries for " + std::to_string(n_layers) + " layers");
    }
    for (int k : groups_per_layer) {
        if (k < 0) throw ConfigError("negative group count in schedule");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Static variant: one learned d×h weight shared by all layers plus, per layer,
// K low-rank factor pairs whose products sum into that layer's residual.
// ---------------------------------------------------------------------------

class StaticLorsParam {
public:
    struct FactorPair {
        Tensor down;  // [d × r]
        Tensor up;    // [r × h]
    };

    StaticLorsParam() = default;

    StaticLorsParam(int d, int h, int n_layers, int rank, std::vector<int> groups_per_layer,
                    LorsMode mode = LorsMode::kFull)
        : d_(d), h_(h), n_layers_(n_layers), rank_(rank),
          groups_per_layer_(std::move(groups_per_layer)), mode_(mode) {
        detail::check_lors_dims(d_, h_, n_layers_, rank_, groups_per_layer_);
        shared_weight_ = Tensor::zeros({d_, h_}, /*requires_grad=*/true);
        factors_.resize(n_layers_);
        for (int i = 0; i < n_layers_; ++i) {
            factors_[i].reserve(groups_per_layer_[static_cast<std::size_t>(i)]);
            for (int k = 0; k < groups_per_layer_[static_cast<std::size_t>(i)]; ++k) {
                factors_[i].push_back({Tensor::zeros({d_, rank_}, true),
                                       Tensor::zeros({rank_, h_}, true)});
            }
        }
    }

    /// Uniform group count across layers.
    StaticLorsParam(int d, int h, int n_layers, int rank, int groups,
                    LorsMode mode = LorsMode::kFull)
        : StaticLorsParam(d, h, n_layers, rank, std::vector<int>(n_layers, groups), mode) {}

    int d() const { return d_; }
    int h() const { return h_; }
    int layers() const { return n_layers_; }
    int rank() const { return rank_; }
    const std::vector<int>& group_schedule() const { return groups_per_layer_; }
    LorsMode mode() const { return mode_; }
    void set_mode(LorsMode m) { mode_ = m; }

    Tensor& shared_weight() { return shared_weight_; }
    const Tensor& shared_weight() const { return shared_weight_; }
    std::vector<FactorPair>& layer_factors(int layer) { return factors_.at(layer); }
    const std::vector<FactorPair>& layer_factors(int layer) const { return factors_.at(layer); }

    /// Kaiming init for the shared weight and every down factor, zeros for
    /// every up factor, so every fused weight starts exactly at the shared one.
    void init(std::uint64_t seed) {
        Rng rng(seed);
        kaiming_uniform(shared_weight_, rng);
        for (auto& layer : factors_) {
            for (auto& f : layer) {
                kaiming_uniform(f.down, rng);
                fill_constant(f.up, 0.0);
            }
        }
    }

    /// Per-layer private residual, Σ_k down_k · up_k (zero tensor when the
    /// layer has no groups).
    Tensor private_weight(int layer) const {
        check_layer(layer);
        const auto& layer_factors = factors_[static_cast<std::size_t>(layer)];
        if (layer_factors.empty()) return Tensor::zeros({d_, h_});
        Tensor acc = matmul(layer_factors[0].down, layer_factors[0].up);
        for (std::size_t k = 1; k < layer_factors.size(); ++k) {
            acc = add(acc, matmul(layer_factors[k].down, layer_factors[k].up));
        }
        return acc;
    }

    /// Fused weight of one layer under the current mode. Differentiable with
    /// respect to the shared weight and all factors.
    Tensor fused_weight(int layer) const {
        check_layer(layer);
        switch (mode_) {
            case LorsMode::kSharedOnly: return shared_weight_;
            case LorsMode::kPrivateOnly: return private_weight(layer);
            case LorsMode::kFull: return add(shared_weight_, private_weight(layer));
        }
        return shared_weight_;
    }

    void append_params(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".shared", shared_weight_});
        for (int i = 0; i < n_layers_; ++i) {
            const auto& layer = factors_[static_cast<std::size_t>(i)];
            for (std::size_t k = 0; k < layer.size(); ++k) {
                const std::string stem =
                    prefix + ".layer" + std::to_string(i) + ".group" + std::to_string(k);
                out.push_back({stem + ".down", layer[k].down});
                out.push_back({stem + ".up", layer[k].up});
            }
        }
    }

    long long shared_param_count() const { return static_cast<long long>(d_) * h_; }
    long long private_param_count() const {
        long long total = 0;
        for (int k : groups_per_layer_) {
            total += static_cast<long long>(k) * (static_cast<long long>(d_) * rank_ +
                                                  static_cast<long long>(rank_) * h_);
        }
        return total;
    }

private:
    void check_layer(int layer) const {
        if (layer < 0 || layer >= n_layers_) {
            throw IndexError("layer " + std::to_string(layer) + " out of range [0, " +
                             std::to_string(n_layers_) + ")");
        }
    }

    int d_ = 0, h_ = 0, n_layers_ = 0, rank_ = 0;
    std::vector<int> groups_per_layer_;
    LorsMode mode_ = LorsMode::kFull;
    Tensor shared_weight_;
    std::vector<std::vector<FactorPair>> factors_;
};

// ---------------------------------------------------------------------------
// Adaptive variant: both the shared weight and the per-group r×r kernels are
// generated from the conditioning query by linear maps, so fused weights are
// per-query values rather than stored parameters.
// ---------------------------------------------------------------------------

class AdaptiveLorsParam {
public:
    struct FactorTriple {
        Tensor down;         // [d × r]
        Tensor up;           // [r × h]
        Tensor kernel_proj;  // [d_q × r²], generates the r×r kernel from q
        Tensor kernel_bias;  // [r²], present when use_bias
    };

    AdaptiveLorsParam() = default;

    AdaptiveLorsParam(int query_dim, int d, int h, int n_layers, int rank,
                      std::vector<int> groups_per_layer, LorsMode mode = LorsMode::kFull,
                      bool use_bias = true)
        : query_dim_(query_dim), d_(d), h_(h), n_layers_(n_layers), rank_(rank),
          groups_per_layer_(std::move(groups_per_layer)), mode_(mode), use_bias_(use_bias) {
        detail::check_lors_dims(d_, h_, n_layers_, rank_, groups_per_layer_);
        if (query_dim_ <= 0) throw ConfigError("query_dim must be positive");
        shared_proj_ = Tensor::zeros({query_dim_, d_ * h_}, true);
        if (use_bias_) shared_bias_ = Tensor::zeros({d_ * h_}, true);
        factors_.resize(n_layers_);
        for (int i = 0; i < n_layers_; ++i) {
            for (int k = 0; k < groups_per_layer_[static_cast<std::size_t>(i)]; ++k) {
                FactorTriple t;
                t.down = Tensor::zeros({d_, rank_}, true);
                t.up = Tensor::zeros({rank_, h_}, true);
                t.kernel_proj = Tensor::zeros({query_dim_, rank_ * rank_}, true);
                if (use_bias_) t.kernel_bias = Tensor::zeros({rank_ * rank_}, true);
                factors_[i].push_back(std::move(t));
            }
        }
    }

    AdaptiveLorsParam(int query_dim, int d, int h, int n_layers, int rank, int groups,
                      LorsMode mode = LorsMode::kFull, bool use_bias = true)
        : AdaptiveLorsParam(query_dim, d, h, n_layers, rank,
                            std::vector<int>(n_layers, groups), mode, use_bias) {}

    int query_dim() const { return query_dim_; }
    int d() const { return d_; }
    int h() const { return h_; }
    int layers() const { return n_layers_; }
    int rank() const { return rank_; }
    const std::vector<int>& group_schedule() const { return groups_per_layer_; }
    LorsMode mode() const { return mode_; }
    void set_mode(LorsMode m) { mode_ = m; }
    bool use_bias() const { return use_bias_; }

    Tensor& shared_proj() { return shared_proj_; }
    const Tensor& shared_proj() const { return shared_proj_; }
    Tensor& shared_bias() { return shared_bias_; }
    std::vector<FactorTriple>& layer_factors(int layer) { return factors_.at(layer); }
    const std::vector<FactorTriple>& layer_factors(int layer) const {
        return factors_.at(layer);
    }

    /// Kaiming init for the shared projection and the down/up factors, zeros
    /// for every kernel projection (and all biases), so every fused weight
    /// starts as the query-generated shared weight alone.
    void init(std::uint64_t seed) {
        Rng rng(seed);
        kaiming_uniform(shared_proj_, rng);
        if (use_bias_) fill_constant(shared_bias_, 0.0);
        for (auto& layer : factors_) {
            for (auto& f : layer) {
                kaiming_uniform(f.down, rng);
                kaiming_uniform(f.up, rng);
                fill_constant(f.kernel_proj, 0.0);
                if (use_bias_) fill_constant(f.kernel_bias, 0.0);
            }
        }
    }

    /// Query-generated shared weight, one d×h matrix per batch row.
    Tensor shared_weight(const Tensor& queries) const {
        Tensor q = as_batch(queries);
        Tensor flat = matmul(q, shared_proj_);
        if (use_bias_) flat = add(flat, shared_bias_);
        return reshape(flat, {q.extent(0), d_, h_});
    }

    /// Per-layer private residual for each query: Σ_k down_k · E_k(q) · up_k.
    Tensor private_weight(int layer, const Tensor& queries) const {
        check_layer(layer);
        Tensor q = as_batch(queries);
        const int batch = q.extent(0);
        const auto& layer_factors = factors_[static_cast<std::size_t>(layer)];
        if (layer_factors.empty()) return Tensor::zeros({batch, d_, h_});
        Tensor acc;
        for (const FactorTriple& f : layer_factors) {
            Tensor kernel_flat = matmul(q, f.kernel_proj);
            if (use_bias_) kernel_flat = add(kernel_flat, f.kernel_bias);
            Tensor kernel = reshape(kernel_flat, {batch, rank_, rank_});
            Tensor term = matmul(matmul(f.down, kernel), f.up);
            acc = acc.defined() ? add(acc, term) : term;
        }
        return acc;
    }

    /// Fused per-query weight of one layer under the current mode:
    /// [batch × d × h] for queries [batch × d_q] (a single query yields
    /// batch 1). Differentiable with respect to the queries and all
    /// parameters.
    Tensor fused_weight(int layer, const Tensor& queries) const {
        check_layer(layer);
        switch (mode_) {
            case LorsMode::kSharedOnly: return shared_weight(queries);
            case LorsMode::kPrivateOnly: return private_weight(layer, queries);
            case LorsMode::kFull:
                return add(shared_weight(queries), private_weight(layer, queries));
        }
        return shared_weight(queries);
    }

    void append_params(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".shared_proj", shared_proj_});
        if (use_bias_) out.push_back({prefix + ".shared_bias", shared_bias_});
        for (int i = 0; i < n_layers_; ++i) {
            const auto& layer = factors_[static_cast<std::size_t>(i)];
            for (std::size_t k = 0; k < layer.size(); ++k) {
                const std::string stem =
                    prefix + ".layer" + std::to_string(i) + ".group" + std::to_string(k);
                out.push_back({stem + ".down", layer[k].down});
                out.push_back({stem + ".up", layer[k].up});
                out.push_back({stem + ".kernel_proj", layer[k].kernel_proj});
                if (use_bias_) out.push_back({stem + ".kernel_bias", layer[k].kernel_bias});
            }
        }
    }

    long long shared_param_count() const {
        return static_cast<long long>(query_dim_) * d_ * h_;
    }
    long long private_param_count() const {
        long long total = 0;
        for (int k : groups_per_layer_) {
            total += static_cast<long long>(k) *
                     (static_cast<long long>(query_dim_) * rank_ * rank_ +
                      static_cast<long long>(d_) * rank_ +
                      static_cast<long long>(rank_) * h_);
        }
        return total;
    }
    long long bias_param_count() const {
        if (!use_bias_) return 0;
        long long total = static_cast<long long>(d_) * h_;
        for (int k : groups_per_layer_) {
            total += static_cast<long long>(k) * rank_ * rank_;
        }
        return total;
    }

private:
    Tensor as_batch(const Tensor& queries) const {
        if (queries.rank() == 1) {
            if (queries.extent(0) != query_dim_) {
                throw ShapeError("query " + shape_str(queries.shape()) + " vs query_dim " +
                                 std::to_string(query_dim_));
            }
            return reshape(queries, {1, query_dim_});
        }
        if (queries.rank() != 2 || queries.extent(1) != query_dim_) {
            throw ShapeError("queries " + shape_str(queries.shape()) +
                             " vs expected [batch, " + std::to_string(query_dim_) + "]");
        }
        return queries;
    }

    void check_layer(int layer) const {
        if (layer < 0 || layer >= n_layers_) {
            throw IndexError("layer " + std::to_string(layer) + " out of range [0, " +
                             std::to_string(n_layers_) + ")");
        }
    }

    int query_dim_ = 0, d_ = 0, h_ = 0, n_layers_ = 0, rank_ = 0;
    std::vector<int> groups_per_layer_;
    LorsMode mode_ = LorsMode::kFull;
    bool use_bias_ = true;
    Tensor shared_proj_;
    Tensor shared_bias_;
    std::vector<std::vector<FactorTriple>> factors_;
};

/// Free-function views matching the two fused-weight entry points.
inline Tensor static_fused_weight(const StaticLorsParam& p, int layer) {
    return p.fused_weight(layer);
}

inline Tensor adaptive_fused_weight(const AdaptiveLorsParam& p, int layer,
                                    const Tensor& queries) {
    return p.fused_weight(layer, queries);
}

}  // namespace lors
