#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lors/budget.hpp"
#include "lors/weight_family.hpp"

namespace lors {

/// Per-layer group counts for the attention and feed-forward weight families,
/// plus the factor rank. A zero entry means shared-only for that layer (the
/// layer carries no private factors).
struct AllocationPlan {
    std::vector<int> attn_groups;  // empty -> tail-heavy {1×(N-3), 2, 4, 6}
    std::vector<int> ffn_groups;   // empty -> head-heavy {6, 4, 2, 1×(N-3)}
    int rank = 8;
};

/// Toy post-norm transformer encoder over synthetic patch embeddings, with
/// the stacked attention/FFN weights stored either densely per layer or as
/// static low-rank-residual families.
struct EncoderConfig {
    int depth = 6;
    int model_dim = 32;
    int heads = 4;
    int ffn_dim = 64;
    int patch_count = 16;
    int patch_dim = 0;  // 0 -> model_dim
    int class_count = 10;
    WeightMode weight_mode = WeightMode::kLors;
    LorsMode lors_mode = LorsMode::kFull;
    /// One fused qkv projection [D × 3D] per layer (the usual implementation)
    /// versus separate q/k/v families.
    bool fused_qkv = true;
    AllocationPlan plan;
    bool use_bias = true;
    double ln_eps = 1e-5;

    EncoderConfig resolved() const {
        EncoderConfig c = *this;
        if (c.patch_dim == 0) c.patch_dim = c.model_dim;
        if (c.plan.attn_groups.empty()) c.plan.attn_groups = tail_heavy_schedule(c.depth);
        if (c.plan.ffn_groups.empty()) c.plan.ffn_groups = head_heavy_schedule(c.depth);
        return c;
    }

    void validate() const {
        if (depth < 0 || model_dim <= 0 || heads <= 0 || ffn_dim <= 0 || patch_count <= 0 ||
            class_count <= 0) {
            throw ConfigError("encoder config requires positive extents");
        }
        if (model_dim % heads != 0) {
            throw ConfigError("model_dim " + std::to_string(model_dim) +
                              " not divisible by heads " + std::to_string(heads));
        }
        auto check_len = [&](const std::vector<int>& s, const char* what) {
            if (static_cast<int>(s.size()) != depth) {
                throw ConfigError(std::string(what) + " plan has " + std::to_string(s.size()) +
                                  " entries for depth " + std::to_string(depth));
            }
        };
        check_len(plan.attn_groups, "attention");
        check_len(plan.ffn_groups, "ffn");
        if (weight_mode == WeightMode::kLors && depth > 0) {
            if (plan.rank < 1 || plan.rank > model_dim || plan.rank > ffn_dim) {
                throw ConfigError("plan rank " + std::to_string(plan.rank) +
                                  " incompatible with encoder dims");
            }
        }
    }
};

/// Fraction of the per-layer stack weights (attention + FFN projections,
/// biases and norms excluded) kept when the config's low-rank plan replaces
/// the dense layers. Dense mode returns 1 exactly.
inline double parameter_fraction(const EncoderConfig& config) {
    const EncoderConfig cfg = config.resolved();
    cfg.validate();
    if (cfg.depth == 0) return 1.0;
    const long long d = cfg.model_dim;
    const long long f = cfg.ffn_dim;
    struct Family {
        long long in, out;
        const std::vector<int>* schedule;
    };
    std::vector<Family> families;
    if (cfg.fused_qkv) {
        families.push_back({d, 3 * d, &cfg.plan.attn_groups});
    } else {
        for (int i = 0; i < 3; ++i) families.push_back({d, d, &cfg.plan.attn_groups});
    }
    families.push_back({d, d, &cfg.plan.attn_groups});  // output projection
    families.push_back({d, f, &cfg.plan.ffn_groups});
    families.push_back({f, d, &cfg.plan.ffn_groups});

    long long dense = 0;
    long long kept = 0;
    for (const Family& fam : families) {
        dense += cfg.depth * fam.in * fam.out;
        if (cfg.weight_mode == WeightMode::kDense) {
            kept += cfg.depth * fam.in * fam.out;
        } else {
            kept += count_lors_total(BudgetQuery::Kind::kStatic, fam.in, fam.out, 0,
                                     cfg.plan.rank, *fam.schedule);
        }
    }
    return static_cast<double>(kept) / static_cast<double>(dense);
}

class MiniEncoder {
public:
    MiniEncoder() = default;

    explicit MiniEncoder(const EncoderConfig& config) : cfg_(config.resolved()) {
        cfg_.validate();
        const int d = cfg_.model_dim;
        const int f = cfg_.ffn_dim;
        auto make = [&](int in, int out, const std::vector<int>& schedule) {
            return StaticFamily(cfg_.weight_mode, in, out, cfg_.depth, cfg_.plan.rank,
                                schedule, cfg_.lors_mode);
        };
        if (cfg_.fused_qkv) {
            qkv_ = make(d, 3 * d, cfg_.plan.attn_groups);
        } else {
            q_ = make(d, d, cfg_.plan.attn_groups);
            k_ = make(d, d, cfg_.plan.attn_groups);
            v_ = make(d, d, cfg_.plan.attn_groups);
        }
        o_ = make(d, d, cfg_.plan.attn_groups);
        up_ = make(d, f, cfg_.plan.ffn_groups);
        down_ = make(f, d, cfg_.plan.ffn_groups);

        embed_weight_ = Tensor::zeros({cfg_.patch_dim, d}, true);
        classifier_weight_ = Tensor::zeros({d, cfg_.class_count}, true);
        if (cfg_.use_bias) {
            embed_bias_ = Tensor::zeros({d}, true);
            classifier_bias_ = Tensor::zeros({cfg_.class_count}, true);
        }
        for (int i = 0; i < cfg_.depth; ++i) {
            if (cfg_.use_bias) {
                qkv_bias_.push_back(Tensor::zeros({cfg_.fused_qkv ? 3 * d : d}, true));
                if (!cfg_.fused_qkv) {
                    k_bias_.push_back(Tensor::zeros({d}, true));
                    v_bias_.push_back(Tensor::zeros({d}, true));
                }
                o_bias_.push_back(Tensor::zeros({d}, true));
                up_bias_.push_back(Tensor::zeros({f}, true));
                down_bias_.push_back(Tensor::zeros({d}, true));
            }
            attn_gamma_.push_back(Tensor::full({d}, 1.0, true));
            attn_beta_.push_back(Tensor::zeros({d}, true));
            ffn_gamma_.push_back(Tensor::full({d}, 1.0, true));
            ffn_beta_.push_back(Tensor::zeros({d}, true));
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    StaticFamily& qkv_family() { return cfg_.fused_qkv ? qkv_ : q_; }
    StaticFamily& q_family() { return cfg_.fused_qkv ? qkv_ : q_; }
    StaticFamily& k_family() { return k_; }
    StaticFamily& v_family() { return v_; }
    StaticFamily& o_family() { return o_; }
    StaticFamily& up_family() { return up_; }
    StaticFamily& down_family() { return down_; }
    Tensor& embed_weight() { return embed_weight_; }
    Tensor& classifier_weight() { return classifier_weight_; }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        if (cfg_.fused_qkv) {
            qkv_.init(rng);
        } else {
            q_.init(rng);
            k_.init(rng);
            v_.init(rng);
        }
        o_.init(rng);
        up_.init(rng);
        down_.init(rng);
        xavier_uniform(embed_weight_, rng);
        xavier_uniform(classifier_weight_, rng);
    }

    /// Multi-head self-attention with residual and post-norm. Accepts
    /// [tokens, D] or [B, tokens, D].
    Tensor attention_block(const Tensor& x, int layer) const {
        const bool single = x.rank() == 2;
        Tensor xb = single ? reshape(x, {1, x.extent(0), x.extent(1)}) : x;
        check_tokens(xb);
        const int b = xb.extent(0), t = xb.extent(1), d = cfg_.model_dim;
        const int heads = cfg_.heads, dh = d / heads;
        Tensor q, k, v;
        if (cfg_.fused_qkv) {
            Tensor qkv = matmul(xb, qkv_.weight(layer));
            if (cfg_.use_bias) qkv = add(qkv, qkv_bias_[static_cast<std::size_t>(layer)]);
            q = narrow(qkv, 2, 0, d);
            k = narrow(qkv, 2, d, d);
            v = narrow(qkv, 2, 2 * d, d);
        } else {
            q = matmul(xb, q_.weight(layer));
            k = matmul(xb, k_.weight(layer));
            v = matmul(xb, v_.weight(layer));
            if (cfg_.use_bias) {
                q = add(q, qkv_bias_[static_cast<std::size_t>(layer)]);
                k = add(k, k_bias_[static_cast<std::size_t>(layer)]);
                v = add(v, v_bias_[static_cast<std::size_t>(layer)]);
            }
        }
        auto split_heads = [&](const Tensor& m) {
            return reshape(permute(reshape(m, {b, t, heads, dh}), {0, 2, 1, 3}),
                           {b * heads, t, dh});
        };
        Tensor qh = split_heads(q), kh = split_heads(k), vh = split_heads(v);
        Tensor scores = scale(matmul(qh, transpose2d(kh)), 1.0 / std::sqrt(dh));
        Tensor weights = softmax(scores);
        Tensor ctx = matmul(weights, vh);
        Tensor merged = reshape(permute(reshape(ctx, {b, heads, t, dh}), {0, 2, 1, 3}),
                                {b, t, d});
        Tensor out = matmul(merged, o_.weight(layer));
        if (cfg_.use_bias) out = add(out, o_bias_[static_cast<std::size_t>(layer)]);
        Tensor y = layer_norm(add(xb, out), attn_gamma_[static_cast<std::size_t>(layer)],
                              attn_beta_[static_cast<std::size_t>(layer)], cfg_.ln_eps);
        return single ? reshape(y, x.shape()) : y;
    }

    /// Attention weights [B·heads, T, T] for inspection in tests.
    Tensor attention_weights(const Tensor& x, int layer) const {
        Tensor xb = x.rank() == 2 ? reshape(x, {1, x.extent(0), x.extent(1)}) : x;
        check_tokens(xb);
        const int b = xb.extent(0), t = xb.extent(1), d = cfg_.model_dim;
        const int heads = cfg_.heads, dh = d / heads;
        Tensor q, k;
        if (cfg_.fused_qkv) {
            Tensor qkv = matmul(xb, qkv_.weight(layer));
            if (cfg_.use_bias) qkv = add(qkv, qkv_bias_[static_cast<std::size_t>(layer)]);
            q = narrow(qkv, 2, 0, d);
            k = narrow(qkv, 2, d, d);
        } else {
            q = matmul(xb, q_.weight(layer));
            k = matmul(xb, k_.weight(layer));
        }
        auto split_heads = [&](const Tensor& m) {
            return reshape(permute(reshape(m, {b, t, heads, dh}), {0, 2, 1, 3}),
                           {b * heads, t, dh});
        };
        Tensor scores = scale(matmul(split_heads(q), transpose2d(split_heads(k))),
                              1.0 / std::sqrt(dh));
        return softmax(scores);
    }

    /// Two-layer relu MLP with residual and post-norm.
    Tensor ffn_block(const Tensor& x, int layer) const {
        const bool single = x.rank() == 2;
        Tensor xb = single ? reshape(x, {1, x.extent(0), x.extent(1)}) : x;
        check_tokens(xb);
        Tensor hidden = matmul(xb, up_.weight(layer));
        if (cfg_.use_bias) hidden = add(hidden, up_bias_[static_cast<std::size_t>(layer)]);
        Tensor out = matmul(relu(hidden), down_.weight(layer));
        if (cfg_.use_bias) out = add(out, down_bias_[static_cast<std::size_t>(layer)]);
        Tensor y = layer_norm(add(xb, out), ffn_gamma_[static_cast<std::size_t>(layer)],
                              ffn_beta_[static_cast<std::size_t>(layer)], cfg_.ln_eps);
        return single ? reshape(y, x.shape()) : y;
    }

    /// Embed, run the stack, mean-pool over tokens, classify.
    Tensor forward(const Tensor& patches) const {
        if (patches.rank() != 3 || patches.extent(2) != cfg_.patch_dim) {
            throw ShapeError("patches " + shape_str(patches.shape()) +
                             " vs expected [batch, tokens, " + std::to_string(cfg_.patch_dim) +
                             "]");
        }
        Tensor x = matmul(patches, embed_weight_);
        if (cfg_.use_bias) x = add(x, embed_bias_);
        for (int layer = 0; layer < cfg_.depth; ++layer) {
            x = attention_block(x, layer);
            x = ffn_block(x, layer);
        }
        Tensor pooled = mean_axis(x, 1);
        Tensor logits = matmul(pooled, classifier_weight_);
        if (cfg_.use_bias) logits = add(logits, classifier_bias_);
        return logits;
    }

    ParamList parameters() const {
        ParamList out;
        if (cfg_.fused_qkv) {
            qkv_.append_params(out, "attn.qkv");
        } else {
            q_.append_params(out, "attn.q");
            k_.append_params(out, "attn.k");
            v_.append_params(out, "attn.v");
        }
        o_.append_params(out, "attn.o");
        up_.append_params(out, "ffn.up");
        down_.append_params(out, "ffn.down");
        out.push_back({"embed.weight", embed_weight_});
        out.push_back({"classifier.weight", classifier_weight_});
        if (cfg_.use_bias) {
            out.push_back({"embed.bias", embed_bias_});
            out.push_back({"classifier.bias", classifier_bias_});
        }
        for (int i = 0; i < cfg_.depth; ++i) {
            const std::string stem = "layer" + std::to_string(i);
            if (cfg_.use_bias) {
                out.push_back({stem + (cfg_.fused_qkv ? ".qkv_bias" : ".q_bias"),
                               qkv_bias_[static_cast<std::size_t>(i)]});
                if (!cfg_.fused_qkv) {
                    out.push_back({stem + ".k_bias", k_bias_[static_cast<std::size_t>(i)]});
                    out.push_back({stem + ".v_bias", v_bias_[static_cast<std::size_t>(i)]});
                }
                out.push_back({stem + ".o_bias", o_bias_[static_cast<std::size_t>(i)]});
                out.push_back({stem + ".up_bias", up_bias_[static_cast<std::size_t>(i)]});
                out.push_back({stem + ".down_bias", down_bias_[static_cast<std::size_t>(i)]});
            }
            out.push_back({stem + ".attn_gamma", attn_gamma_[static_cast<std::size_t>(i)]});
            out.push_back({stem + ".attn_beta", attn_beta_[static_cast<std::size_t>(i)]});
            out.push_back({stem + ".ffn_gamma", ffn_gamma_[static_cast<std::size_t>(i)]});
            out.push_back({stem + ".ffn_beta", ffn_beta_[static_cast<std::size_t>(i)]});
        }
        return out;
    }

    /// Exact enumeration; "stack" rows cover what parameter_fraction counts.
    ModelCount count() const {
        ModelCount mc;
        if (cfg_.fused_qkv) {
            mc.rows.push_back(qkv_.count("attn.qkv"));
        } else {
            mc.rows.push_back(q_.count("attn.q"));
            mc.rows.push_back(k_.count("attn.k"));
            mc.rows.push_back(v_.count("attn.v"));
        }
        mc.rows.push_back(o_.count("attn.o"));
        mc.rows.push_back(up_.count("ffn.up"));
        mc.rows.push_back(down_.count("ffn.down"));

        CountRow head;
        head.component = "embed+classifier";
        head.private_ = static_cast<long long>(cfg_.patch_dim) * cfg_.model_dim +
                        static_cast<long long>(cfg_.model_dim) * cfg_.class_count;
        if (cfg_.use_bias) head.bias = cfg_.model_dim + cfg_.class_count;
        mc.rows.push_back(head);

        CountRow per_layer;
        per_layer.component = "layer biases+norms";
        if (cfg_.use_bias) {
            // qkv biases total 3D in both layouts; then o, up, down.
            per_layer.bias = static_cast<long long>(cfg_.depth) *
                             (3LL * cfg_.model_dim + cfg_.model_dim + cfg_.ffn_dim +
                              cfg_.model_dim);
        }
        per_layer.other = static_cast<long long>(cfg_.depth) * 4 * cfg_.model_dim;
        mc.rows.push_back(per_layer);
        return mc;
    }

    /// Parameter count of the stack weight families only (what the fraction
    /// compares).
    long long stack_weight_count() const {
        long long total = 0;
        auto add_fam = [&](const StaticFamily& fam) {
            const CountRow row = fam.count("");
            total += row.weights();
        };
        if (cfg_.fused_qkv) {
            add_fam(qkv_);
        } else {
            add_fam(q_);
            add_fam(k_);
            add_fam(v_);
        }
        add_fam(o_);
        add_fam(up_);
        add_fam(down_);
        return total;
    }

private:
    void check_tokens(const Tensor& x) const {
        if (x.rank() != 3 || x.extent(2) != cfg_.model_dim) {
            throw ShapeError("token block " + shape_str(x.shape()) + " vs expected [*, *, " +
                             std::to_string(cfg_.model_dim) + "]");
        }
    }

    EncoderConfig cfg_;
    StaticFamily qkv_, q_, k_, v_, o_, up_, down_;
    Tensor embed_weight_, embed_bias_;
    Tensor classifier_weight_, classifier_bias_;
    std::vector<Tensor> qkv_bias_, k_bias_, v_bias_, o_bias_, up_bias_, down_bias_;
    std::vector<Tensor> attn_gamma_, attn_beta_, ffn_gamma_, ffn_beta_;
};

inline MiniEncoder build_encoder(const EncoderConfig& config, std::uint64_t seed) {
    MiniEncoder encoder(config);
    encoder.init(seed);
    return encoder;
}

}  // namespace lors
