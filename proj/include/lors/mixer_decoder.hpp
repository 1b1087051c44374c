#pragma once

#include <string>
#include <vector>

#include "lors/budget.hpp"
#include "lors/weight_family.hpp"

namespace lors {

/// Architecture of the toy stacked mixer decoder. Defaults follow the
/// reference detector setting: 2 sampling groups of 64 points, 64 channels,
/// 128 output points, 256-dim queries, 6 layers, adaptive rank 16 and static
/// rank 8, group schedule 1,1,2,2,3,3 for the mixers and 1 everywhere for the
/// output projection.
struct StackConfig {
    int n_layers = 6;
    int query_dim = 256;   // d_q
    int channels = 64;     // C
    int points_in = 64;    // P_in
    int points_out = 128;  // P_out
    int groups = 2;        // g sampling groups
    int rank_adaptive = 16;
    int rank_static = 8;
    std::vector<int> acm_schedule;  // empty -> ramp_schedule(n_layers)
    std::vector<int> asm_schedule;  // empty -> ramp_schedule(n_layers)
    std::vector<int> out_schedule;  // empty -> all ones
    WeightMode weight_mode = WeightMode::kLors;
    LorsMode lors_mode = LorsMode::kFull;
    bool use_bias = true;
    double ln_eps = 1e-5;

    int flat_dim() const { return groups * channels * points_out; }

    StackConfig resolved() const {
        StackConfig c = *this;
        if (c.acm_schedule.empty()) c.acm_schedule = ramp_schedule(c.n_layers);
        if (c.asm_schedule.empty()) c.asm_schedule = ramp_schedule(c.n_layers);
        if (c.out_schedule.empty()) c.out_schedule = uniform_schedule(c.n_layers, 1);
        return c;
    }

    void validate() const {
        if (n_layers < 0 || query_dim <= 0 || channels <= 0 || points_in <= 0 ||
            points_out <= 0 || groups <= 0) {
            throw ConfigError("stack config requires positive extents");
        }
        auto check_len = [&](const std::vector<int>& s, const char* what) {
            if (!s.empty() && static_cast<int>(s.size()) != n_layers) {
                throw ConfigError(std::string(what) + " schedule has " +
                                  std::to_string(s.size()) + " entries for " +
                                  std::to_string(n_layers) + " layers");
            }
        };
        check_len(acm_schedule, "acm");
        check_len(asm_schedule, "asm");
        check_len(out_schedule, "out");
        if (weight_mode == WeightMode::kLors && n_layers > 0) {
            if (rank_adaptive < 1 || rank_adaptive > std::min(channels, points_in) ||
                rank_adaptive > points_out) {
                throw ConfigError("adaptive rank " + std::to_string(rank_adaptive) +
                                  " incompatible with mixer dims");
            }
            if (rank_static < 1 || rank_static > std::min(flat_dim(), query_dim)) {
                throw ConfigError("static rank " + std::to_string(rank_static) +
                                  " incompatible with output projection dims");
            }
        }
    }
};

/// Inputs flowing through the decoder stack. Feature sampling is mocked:
/// sampled features arrive pre-grouped as [batch, n_q, g, P_in, C].
struct DecoderState {
    Tensor queries;           // [batch, n_q, d_q]
    Tensor sampled_features;  // [batch, n_q, g, P_in, C]
};

/// Splits a flat feature tensor [batch, n_q, P_in, d_feat] into g channel
/// groups of C = d_feat / g each.
inline Tensor split_feature_groups(const Tensor& features, int groups) {
    if (features.rank() != 4) {
        throw ShapeError("expected [batch, n_q, P_in, d_feat], got " +
                         shape_str(features.shape()));
    }
    const int d_feat = features.extent(3);
    if (groups <= 0 || d_feat % groups != 0) {
        throw ConfigError("feature dim " + std::to_string(d_feat) + " not divisible into " +
                          std::to_string(groups) + " groups");
    }
    const int c = d_feat / groups;
    // [b, q, P, g, C] -> [b, q, g, P, C]
    Tensor regrouped = reshape(features, {features.extent(0), features.extent(1),
                                          features.extent(2), groups, c});
    return permute(regrouped, {0, 1, 3, 2, 4});
}

/// Toy stacked decoder: per layer and sampling group, channel mixing then
/// spatial mixing of the sampled features under query-generated weights,
/// group concatenation, and a stored output projection whose result is added
/// back onto the query.
class MixerDecoder {
public:
    MixerDecoder() = default;

    explicit MixerDecoder(const StackConfig& config) : cfg_(config.resolved()) {
        cfg_.validate();
        const int n = cfg_.n_layers;
        for (int g = 0; g < cfg_.groups; ++g) {
            acm_.emplace_back(cfg_.weight_mode, cfg_.query_dim, cfg_.channels, cfg_.channels,
                              n, cfg_.rank_adaptive, cfg_.acm_schedule, cfg_.lors_mode,
                              cfg_.use_bias);
            asm_.emplace_back(cfg_.weight_mode, cfg_.query_dim, cfg_.points_in, cfg_.points_out,
                              n, cfg_.rank_adaptive, cfg_.asm_schedule, cfg_.lors_mode,
                              cfg_.use_bias);
        }
        out_ = StaticFamily(cfg_.weight_mode, cfg_.flat_dim(), cfg_.query_dim, n,
                            cfg_.rank_static, cfg_.out_schedule, cfg_.lors_mode);
        for (int i = 0; i < n; ++i) {
            for (int g = 0; g < cfg_.groups; ++g) {
                acm_gamma_.push_back(Tensor::full({cfg_.channels}, 1.0, true));
                acm_beta_.push_back(Tensor::zeros({cfg_.channels}, true));
                asm_gamma_.push_back(Tensor::full({cfg_.points_out}, 1.0, true));
                asm_beta_.push_back(Tensor::zeros({cfg_.points_out}, true));
            }
            if (cfg_.use_bias) out_bias_.push_back(Tensor::zeros({cfg_.query_dim}, true));
        }
    }

    const StackConfig& config() const { return cfg_; }
    AdaptiveFamily& acm_family(int group) { return acm_.at(static_cast<std::size_t>(group)); }
    AdaptiveFamily& asm_family(int group) { return asm_.at(static_cast<std::size_t>(group)); }
    StaticFamily& out_family() { return out_; }
    Tensor& out_bias(int layer) { return out_bias_.at(static_cast<std::size_t>(layer)); }
    Tensor& acm_gamma(int layer, int group) { return acm_gamma_.at(ln_index(layer, group)); }
    Tensor& acm_beta(int layer, int group) { return acm_beta_.at(ln_index(layer, group)); }
    Tensor& asm_gamma(int layer, int group) { return asm_gamma_.at(ln_index(layer, group)); }
    Tensor& asm_beta(int layer, int group) { return asm_beta_.at(ln_index(layer, group)); }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& fam : acm_) fam.init(rng);
        for (auto& fam : asm_) fam.init(rng);
        out_.init(rng);
        for (Tensor& t : acm_gamma_) fill_constant(t, 1.0);
        for (Tensor& t : asm_gamma_) fill_constant(t, 1.0);
        for (Tensor& t : acm_beta_) fill_constant(t, 0.0);
        for (Tensor& t : asm_beta_) fill_constant(t, 0.0);
        for (Tensor& t : out_bias_) fill_constant(t, 0.0);
    }

    /// Channel mixing: relu(LN(x · M_c(q))). Accepts [P_in, C] with [d_q]
    /// (single instance) or [B, P_in, C] with [B, d_q].
    Tensor channel_mix(int layer, int group, const Tensor& x, const Tensor& q) const {
        const bool single = x.rank() == 2;
        Tensor xb = single ? reshape(x, {1, cfg_.points_in, cfg_.channels}) : x;
        Tensor qb = single ? reshape(q, {1, cfg_.query_dim}) : q;
        check_features(xb, cfg_.points_in, cfg_.channels);
        Tensor mc = acm_.at(static_cast<std::size_t>(group)).weight(layer, qb);
        Tensor mixed = matmul(xb, mc);
        Tensor y = relu(layer_norm(mixed, acm_gamma_[ln_index(layer, group)],
                                   acm_beta_[ln_index(layer, group)], cfg_.ln_eps));
        return single ? reshape(y, {cfg_.points_in, cfg_.channels}) : y;
    }

    /// Spatial mixing: relu(LN(xᵀ · M_s(q))). Accepts [P_in, C] with [d_q]
    /// or [B, P_in, C] with [B, d_q]; result has the channel axis first.
    Tensor spatial_mix(int layer, int group, const Tensor& x, const Tensor& q) const {
        const bool single = x.rank() == 2;
        Tensor xb = single ? reshape(x, {1, cfg_.points_in, cfg_.channels}) : x;
        Tensor qb = single ? reshape(q, {1, cfg_.query_dim}) : q;
        check_features(xb, cfg_.points_in, cfg_.channels);
        Tensor ms = asm_.at(static_cast<std::size_t>(group)).weight(layer, qb);
        Tensor mixed = matmul(transpose2d(xb), ms);
        Tensor y = relu(layer_norm(mixed, asm_gamma_[ln_index(layer, group)],
                                   asm_beta_[ln_index(layer, group)], cfg_.ln_eps));
        return single ? reshape(y, {cfg_.channels, cfg_.points_out}) : y;
    }

    /// Output projection of the flattened mixed features back to query width.
    /// Accepts [flat_dim] or [B, flat_dim].
    Tensor output_project(const Tensor& flat, int layer) const {
        const bool single = flat.rank() == 1;
        Tensor fb = single ? reshape(flat, {1, cfg_.flat_dim()}) : flat;
        if (fb.extent(1) != cfg_.flat_dim()) {
            throw ShapeError("output projection input " + shape_str(flat.shape()) +
                             " vs flat dim " + std::to_string(cfg_.flat_dim()));
        }
        Tensor y = matmul(fb, out_.weight(layer));
        if (cfg_.use_bias) y = add(y, out_bias_.at(static_cast<std::size_t>(layer)));
        return single ? reshape(y, {cfg_.query_dim}) : y;
    }

    /// Full stack over [batch, n_q] queries; returns refined queries of the
    /// same shape. Queries do not interact, so the op is equivariant under
    /// permuting the query axis.
    Tensor forward(const DecoderState& state) const {
        const Shape& qs = state.queries.shape();
        const Shape& fs = state.sampled_features.shape();
        if (qs.size() != 3 || qs[2] != cfg_.query_dim) {
            throw ShapeError("queries " + shape_str(qs) + " vs expected [batch, n_q, " +
                             std::to_string(cfg_.query_dim) + "]");
        }
        if (fs.size() != 5 || fs[0] != qs[0] || fs[1] != qs[1] || fs[2] != cfg_.groups ||
            fs[3] != cfg_.points_in || fs[4] != cfg_.channels) {
            throw ShapeError("sampled features " + shape_str(fs) +
                             " inconsistent with queries " + shape_str(qs) + " and config [g=" +
                             std::to_string(cfg_.groups) + ", P_in=" +
                             std::to_string(cfg_.points_in) + ", C=" +
                             std::to_string(cfg_.channels) + "]");
        }
        const int bq = qs[0] * qs[1];
        Tensor queries = reshape(state.queries, {bq, cfg_.query_dim});
        Tensor features = reshape(state.sampled_features,
                                  {bq, cfg_.groups, cfg_.points_in, cfg_.channels});
        std::vector<Tensor> group_inputs;
        group_inputs.reserve(static_cast<std::size_t>(cfg_.groups));
        for (int g = 0; g < cfg_.groups; ++g) {
            group_inputs.push_back(
                reshape(narrow(features, 1, g, 1), {bq, cfg_.points_in, cfg_.channels}));
        }
        for (int layer = 0; layer < cfg_.n_layers; ++layer) {
            std::vector<Tensor> mixed;
            mixed.reserve(static_cast<std::size_t>(cfg_.groups));
            for (int g = 0; g < cfg_.groups; ++g) {
                Tensor a = channel_mix(layer, g, group_inputs[static_cast<std::size_t>(g)],
                                       queries);
                Tensor s = spatial_mix(layer, g, a, queries);
                mixed.push_back(reshape(s, {bq, 1, cfg_.channels, cfg_.points_out}));
            }
            Tensor flat = reshape(concat(mixed, 1), {bq, cfg_.flat_dim()});
            queries = add(queries, output_project(flat, layer));
        }
        return reshape(queries, qs);
    }

    ParamList parameters() const {
        ParamList out;
        for (int g = 0; g < cfg_.groups; ++g) {
            acm_[static_cast<std::size_t>(g)].append_params(out,
                                                            "acm.group" + std::to_string(g));
        }
        for (int g = 0; g < cfg_.groups; ++g) {
            asm_[static_cast<std::size_t>(g)].append_params(out,
                                                            "asm.group" + std::to_string(g));
        }
        out_.append_params(out, "out");
        for (int i = 0; i < cfg_.n_layers; ++i) {
            for (int g = 0; g < cfg_.groups; ++g) {
                const std::string stem =
                    "ln.layer" + std::to_string(i) + ".group" + std::to_string(g);
                out.push_back({stem + ".acm_gamma", acm_gamma_[ln_index(i, g)]});
                out.push_back({stem + ".acm_beta", acm_beta_[ln_index(i, g)]});
                out.push_back({stem + ".asm_gamma", asm_gamma_[ln_index(i, g)]});
                out.push_back({stem + ".asm_beta", asm_beta_[ln_index(i, g)]});
            }
            if (cfg_.use_bias) {
                out.push_back({"out.layer" + std::to_string(i) + ".bias",
                               out_bias_[static_cast<std::size_t>(i)]});
            }
        }
        return out;
    }

    /// Exact parameter enumeration, split the way the closed forms count.
    ModelCount count() const {
        ModelCount mc;
        for (int g = 0; g < cfg_.groups; ++g) {
            mc.rows.push_back(
                acm_[static_cast<std::size_t>(g)].count("acm.group" + std::to_string(g)));
            mc.rows.push_back(
                asm_[static_cast<std::size_t>(g)].count("asm.group" + std::to_string(g)));
        }
        CountRow out_row = out_.count("out");
        if (cfg_.use_bias) {
            out_row.bias += static_cast<long long>(cfg_.n_layers) * cfg_.query_dim;
        }
        mc.rows.push_back(out_row);
        CountRow ln_row;
        ln_row.component = "layer_norm";
        ln_row.other = static_cast<long long>(cfg_.n_layers) * cfg_.groups * 2 *
                       (cfg_.channels + cfg_.points_out);
        mc.rows.push_back(ln_row);
        return mc;
    }

private:
    std::size_t ln_index(int layer, int group) const {
        if (layer < 0 || layer >= cfg_.n_layers || group < 0 || group >= cfg_.groups) {
            throw IndexError("layer " + std::to_string(layer) + " group " +
                             std::to_string(group) + " out of range");
        }
        return static_cast<std::size_t>(layer) * cfg_.groups + static_cast<std::size_t>(group);
    }

    void check_features(const Tensor& x, int points, int channels) const {
        if (x.rank() != 3 || x.extent(1) != points || x.extent(2) != channels) {
            throw ShapeError("feature block " + shape_str(x.shape()) + " vs expected [*, " +
                             std::to_string(points) + ", " + std::to_string(channels) + "]");
        }
    }

    StackConfig cfg_;
    std::vector<AdaptiveFamily> acm_;
    std::vector<AdaptiveFamily> asm_;
    StaticFamily out_;
    std::vector<Tensor> acm_gamma_, acm_beta_, asm_gamma_, asm_beta_;
    std::vector<Tensor> out_bias_;
};

/// Allocates and initializes a decoder stack for the given config and seed.
inline MixerDecoder build_stack(const StackConfig& config, std::uint64_t seed) {
    MixerDecoder decoder(config);
    decoder.init(seed);
    return decoder;
}

}  // namespace lors
