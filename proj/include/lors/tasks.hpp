#pragma once

#include <cstdint>
#include <vector>

#include "lors/mixer_decoder.hpp"
#include "lors/transformer.hpp"

namespace lors {

/// Freezes a model's parameters so teacher evaluation records no graph.
inline void freeze(const ParamList& params) {
    for (const NamedTensor& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(false);
    }
}

/// Synthetic query-refinement regression: inputs are random queries and
/// sampled features, targets are the refined queries of a frozen, randomly
/// initialized dense teacher decoder. The task is realizable by construction
/// (the teacher itself has zero loss).
class RegressionStackTask {
public:
    struct Batch {
        DecoderState state;
        Tensor target;  // [batch, n_q, d_q]
    };

    /// teacher_ln_beta shifts the frozen teacher's normalization offsets so
    /// most pre-relu activations stay positive, keeping the target function
    /// smooth enough to be learnable at desk scale. Students start at beta=0
    /// and can express the shift themselves. pool_batches fixes the size of
    /// the finite training set; training cycles through it while eval batches
    /// stay held out.
    RegressionStackTask(const StackConfig& arch, int batch, int n_queries, std::uint64_t seed,
                        double teacher_ln_beta = 1.0, int pool_batches = 128)
        : batch_(batch), n_queries_(n_queries), seed_(seed), pool_batches_(pool_batches) {
        if (pool_batches_ < 1) throw ConfigError("pool_batches must be >= 1");
        StackConfig teacher_cfg = arch.resolved();
        teacher_cfg.weight_mode = WeightMode::kDense;
        teacher_ = MixerDecoder(teacher_cfg);
        teacher_.init(seed ^ 0x7eac0de5a17ull);
        for (int layer = 0; layer < teacher_cfg.n_layers; ++layer) {
            for (int g = 0; g < teacher_cfg.groups; ++g) {
                fill_constant(teacher_.acm_beta(layer, g), teacher_ln_beta);
                fill_constant(teacher_.asm_beta(layer, g), teacher_ln_beta);
            }
        }
        freeze(teacher_.parameters());
    }

    const StackConfig& architecture() const { return teacher_.config(); }
    int batch_size() const { return batch_; }
    int queries_per_example() const { return n_queries_; }
    int pool_batches() const { return pool_batches_; }

    /// Training batch for a step: steps cycle deterministically through the
    /// finite pool.
    Batch sample(std::uint64_t step) const { return make_batch(step % pool_batches_); }

    /// Fixed held-out batches, disjoint from the training pool.
    std::vector<Batch> eval_set(int batches) const {
        std::vector<Batch> out;
        out.reserve(static_cast<std::size_t>(batches));
        for (int i = 0; i < batches; ++i) {
            out.push_back(make_batch(kEvalBase + static_cast<std::uint64_t>(i)));
        }
        return out;
    }

    /// The whole training pool, for end-of-run loss evaluation.
    std::vector<Batch> train_pool() const {
        std::vector<Batch> out;
        out.reserve(static_cast<std::size_t>(pool_batches_));
        for (int i = 0; i < pool_batches_; ++i) {
            out.push_back(make_batch(static_cast<std::uint64_t>(i)));
        }
        return out;
    }

    const MixerDecoder& teacher() const { return teacher_; }

private:
    static constexpr std::uint64_t kEvalBase = 1ull << 40;
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        return x;
    }

    Batch make_batch(std::uint64_t index) const {
        const StackConfig& cfg = teacher_.config();
        Rng rng(mix(seed_, index));
        Batch b;
        b.state.queries = Tensor::zeros({batch_, n_queries_, cfg.query_dim});
        fill_uniform(b.state.queries, rng, -1.0, 1.0);
        b.state.sampled_features =
            Tensor::zeros({batch_, n_queries_, cfg.groups, cfg.points_in, cfg.channels});
        fill_uniform(b.state.sampled_features, rng, -1.0, 1.0);
        b.target = teacher_.forward(b.state);
        return b;
    }

    MixerDecoder teacher_;
    int batch_ = 1;
    int n_queries_ = 1;
    std::uint64_t seed_ = 0;
    int pool_batches_ = 128;
};

/// Synthetic patch classification: inputs are random patch tensors, labels
/// are the argmax of a frozen random teacher encoder's logits.
class PatchClassifyTask {
public:
    struct Batch {
        Tensor patches;           // [batch, tokens, patch_dim]
        std::vector<int> labels;  // teacher argmax
    };

    PatchClassifyTask(const EncoderConfig& arch, int batch, std::uint64_t seed,
                      int pool_batches = 128)
        : batch_(batch), seed_(seed), pool_batches_(pool_batches) {
        if (pool_batches_ < 1) throw ConfigError("pool_batches must be >= 1");
        EncoderConfig teacher_cfg = arch.resolved();
        teacher_cfg.weight_mode = WeightMode::kDense;
        teacher_ = MiniEncoder(teacher_cfg);
        teacher_.init(seed ^ 0x5eedf00dull);
        freeze(teacher_.parameters());
    }

    const EncoderConfig& architecture() const { return teacher_.config(); }
    int batch_size() const { return batch_; }
    int pool_batches() const { return pool_batches_; }

    Batch sample(std::uint64_t step) const { return make_batch(step % pool_batches_); }

    std::vector<Batch> eval_set(int batches) const {
        std::vector<Batch> out;
        out.reserve(static_cast<std::size_t>(batches));
        for (int i = 0; i < batches; ++i) {
            out.push_back(make_batch(kEvalBase + static_cast<std::uint64_t>(i)));
        }
        return out;
    }

    std::vector<Batch> train_pool() const {
        std::vector<Batch> out;
        out.reserve(static_cast<std::size_t>(pool_batches_));
        for (int i = 0; i < pool_batches_; ++i) {
            out.push_back(make_batch(static_cast<std::uint64_t>(i)));
        }
        return out;
    }

    /// Teacher argmax labels for arbitrary patches.
    std::vector<int> label(const Tensor& patches) const {
        Tensor logits = teacher_.forward(patches);
        const int batch = logits.extent(0);
        const int classes = logits.extent(1);
        std::vector<int> labels(static_cast<std::size_t>(batch), 0);
        for (int i = 0; i < batch; ++i) {
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (logits.data()[i * classes + c] > logits.data()[i * classes + best]) {
                    best = c;
                }
            }
            labels[static_cast<std::size_t>(i)] = best;
        }
        return labels;
    }

    const MiniEncoder& teacher() const { return teacher_; }

private:
    static constexpr std::uint64_t kEvalBase = 1ull << 40;
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        return x;
    }

    Batch make_batch(std::uint64_t index) const {
        const EncoderConfig& cfg = teacher_.config();
        Rng rng(mix(seed_, index));
        Batch b;
        b.patches = Tensor::zeros({batch_, cfg.patch_count, cfg.patch_dim});
        fill_uniform(b.patches, rng, -1.0, 1.0);
        b.labels = label(b.patches);
        return b;
    }

    MiniEncoder teacher_;
    int batch_ = 1;
    std::uint64_t seed_ = 0;
    int pool_batches_ = 128;
};

}  // namespace lors
