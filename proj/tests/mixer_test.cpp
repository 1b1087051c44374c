#include <gtest/gtest.h>

#include <random>

#include "lors/grad_check.hpp"
#include "lors/mixer_decoder.hpp"
#include "test_util.hpp"

using lors::DecoderState;
using lors::LorsMode;
using lors::MixerDecoder;
using lors::StackConfig;
using lors::Tensor;
using lors::WeightMode;

namespace {

StackConfig tiny_config() {
    StackConfig cfg;
    cfg.n_layers = 2;
    cfg.query_dim = 8;
    cfg.channels = 4;
    cfg.points_in = 4;
    cfg.points_out = 8;
    cfg.groups = 2;
    cfg.rank_adaptive = 2;
    cfg.rank_static = 2;
    return cfg;
}

DecoderState random_state(const StackConfig& cfg, int batch, int n_q, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DecoderState state;
    state.queries = testutil::random_tensor({batch, n_q, cfg.query_dim}, rng);
    state.sampled_features = testutil::random_tensor(
        {batch, n_q, cfg.groups, cfg.points_in, cfg.channels}, rng);
    return state;
}

void randomize_params(const lors::ParamList& params, std::uint64_t seed, double lo = -0.4,
                      double hi = 0.4) {
    lors::Rng rng(seed);
    for (const auto& p : params) {
        Tensor t = p.tensor;
        lors::fill_uniform(t, rng, lo, hi);
    }
}

}  // namespace

TEST(MixerShapeTest, ReferenceDimensions) {
    StackConfig cfg;  // paper-style defaults
    EXPECT_EQ(cfg.query_dim, 256);
    EXPECT_EQ(cfg.channels, 64);
    EXPECT_EQ(cfg.points_in, 64);
    EXPECT_EQ(cfg.points_out, 128);
    EXPECT_EQ(cfg.groups, 2);
    EXPECT_EQ(cfg.flat_dim(), 16384);
    EXPECT_EQ(cfg.resolved().acm_schedule, (std::vector<int>{1, 1, 2, 2, 3, 3}));
    EXPECT_EQ(cfg.resolved().out_schedule, (std::vector<int>{1, 1, 1, 1, 1, 1}));
}

TEST(MixerShapeTest, MixOutputShapes) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 3);
    std::mt19937_64 rng(4);
    Tensor x = testutil::random_tensor({cfg.points_in, cfg.channels}, rng);
    Tensor q = testutil::random_tensor({cfg.query_dim}, rng);
    Tensor a = dec.channel_mix(0, 0, x, q);
    EXPECT_EQ(a.shape(), (lors::Shape{cfg.points_in, cfg.channels}));
    Tensor s = dec.spatial_mix(0, 0, a, q);
    EXPECT_EQ(s.shape(), (lors::Shape{cfg.channels, cfg.points_out}));
    EXPECT_THROW(dec.channel_mix(0, 0, Tensor::zeros({3, 3}), q), lors::ShapeError);
    EXPECT_THROW(dec.output_project(Tensor::zeros({7}), 0), lors::ShapeError);
}

TEST(MixerShapeTest, ZeroFeaturesGiveZeroOutput) {
    // LN of an all-zero row is beta (= 0 at init) and relu(0) = 0.
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 5);
    std::mt19937_64 rng(6);
    Tensor x = Tensor::zeros({cfg.points_in, cfg.channels});
    Tensor q = testutil::random_tensor({cfg.query_dim}, rng);
    for (double v : dec.channel_mix(1, 0, x, q).data()) EXPECT_EQ(v, 0.0);
    for (double v : dec.spatial_mix(1, 1, x, q).data()) EXPECT_EQ(v, 0.0);
}

TEST(MixerShapeTest, ZeroProjectionInputGivesBias) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 7);
    dec.out_bias(0).data()[2] = 0.625;
    Tensor y = dec.output_project(Tensor::zeros({cfg.flat_dim()}), 0);
    EXPECT_EQ(y.data()[2], 0.625);
    for (int i = 0; i < cfg.query_dim; ++i) {
        if (i != 2) EXPECT_EQ(y.data()[i], 0.0);
    }
}

TEST(MixerOracleTest, SpatialMixMatchesHandWiredOps) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 8);
    randomize_params(dec.parameters(), 9);
    std::mt19937_64 rng(10);
    Tensor x = testutil::random_tensor({1, cfg.points_in, cfg.channels}, rng);
    Tensor q = testutil::random_tensor({1, cfg.query_dim}, rng);
    Tensor got = dec.spatial_mix(1, 0, x, q);

    Tensor ms = dec.asm_family(0).weight(1, q);
    Tensor expect = lors::relu(lors::layer_norm(lors::matmul(lors::transpose2d(x), ms),
                                                dec.asm_gamma(1, 0), dec.asm_beta(1, 0),
                                                cfg.ln_eps));
    EXPECT_EQ(got.data(), expect.data());
}

TEST(MixerOracleTest, DenseGeneratorEqualsZeroKernelLors) {
    // A LORS family right after init (zero kernel projections) is the same
    // function as a dense generator carrying its shared projection.
    StackConfig cfg = tiny_config();
    StackConfig dense_cfg = cfg;
    dense_cfg.weight_mode = WeightMode::kDense;
    MixerDecoder lors_dec = lors::build_stack(cfg, 11);
    MixerDecoder dense_dec(dense_cfg);
    for (int g = 0; g < cfg.groups; ++g) {
        for (int layer = 0; layer < cfg.n_layers; ++layer) {
            dense_dec.acm_family(g).dense_weight(layer).data() =
                lors_dec.acm_family(g).lors().shared_proj().data();
            dense_dec.asm_family(g).dense_weight(layer).data() =
                lors_dec.asm_family(g).lors().shared_proj().data();
        }
    }
    std::mt19937_64 rng(12);
    Tensor q = testutil::random_tensor({3, cfg.query_dim}, rng);
    for (int g = 0; g < cfg.groups; ++g) {
        for (int layer = 0; layer < cfg.n_layers; ++layer) {
            Tensor a = lors_dec.acm_family(g).weight(layer, q);
            Tensor b = dense_dec.acm_family(g).weight(layer, q);
            EXPECT_LT(testutil::max_abs_diff(a.data(), b.data()), 1e-12);
            Tensor c = lors_dec.asm_family(g).weight(layer, q);
            Tensor d = dense_dec.asm_family(g).weight(layer, q);
            EXPECT_LT(testutil::max_abs_diff(c.data(), d.data()), 1e-12);
        }
    }
}

TEST(MixerForwardTest, EmptyStackReturnsQueriesUnchanged) {
    StackConfig cfg = tiny_config();
    cfg.n_layers = 0;
    cfg.acm_schedule.clear();
    MixerDecoder dec(cfg);
    DecoderState state = random_state(cfg, 2, 3, 13);
    Tensor out = dec.forward(state);
    EXPECT_EQ(out.shape(), state.queries.shape());
    EXPECT_EQ(out.data(), state.queries.data());
}

TEST(MixerForwardTest, FreshInitEqualsSharedOnlyTwin) {
    StackConfig cfg = tiny_config();
    MixerDecoder full = lors::build_stack(cfg, 17);
    StackConfig shared_cfg = cfg;
    shared_cfg.lors_mode = LorsMode::kSharedOnly;
    MixerDecoder shared_only = lors::build_stack(shared_cfg, 17);
    DecoderState state = random_state(cfg, 2, 2, 18);
    EXPECT_EQ(full.forward(state).data(), shared_only.forward(state).data());
}

TEST(MixerForwardTest, StateShapeMismatchRejected) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec(cfg);
    DecoderState state = random_state(cfg, 2, 2, 19);
    std::mt19937_64 rng(20);
    state.sampled_features =
        testutil::random_tensor({2, 2, cfg.groups, cfg.points_in + 1, cfg.channels}, rng);
    EXPECT_THROW(dec.forward(state), lors::ShapeError);
}

TEST(MixerForwardTest, DenseVersusLorsWeightTransplant) {
    // Adaptive fused weights are affine in the query, so a dense generator
    // probed from the LORS family reproduces it; static fused weights copy
    // directly. With identical weights the stacks must agree.
    StackConfig cfg = tiny_config();
    cfg.rank_adaptive = std::min(cfg.channels, cfg.points_in);  // full rank, K=1
    cfg.rank_static = 2;
    cfg.acm_schedule = lors::uniform_schedule(cfg.n_layers, 1);
    cfg.asm_schedule = lors::uniform_schedule(cfg.n_layers, 1);
    MixerDecoder lors_dec = lors::build_stack(cfg, 21);
    randomize_params(lors_dec.parameters(), 22);

    StackConfig dense_cfg = cfg;
    dense_cfg.weight_mode = WeightMode::kDense;
    MixerDecoder dense_dec(dense_cfg);

    auto transplant_adaptive = [&](lors::AdaptiveFamily& from, lors::AdaptiveFamily& to,
                                   int d, int h) {
        for (int layer = 0; layer < cfg.n_layers; ++layer) {
            Tensor zero_q = Tensor::zeros({1, cfg.query_dim});
            Tensor w0 = from.weight(layer, zero_q);  // bias part
            to.dense_bias(layer).data() = w0.data();
            for (int i = 0; i < cfg.query_dim; ++i) {
                Tensor basis = Tensor::zeros({1, cfg.query_dim});
                basis.data()[static_cast<std::size_t>(i)] = 1.0;
                Tensor wi = from.weight(layer, basis);
                for (int j = 0; j < d * h; ++j) {
                    to.dense_weight(layer).at({i, j}) = wi.data()[j] - w0.data()[j];
                }
            }
        }
    };
    for (int g = 0; g < cfg.groups; ++g) {
        transplant_adaptive(lors_dec.acm_family(g), dense_dec.acm_family(g), cfg.channels,
                            cfg.channels);
        transplant_adaptive(lors_dec.asm_family(g), dense_dec.asm_family(g), cfg.points_in,
                            cfg.points_out);
        for (int layer = 0; layer < cfg.n_layers; ++layer) {
            dense_dec.acm_gamma(layer, g).data() = lors_dec.acm_gamma(layer, g).data();
            dense_dec.acm_beta(layer, g).data() = lors_dec.acm_beta(layer, g).data();
            dense_dec.asm_gamma(layer, g).data() = lors_dec.asm_gamma(layer, g).data();
            dense_dec.asm_beta(layer, g).data() = lors_dec.asm_beta(layer, g).data();
        }
    }
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        dense_dec.out_family().dense_weight(layer).data() =
            lors_dec.out_family().weight(layer).data();
        dense_dec.out_bias(layer).data() = lors_dec.out_bias(layer).data();
    }

    DecoderState state = random_state(cfg, 2, 3, 23);
    Tensor a = lors_dec.forward(state);
    Tensor b = dense_dec.forward(state);
    EXPECT_LT(testutil::max_abs_diff(a.data(), b.data()), 1e-10);
}

TEST(MixerForwardTest, PermutationEquivariantOverQueries) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 29);
    randomize_params(dec.parameters(), 30);
    DecoderState state = random_state(cfg, 1, 4, 31);
    Tensor out = dec.forward(state);

    // Reverse the n_q axis of both inputs; the outputs must reverse with it.
    auto reversed = [&](const Tensor& t) {
        std::vector<Tensor> slices;
        for (int i = t.extent(1) - 1; i >= 0; --i) slices.push_back(lors::narrow(t, 1, i, 1));
        return lors::concat(slices, 1);
    };
    DecoderState perm;
    perm.queries = reversed(state.queries);
    perm.sampled_features = reversed(state.sampled_features);
    Tensor out_perm = dec.forward(perm);
    Tensor expect = reversed(out);
    EXPECT_EQ(out_perm.data(), expect.data());
}

TEST(MixerForwardTest, GroupIndependence) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 33);
    randomize_params(dec.parameters(), 34);
    std::mt19937_64 rng(35);
    Tensor q = testutil::random_tensor({1, cfg.query_dim}, rng);
    Tensor x0 = testutil::random_tensor({1, cfg.points_in, cfg.channels}, rng);
    Tensor x1 = testutil::random_tensor({1, cfg.points_in, cfg.channels}, rng);
    Tensor zeros = Tensor::zeros({1, cfg.points_in, cfg.channels});

    // Zeroing group 1's features changes the group-1 branch only.
    Tensor g0_before = dec.spatial_mix(0, 0, dec.channel_mix(0, 0, x0, q), q);
    Tensor g1_before = dec.spatial_mix(0, 1, dec.channel_mix(0, 1, x1, q), q);
    Tensor g0_after = dec.spatial_mix(0, 0, dec.channel_mix(0, 0, x0, q), q);
    Tensor g1_after = dec.spatial_mix(0, 1, dec.channel_mix(0, 1, zeros, q), q);
    EXPECT_EQ(g0_before.data(), g0_after.data());
    EXPECT_NE(g1_before.data(), g1_after.data());
}

TEST(MixerBudgetTest, PaperDefaultCountMatchesClosedForm) {
    StackConfig cfg;  // defaults
    MixerDecoder dec(cfg);  // allocation only; init not needed for counting
    lors::ModelCount count = dec.count();

    using lors::BudgetQuery;
    const auto ramp = lors::ramp_schedule(cfg.n_layers);
    const auto ones = lors::uniform_schedule(cfg.n_layers, 1);
    const long long acm = lors::count_lors_total(BudgetQuery::Kind::kAdaptive, cfg.channels,
                                                 cfg.channels, cfg.query_dim,
                                                 cfg.rank_adaptive, ramp);
    const long long asm_total = lors::count_lors_total(BudgetQuery::Kind::kAdaptive,
                                                       cfg.points_in, cfg.points_out,
                                                       cfg.query_dim, cfg.rank_adaptive, ramp);
    const long long out = lors::count_lors_total(BudgetQuery::Kind::kStatic, cfg.flat_dim(),
                                                 cfg.query_dim, 0, cfg.rank_static, ones);
    EXPECT_EQ(count.weights(), cfg.groups * (acm + asm_total) + out);

    // Enumerating the parameter list agrees with the structured count.
    long long from_list = 0;
    for (const auto& p : dec.parameters()) {
        from_list += static_cast<long long>(p.tensor.numel());
    }
    EXPECT_EQ(from_list, count.total());
    EXPECT_EQ(count.total(), count.shared() + count.private_() + count.bias_total() +
                                 count.other_total());
}

TEST(MixerBudgetTest, AllReferenceDepthsConstructible) {
    for (int n : {3, 6, 9, 12}) {
        StackConfig cfg = tiny_config();
        cfg.n_layers = n;
        cfg.acm_schedule.clear();
        cfg.asm_schedule.clear();
        cfg.out_schedule.clear();
        MixerDecoder dec = lors::build_stack(cfg, 36);
        EXPECT_GT(dec.count().total(), 0);
        DecoderState state = random_state(cfg, 1, 2, 37);
        EXPECT_EQ(dec.forward(state).shape(), state.queries.shape());
    }
}

TEST(MixerBudgetTest, SameSeedSameParameters) {
    StackConfig cfg = tiny_config();
    MixerDecoder a = lors::build_stack(cfg, 41);
    MixerDecoder b = lors::build_stack(cfg, 41);
    lors::ParamList pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].name, pb[i].name);
        EXPECT_EQ(pa[i].tensor.data(), pb[i].tensor.data());
    }
    EXPECT_EQ(a.count().total(), b.count().total());
}

TEST(MixerBudgetTest, InvalidConfigRejected) {
    StackConfig cfg = tiny_config();
    cfg.channels = 0;
    EXPECT_THROW(MixerDecoder{cfg}, lors::ConfigError);
    StackConfig cfg2 = tiny_config();
    cfg2.rank_adaptive = 100;
    EXPECT_THROW(MixerDecoder{cfg2}, lors::ConfigError);
    StackConfig cfg3 = tiny_config();
    cfg3.acm_schedule = {1, 2, 3};  // wrong length for 2 layers
    EXPECT_THROW(MixerDecoder{cfg3}, lors::ConfigError);
}

TEST(MixerGradTest, EndToEndGradCheckTinyConfig) {
    StackConfig cfg = tiny_config();
    MixerDecoder dec = lors::build_stack(cfg, 43);
    lors::ParamList params = dec.parameters();
    randomize_params(params, 44, -0.3, 0.3);
    DecoderState state = random_state(cfg, 1, 2, 45);
    std::mt19937_64 rng(46);
    Tensor target = testutil::random_tensor({1, 2, cfg.query_dim}, rng);
    auto f = [&] { return lors::mse(dec.forward(state), target); };
    lors::CheckReport report = lors::grad_check(f, params);
    EXPECT_TRUE(report.pass) << report.worst_param << " " << report.max_rel_error;
}

TEST(MixerFeatureTest, SplitFeatureGroups) {
    std::mt19937_64 rng(47);
    Tensor feats = testutil::random_tensor({2, 3, 4, 6}, rng);  // d_feat=6, g=2 -> C=3
    Tensor grouped = lors::split_feature_groups(feats, 2);
    EXPECT_EQ(grouped.shape(), (lors::Shape{2, 3, 2, 4, 3}));
    // Group g channel c comes from source channel g*C + c.
    EXPECT_EQ(grouped.at({1, 2, 1, 3, 0}), feats.at({1, 2, 3, 3}));
    EXPECT_EQ(grouped.at({1, 2, 0, 3, 2}), feats.at({1, 2, 3, 2}));
    EXPECT_THROW(lors::split_feature_groups(feats, 4), lors::ConfigError);
}
