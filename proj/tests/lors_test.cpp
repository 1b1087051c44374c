#include <gtest/gtest.h>

#include <cstdio>
#include <random>
#include <sstream>

#include "lors/adamw.hpp"
#include "lors/lors.hpp"
#include "lors/serialize.hpp"
#include "test_util.hpp"

using lors::AdaptiveLorsParam;
using lors::LorsMode;
using lors::ParamList;
using lors::StaticLorsParam;
using lors::Tensor;

namespace {

void randomize(ParamList& params, std::uint64_t seed, double lo = -0.5, double hi = 0.5) {
    lors::Rng rng(seed);
    for (auto& p : params) lors::fill_uniform(p.tensor, rng, lo, hi);
}

}  // namespace

// ---------------------------------------------------------------------------
// lora_adapt: the reference primitive.
// ---------------------------------------------------------------------------

TEST(LoraAdaptTest, ZeroFactorsLeaveBaseUnchanged) {
    std::mt19937_64 rng(1);
    Tensor w = testutil::random_tensor({4, 3}, rng);
    Tensor down = Tensor::zeros({4, 2});
    Tensor up = testutil::random_tensor({2, 3}, rng);
    EXPECT_EQ(lors::lora_adapt(w, down, up).data(), w.data());
    EXPECT_EQ(lors::lora_adapt(w, testutil::random_tensor({4, 2}, rng), Tensor::zeros({2, 3}))
                  .data(),
              w.data());
}

TEST(LoraAdaptTest, DirectArithmetic) {
    Tensor w = Tensor::zeros({2, 2});
    Tensor down = Tensor::from_data({2, 1}, {1, 1});
    Tensor up = Tensor::from_data({1, 2}, {1, 1});
    EXPECT_EQ(lors::lora_adapt(w, down, up).data(), (std::vector<double>{1, 1, 1, 1}));
    EXPECT_THROW(lors::lora_adapt(w, Tensor::zeros({3, 1}), up), lors::ShapeError);
}

TEST(LoraAdaptTest, DeltaRankBoundedBySvd) {
    std::mt19937_64 rng(2);
    Tensor w = Tensor::zeros({6, 5});
    Tensor down = testutil::random_tensor({6, 2}, rng);
    Tensor up = testutil::random_tensor({2, 5}, rng);
    Tensor delta = lors::lora_adapt(w, down, up);
    EXPECT_LE(testutil::numerical_rank(delta), 2);
}

// ---------------------------------------------------------------------------
// Static variant.
// ---------------------------------------------------------------------------

TEST(StaticLorsTest, DirectArithmeticExample) {
    StaticLorsParam p(2, 2, 1, 1, 1);
    p.shared_weight().data() = {1, 0, 0, 1};
    p.layer_factors(0)[0].down.data() = {1, 0};
    p.layer_factors(0)[0].up.data() = {0, 2};
    Tensor fused = p.fused_weight(0);
    EXPECT_EQ(fused.data(), (std::vector<double>{1, 2, 0, 1}));
    EXPECT_THROW(p.fused_weight(1), lors::IndexError);
    EXPECT_THROW(p.fused_weight(-1), lors::IndexError);
}

TEST(StaticLorsTest, ZeroUpFactorsGiveSharedWeightExactly) {
    StaticLorsParam p(6, 4, 3, 2, std::vector<int>{1, 2, 3});
    p.init(99);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(p.fused_weight(i).data(), p.shared_weight().data()) << "layer " << i;
    }
}

TEST(StaticLorsTest, MatchesDenseRecomputationOracle) {
    StaticLorsParam p(8, 8, 2, 2, 3);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 1234);
    for (int layer = 0; layer < 2; ++layer) {
        Tensor fused = p.fused_weight(layer);
        // Oracle: explicit per-group dense product and sum.
        std::vector<double> expect = p.shared_weight().data();
        for (const auto& f : p.layer_factors(layer)) {
            auto prod = testutil::matmul_reference(f.down.data(), f.up.data(), 8, 2, 8);
            for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += prod[i];
        }
        EXPECT_LT(testutil::max_abs_diff(fused.data(), expect), 1e-12);
    }
}

TEST(StaticLorsTest, InitIsDeterministicAndBounded) {
    StaticLorsParam a(5, 7, 2, 2, 2), b(5, 7, 2, 2, 2);
    a.init(42);
    b.init(42);
    EXPECT_EQ(a.shared_weight().data(), b.shared_weight().data());
    EXPECT_EQ(a.layer_factors(1)[0].down.data(), b.layer_factors(1)[0].down.data());
    StaticLorsParam c(5, 7, 2, 2, 2);
    c.init(43);
    EXPECT_NE(a.shared_weight().data(), c.shared_weight().data());

    const double bound = lors::kaiming_bound(5);
    for (double v : a.shared_weight().data()) {
        EXPECT_LE(std::fabs(v), bound);
    }
    for (double v : a.layer_factors(0)[0].down.data()) EXPECT_LE(std::fabs(v), bound);
    for (double v : a.layer_factors(0)[0].up.data()) EXPECT_EQ(v, 0.0);
}

TEST(StaticLorsTest, ModeConsistency) {
    StaticLorsParam p(6, 5, 2, 2, 2);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 7);
    p.set_mode(LorsMode::kFull);
    Tensor full = p.fused_weight(1);
    p.set_mode(LorsMode::kSharedOnly);
    Tensor shared = p.fused_weight(1);
    p.set_mode(LorsMode::kPrivateOnly);
    Tensor priv = p.fused_weight(1);
    for (std::size_t i = 0; i < full.numel(); ++i) {
        EXPECT_EQ(full.data()[i], shared.data()[i] + priv.data()[i]);
    }
}

TEST(StaticLorsTest, SharedOnlyModeIsLayerInvariant) {
    StaticLorsParam p(4, 4, 3, 2, 2, LorsMode::kSharedOnly);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 8);
    EXPECT_EQ(p.fused_weight(0).data(), p.fused_weight(2).data());
}

TEST(StaticLorsTest, LayerIndependence) {
    StaticLorsParam p(5, 5, 3, 2, 1);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 21);
    std::vector<std::vector<double>> before;
    for (int i = 0; i < 3; ++i) before.push_back(p.fused_weight(i).data());

    p.layer_factors(1)[0].down.data()[0] += 0.75;
    for (int i = 0; i < 3; ++i) {
        if (i == 1) {
            EXPECT_NE(p.fused_weight(i).data(), before[i]);
        } else {
            EXPECT_EQ(p.fused_weight(i).data(), before[i]) << "layer " << i;
        }
    }
    p.shared_weight().data()[3] += 0.5;
    for (int i = 0; i < 3; ++i) EXPECT_NE(p.fused_weight(i).data(), before[i]);
}

TEST(StaticLorsTest, PrivateRankBound) {
    std::mt19937_64 seeds(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int d = 4 + static_cast<int>(seeds() % 29);  // up to 32
        const int h = 4 + static_cast<int>(seeds() % 29);
        const int rmax = std::min({8, d, h});
        const int r = 1 + static_cast<int>(seeds() % static_cast<unsigned>(rmax));
        const int k = 1 + static_cast<int>(seeds() % 4);
        StaticLorsParam p(d, h, 1, r, k, LorsMode::kPrivateOnly);
        ParamList params;
        p.append_params(params, "p");
        randomize(params, seeds());
        Tensor priv = p.fused_weight(0);
        EXPECT_LE(testutil::numerical_rank(priv), std::min({d, h, k * r}))
            << "d=" << d << " h=" << h << " r=" << r << " K=" << k;
    }
}

TEST(StaticLorsTest, FusedWeightPassesGradCheck) {
    StaticLorsParam p(5, 4, 2, 2, 2);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 77);
    std::mt19937_64 rng(78);
    Tensor target = testutil::random_tensor({5, 4}, rng);
    auto f = [&] { return lors::mse(p.fused_weight(1), target); };
    lors::CheckReport report = lors::grad_check(f, params);
    EXPECT_TRUE(report.pass) << report.worst_param << " " << report.max_rel_error;
}

TEST(StaticLorsTest, RankOutsideBoundsRejected) {
    EXPECT_THROW(StaticLorsParam(4, 6, 2, 5, 1), lors::ConfigError);
    EXPECT_THROW(StaticLorsParam(4, 6, 2, 0, 1), lors::ConfigError);
    EXPECT_THROW(StaticLorsParam(4, 6, 2, 2, std::vector<int>{1}), lors::ConfigError);
}

// ---------------------------------------------------------------------------
// Adaptive variant.
// ---------------------------------------------------------------------------

TEST(AdaptiveLorsTest, ZeroKernelPathGivesSharedProjection) {
    AdaptiveLorsParam p(6, 4, 5, 3, 2, 2);
    p.init(11);
    std::mt19937_64 rng(12);
    Tensor q = testutil::random_tensor({3, 6}, rng);
    Tensor shared = p.shared_weight(q);
    for (int layer = 0; layer < 3; ++layer) {
        Tensor fused = p.fused_weight(layer, q);
        EXPECT_EQ(fused.shape(), (lors::Shape{3, 4, 5}));
        EXPECT_EQ(fused.data(), shared.data()) << "layer " << layer;
    }
    for (const auto& f : p.layer_factors(1)) {
        for (double v : f.kernel_proj.data()) EXPECT_EQ(v, 0.0);
        for (double v : f.kernel_bias.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(AdaptiveLorsTest, ZeroQueryZeroBiasGivesZeroWeight) {
    AdaptiveLorsParam p(6, 4, 5, 2, 2, 1);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 31);
    for (auto& np : params) {  // zero the biases, keep weights random
        if (np.name.find("bias") != std::string::npos) lors::fill_constant(np.tensor, 0.0);
    }
    Tensor q = Tensor::zeros({2, 6});
    Tensor fused = p.fused_weight(0, q);
    for (double v : fused.data()) EXPECT_EQ(v, 0.0);
}

TEST(AdaptiveLorsTest, BatchMatchesPerQueryEvaluation) {
    AdaptiveLorsParam p(10, 8, 16, 2, 4, 2);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 41);
    std::mt19937_64 rng(42);
    Tensor q = testutil::random_tensor({3, 10}, rng);
    Tensor batched = p.fused_weight(1, q);
    for (int b = 0; b < 3; ++b) {
        std::vector<double> row(q.data().begin() + b * 10, q.data().begin() + (b + 1) * 10);
        Tensor single = p.fused_weight(1, Tensor::from_data({10}, row));
        for (std::size_t i = 0; i < single.numel(); ++i) {
            EXPECT_NEAR(batched.data()[b * 8 * 16 + i], single.data()[i], 1e-12);
        }
    }
}

TEST(AdaptiveLorsTest, ModeConsistency) {
    AdaptiveLorsParam p(5, 4, 6, 2, 2, 3);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 51);
    std::mt19937_64 rng(52);
    Tensor q = testutil::random_tensor({2, 5}, rng);
    p.set_mode(LorsMode::kFull);
    Tensor full = p.fused_weight(0, q);
    p.set_mode(LorsMode::kSharedOnly);
    Tensor shared = p.fused_weight(0, q);
    p.set_mode(LorsMode::kPrivateOnly);
    Tensor priv = p.fused_weight(0, q);
    for (std::size_t i = 0; i < full.numel(); ++i) {
        EXPECT_EQ(full.data()[i], shared.data()[i] + priv.data()[i]);
    }
}

TEST(AdaptiveLorsTest, PrivateRankBoundPerQuery) {
    std::mt19937_64 seeds(61);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 6 + static_cast<int>(seeds() % 27);
        const int h = 6 + static_cast<int>(seeds() % 27);
        const int r = 1 + static_cast<int>(seeds() % 6);
        const int k = 1 + static_cast<int>(seeds() % 4);
        AdaptiveLorsParam p(7, d, h, 1, r, k, LorsMode::kPrivateOnly);
        ParamList params;
        p.append_params(params, "p");
        randomize(params, seeds());
        std::mt19937_64 rng(seeds());
        Tensor q = testutil::random_tensor({1, 7}, rng);
        Tensor priv = lors::reshape(p.fused_weight(0, q), {d, h});
        EXPECT_LE(testutil::numerical_rank(priv), std::min({d, h, k * r}));
    }
}

TEST(AdaptiveLorsTest, FusedWeightGradCheckIncludingKernelPath) {
    AdaptiveLorsParam p(5, 4, 6, 2, 2, 2);
    ParamList params;
    p.append_params(params, "p");
    randomize(params, 71);  // kernel projections nonzero: the Ê path carries signal
    std::mt19937_64 rng(72);
    Tensor q = testutil::random_tensor({2, 5}, rng, -1.0, 1.0, true);
    Tensor target = testutil::random_tensor({2, 4, 6}, rng);
    ParamList checked = params;
    checked.push_back({"q", q});
    auto f = [&] { return lors::mse(p.fused_weight(1, q), target); };
    lors::CheckReport report = lors::grad_check(f, checked);
    EXPECT_TRUE(report.pass) << report.worst_param << " " << report.max_rel_error;
}

TEST(AdaptiveLorsTest, QueryShapeMismatchRejected) {
    AdaptiveLorsParam p(5, 4, 6, 2, 2, 1);
    EXPECT_THROW(p.fused_weight(0, Tensor::zeros({2, 4})), lors::ShapeError);
    EXPECT_THROW(p.fused_weight(0, Tensor::zeros({4})), lors::ShapeError);
}

// ---------------------------------------------------------------------------
// Expressivity: with K=1 and full rank the factorization reaches any target.
// ---------------------------------------------------------------------------

TEST(StaticLorsTest, FullRankFactorizationFitsRandomTarget) {
    const int d = 8;
    StaticLorsParam p(d, d, 1, d, 1, LorsMode::kPrivateOnly);
    p.init(5);
    ParamList params;
    p.append_params(params, "p");
    std::mt19937_64 rng(6);
    Tensor target = testutil::random_tensor({d, d}, rng);
    lors::AdamW opt({.lr = 0.05});
    double loss = 1.0;
    for (int step = 0; step < 5000 && loss > 1e-7; ++step) {
        lors::zero_grads(params);
        Tensor diff = lors::sub(p.fused_weight(0), target);
        Tensor l = lors::sum_all(lors::mul(diff, diff));
        lors::backward(l);
        opt.step(params);
        loss = l.value();
    }
    EXPECT_LT(loss, 1e-6);
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

TEST(SerializeTest, RoundTripIsBitExact) {
    AdaptiveLorsParam p(5, 4, 6, 2, 2, 2);
    ParamList params;
    p.append_params(params, "adaptive");
    randomize(params, 90);

    std::ostringstream buffer(std::ios::binary);
    lors::save_tensors(buffer, params);
    std::istringstream in(buffer.str(), std::ios::binary);
    ParamList loaded = lors::load_tensors(in);

    ASSERT_EQ(loaded.size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ(loaded[i].name, params[i].name);
        EXPECT_EQ(loaded[i].tensor.shape(), params[i].tensor.shape());
        EXPECT_EQ(loaded[i].tensor.data(), params[i].tensor.data());
    }

    AdaptiveLorsParam q(5, 4, 6, 2, 2, 2);
    ParamList fresh;
    q.append_params(fresh, "adaptive");
    lors::restore_into(loaded, fresh);
    std::mt19937_64 rng(91);
    Tensor query = testutil::random_tensor({1, 5}, rng);
    EXPECT_EQ(q.fused_weight(1, query).data(), p.fused_weight(1, query).data());
}

TEST(SerializeTest, HeaderStartsWithMagic) {
    std::ostringstream buffer(std::ios::binary);
    lors::save_tensors(buffer, {{"x", Tensor::from_data({2}, {1.0, -2.5})}});
    const std::string bytes = buffer.str();
    ASSERT_GE(bytes.size(), 5u);
    EXPECT_EQ(bytes.substr(0, 5), "LORS1");

    std::istringstream bad("nope!", std::ios::binary);
    EXPECT_THROW(lors::load_tensors(bad), lors::ContractError);
}

TEST(SerializeTest, RestoreRejectsMissingOrMismatched) {
    ParamList saved{{"a", Tensor::from_data({2}, {1, 2})}};
    ParamList want_missing{{"b", Tensor::zeros({2})}};
    EXPECT_THROW(lors::restore_into(saved, want_missing), lors::ContractError);
    ParamList want_badshape{{"a", Tensor::zeros({3})}};
    EXPECT_THROW(lors::restore_into(saved, want_badshape), lors::ShapeError);
}
