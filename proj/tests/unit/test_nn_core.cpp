#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "caprl/gradcheck_suites.hpp"
#include "caprl/nn/adam.hpp"
#include "caprl/nn/checkpoint.hpp"
#include "caprl/nn/gradcheck.hpp"
#include "caprl/nn/layers.hpp"
#include "caprl/wide_reference.hpp"
#include "support/fixtures.hpp"

using namespace caprl;
using namespace caprl::nn;

namespace {

/// Single-tensor parameter set for optimizer and gradcheck tests.
struct Scalar {
    Tensor2 value{1, 1};

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        fn("value", self.value);
    }
};
static_assert(ParameterSet<Scalar>);

Scalar scalar(double v) {
    Scalar s;
    s.value.data[0] = v;
    return s;
}

}  // namespace

// Dense ----------------------------------------------------------------------

TEST(Dense, IdentityWeightsPassInputThrough) {
    DenseLayer d(3, 3);
    for (std::size_t k = 0; k < 3; ++k) d.weight(k, k) = 1.0;
    const Vector x = {0.5, -2.0, 7.0};
    EXPECT_EQ(dense_forward(d, x), x);
}

TEST(Dense, ZeroWeightsGiveBias) {
    DenseLayer d(4, 2);
    d.bias.data = {1.0, 2.0};
    EXPECT_EQ(dense_forward(d, Vector{3, 4, 5, 6}), (Vector{1.0, 2.0}));
}

TEST(Dense, HandComputedProduct) {
    DenseLayer d(2, 2);
    d.weight.data = {1, 0, 0, 3};
    d.bias.data = {0, 1};
    EXPECT_EQ(dense_forward(d, Vector{1, 2}), (Vector{1, 7}));
}

TEST(Dense, ShapeMismatchIsShapeError) {
    DenseLayer d(2, 2);
    EXPECT_THROW(dense_forward(d, Vector{1, 2, 3}), ShapeError);
    d.bias = Tensor2(1, 3);
    EXPECT_THROW(dense_forward(d, Vector{1, 2}), ShapeError);
}

// LSTM -----------------------------------------------------------------------

TEST(Lstm, ZeroEverythingGivesZeroState) {
    LstmCell cell(3, 4);
    const auto [h, c] = lstm_step(cell, Vector(3, 0.7), Vector(4, 0.0), Vector(4, 0.0));
    for (double v : h) EXPECT_EQ(v, 0.0);
    for (double v : c) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, ZeroWeightsCellDecaysByForgetGate) {
    LstmCell cell(2, 3);
    const double bf = 1.0;
    for (std::size_t k = 3; k < 6; ++k) cell.bias.data[k] = bf;
    const Vector c_prev = {0.5, -1.5, 2.0};
    const auto [h, c] = lstm_step(cell, Vector{1.0, -1.0}, Vector{0.2, 0.3, 0.4}, c_prev);
    const double f = 1.0 / (1.0 + std::exp(-bf));
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(c[k], f * c_prev[k], 1e-15);
        EXPECT_NEAR(h[k], 0.5 * std::tanh(c[k]), 1e-15);
    }
}

TEST(Lstm, InitSetsForgetBiasToOne) {
    LstmCell cell(3, 4);
    Rng rng(1);
    cell.init(rng);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(cell.bias.data[k], (k >= 4 && k < 8) ? 1.0 : 0.0);
}

TEST(LstmProperty, HiddenStateBoundedByOne) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        LstmCell cell(4, 5);
        for (Tensor2* t : tensors_of(cell)) {
            for (double& v : t->data) v = rng.uniform(-20.0, 20.0);
        }
        Vector x(4), h(5), c(5);
        for (double& v : x) v = rng.uniform(-50.0, 50.0);
        for (double& v : h) v = rng.uniform(-1.0, 1.0);
        for (double& v : c) v = rng.uniform(-10.0, 10.0);
        const auto [h1, c1] = lstm_step(cell, x, h, c);
        for (double v : h1) EXPECT_LE(std::abs(v), 1.0);
    }
}

TEST(Lstm, ShapeMismatchIsShapeError) {
    LstmCell cell(2, 3);
    EXPECT_THROW(lstm_step(cell, Vector(3), Vector(3), Vector(3)), ShapeError);
    EXPECT_THROW(lstm_step(cell, Vector(2), Vector(2), Vector(3)), ShapeError);
}

// Softmax / cross-entropy ----------------------------------------------------

TEST(Softmax, SymmetricInputIsUniform) { EXPECT_EQ(softmax(Vector{0, 0}), (Vector{0.5, 0.5})); }

TEST(Softmax, ClosedForm) {
    const auto p = softmax(Vector{std::log(2.0), 0.0});
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxProperty, ShiftInvariantPositiveAndNormalized) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Vector z(1 + rng.below(20));
        for (double& v : z) v = rng.uniform(-30.0, 30.0);
        const double c = rng.uniform(-100.0, 100.0);
        Vector shifted = z;
        for (double& v : shifted) v += c;
        const auto p = softmax(z), q = softmax(shifted);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        for (std::size_t k = 0; k < p.size(); ++k) {
            EXPECT_GT(p[k], 0.0);
            EXPECT_NEAR(p[k], q[k], 1e-12);
        }
    }
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const auto p = softmax(Vector{1000.0, 999.0, -1000.0});
    EXPECT_TRUE(std::isfinite(p[0]));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(CrossEntropy, PerfectPredictionIsZero) { EXPECT_EQ(cross_entropy(1, Vector{0.0, 1.0}), 0.0); }

TEST(CrossEntropy, UniformOverFour) {
    EXPECT_NEAR(cross_entropy(2, Vector(4, 0.25)), 1.386294, 1e-6);
    EXPECT_DOUBLE_EQ(cross_entropy(2, Vector(4, 0.25)), std::log(4.0));
}

TEST(CrossEntropy, ZeroProbabilityIsClipped) {
    EXPECT_NEAR(cross_entropy(0, Vector{0.0, 1.0}), 27.631, 1e-3);
    EXPECT_DOUBLE_EQ(cross_entropy(0, Vector{0.0, 1.0}), -std::log(1e-12));
}

TEST(CrossEntropy, OneHotFormMatchesIndexForm) {
    const Vector p = {0.2, 0.5, 0.3};
    EXPECT_EQ(cross_entropy(Vector{0, 1, 0}, p), cross_entropy(1, p));
    EXPECT_THROW(cross_entropy(Vector{0, 1}, p), ShapeError);
    EXPECT_THROW(cross_entropy(3, p), ShapeError);
}

TEST(CrossEntropyProperty, NonNegativeZeroOnlyAtCertainty) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        Vector z(2 + rng.below(6));
        for (double& v : z) v = rng.uniform(-5.0, 5.0);
        const auto p = softmax(z);
        const std::size_t t = rng.below(p.size());
        const double ce = cross_entropy(t, p);
        EXPECT_GE(ce, 0.0);
        EXPECT_EQ(ce == 0.0, p[t] >= 1.0 - 1e-12);
    }
}

// Adam -----------------------------------------------------------------------

TEST(Adam, ZeroGradientFreshStateLeavesParams) {
    Scalar p = scalar(1.5);
    auto state = AdamState::for_params(p);
    adam_update(state, p, scalar(0.0));
    EXPECT_EQ(p.value.data[0], 1.5);
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    for (double g : {3.0, -0.25, 1e-3}) {
        Scalar p = scalar(0.0);
        auto state = AdamState::for_params(p);
        adam_update(state, p, scalar(g));
        const double expected = -1e-3 * g / (std::abs(g) + 1e-8);
        EXPECT_NEAR(p.value.data[0], expected, 1e-15);
        EXPECT_NEAR(std::abs(p.value.data[0]), 1e-3, 1e-7);
    }
}

TEST(Adam, ConstantGradientMovesMonotonically) {
    Scalar p = scalar(0.0);
    auto state = AdamState::for_params(p);
    const double start = p.value.data[0];
    adam_update(state, p, scalar(2.0));
    const double after1 = p.value.data[0];
    adam_update(state, p, scalar(2.0));
    EXPECT_LT(after1, start);
    EXPECT_LT(p.value.data[0], after1);
}

TEST(AdamProperty, ZeroGradientIsIdentityForAnyState) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Scalar p = scalar(rng.uniform(-3, 3));
        auto state = AdamState::for_params(p);
        const std::size_t warm = rng.below(5);
        for (std::size_t k = 0; k < warm; ++k) adam_update(state, p, scalar(rng.uniform(-1, 1)));
        const Scalar before = p;
        const auto t = state.step;
        adam_update(state, p, scalar(0.0));
        EXPECT_EQ(p.value, before.value);
        EXPECT_EQ(state.step, t + 1);
    }
}

TEST(Adam, MismatchedGradientShapeIsShapeError) {
    Scalar p = scalar(0.0);
    auto state = AdamState::for_params(p);
    Scalar bad;
    bad.value = Tensor2(2, 1);
    EXPECT_THROW(adam_update(state, p, bad), ShapeError);
}

// Finite differences -----------------------------------------------------------

TEST(Gradcheck, QuadraticAtThree) {
    const auto r = finite_diff_gradcheck([](const Scalar& s) { return s.value.data[0] * s.value.data[0]; }, scalar(3.0),
                                         scalar(6.0), 1e-5);
    EXPECT_LE(r.max_rel_error, 1e-9);
    EXPECT_EQ(r.checked, 1u);
}

TEST(Gradcheck, ConstantLossHasZeroError) {
    const auto r = finite_diff_gradcheck([](const Scalar&) { return 4.0; }, scalar(1.0), scalar(0.0), 1e-5);
    EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(Gradcheck, NonFiniteLossIsNumericError) {
    auto loss = [](const Scalar& s) { return std::log(s.value.data[0]); };
    EXPECT_THROW(finite_diff_gradcheck(loss, scalar(0.0), scalar(1.0), 1e-5), NumericError);
}

TEST(Gradcheck, WrongGradientIsDetected) {
    const auto r = finite_diff_gradcheck([](const Scalar& s) { return s.value.data[0] * s.value.data[0]; }, scalar(3.0),
                                         scalar(6.1), 1e-5);
    EXPECT_GT(r.max_rel_error, 1e-3);
    EXPECT_EQ(r.worst_tensor, "value");
}

TEST(Gradcheck, NonPositiveStepIsRejected) {
    auto loss = [](const Scalar& s) { return s.value.data[0]; };
    EXPECT_THROW(finite_diff_gradcheck(loss, scalar(0.0), scalar(1.0), 0.0), ValidationError);
}

TEST(Gradcheck, TwoWordCaptionModelSingleExample) {
    // Four special tokens plus two words.
    CaptionModelConfig c{4, 3, 5, 6, 4, 19};
    const auto params = build_model(c);
    const Vector feature = {0.3, -0.2, 0.9, 0.1};
    const std::vector<TokenId> inputs = {1, 4, 5}, targets = {4, 5, 2};
    auto grad = zeros_like(params);
    teacher_forced(params, feature, inputs, targets, &grad);
    auto loss = [&](const CaptionModelParams& p) { return wide::caption_nll(p, feature, inputs, targets); };
    EXPECT_LT(finite_diff_gradcheck(loss, params, grad, 1e-5).max_rel_error, 1e-4);
}

// The layer suites run at full strength in the acceptance binary; a couple of
// trials each keep the unit run quick.
TEST(GradcheckSuites, EverySuitePassesOnFewTrials) {
    GradcheckSuiteOptions o;
    o.trials = 2;
    o.seed = 99;
    for (const auto& r : run_gradcheck_suites(o)) {
        EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " worst " << r.worst;
        EXPECT_GT(r.checked, 0u) << r.name;
    }
}

TEST(GradcheckSuites, SmallMaxUnitsIsConfigError) {
    GradcheckSuiteOptions o;
    o.max_units = 4;
    EXPECT_THROW(run_gradcheck_suites(o), ConfigError);
}

// Long double reference passes --------------------------------------------------

TEST(WideReference, AgreesWithDoubleForwardPasses) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        CaptionModelConfig c{1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6), 5 + rng.below(4), 6, rng.next_u64()};
        const auto p = build_model(c);
        Vector feature(c.feature_dim);
        for (double& v : feature) v = rng.uniform(-1, 1);
        std::vector<TokenId> inputs = {1}, targets;
        for (int k = 0; k < 3; ++k) inputs.push_back(static_cast<TokenId>(rng.below(c.vocab_size)));
        for (std::size_t k = 1; k < inputs.size(); ++k) targets.push_back(inputs[k]);
        targets.push_back(2);
        const double d = teacher_forced(p, feature, inputs, targets);
        const double w = static_cast<double>(wide::caption_nll(p, feature, inputs, targets));
        EXPECT_NEAR(d, w, 1e-12 * std::max(1.0, std::abs(d)));
    }
}

TEST(WideReference, CriticScoreMatchesDouble) {
    CriticConfig c{5, 4, 3, 8, 77};
    const auto p = build_critic(c);
    const Vector feature = {0.1, 0.2, -0.3, 0.4, -0.5};
    const std::vector<TokenId> caption = {1, 5, 7, 2};
    EXPECT_NEAR(critic_forward(p, feature, caption), static_cast<double>(wide::critic_score(p, feature, caption)),
                1e-14);
}

// Checkpoints --------------------------------------------------------------------

TEST(Checkpoint, TensorsRoundTripExactly) {
    DenseLayer d(3, 2);
    Rng rng(5);
    d.init(rng);
    d.bias.data = {1.0 / 3.0, -1e-300};
    const auto json = tensors_to_json(d);
    DenseLayer back(3, 2);
    tensors_from_json(json, back);
    EXPECT_EQ(back, d);
}

TEST(Checkpoint, ShapeOrNameMismatchIsRejected) {
    const auto json = tensors_to_json(DenseLayer(3, 2));
    DenseLayer wrong(2, 2);
    EXPECT_THROW(tensors_from_json(json, wrong), ShapeError);
    auto renamed = json;
    renamed[0]["name"] = "other";
    DenseLayer d(3, 2);
    EXPECT_THROW(tensors_from_json(renamed, d), ParseError);
    auto extra = json;
    extra.push_back(json[0]);
    EXPECT_THROW(tensors_from_json(extra, d), ParseError);
}

TEST(Checkpoint, HeaderIsChecked) {
    caprl::testing::TempDir dir;
    write_json_file(dir / "x.json", make_checkpoint("caption_model", {}, nlohmann::json::array()));
    EXPECT_NO_THROW(read_checkpoint(dir / "x.json", "caption_model"));
    EXPECT_THROW(read_checkpoint(dir / "x.json", "critic"), ParseError);
    caprl::testing::write_file(dir / "bad.json", "{\"format\":\"other\"}");
    EXPECT_THROW(read_checkpoint(dir / "bad.json", "critic"), ParseError);
    caprl::testing::write_file(dir / "junk.json", "not json");
    EXPECT_THROW(read_checkpoint(dir / "junk.json", "critic"), ParseError);
    EXPECT_THROW(read_checkpoint(dir / "missing.json", "critic"), IoError);
}

TEST(Tensor, ConstructionChecksLength) {
    EXPECT_THROW(Tensor2(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor2 t(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t(1, 0), 4.0);
    EXPECT_TRUE(t.all_finite());
    t(0, 0) = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(42);
    for (int k = 0; k < 1000; ++k) {
        const double u = c.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(c.below(7), 7u);
    }
}
