#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "unmt/checkpoint.hpp"
#include "unmt/errors.hpp"
#include "unmt/optim.hpp"

using namespace unmt;
using unmt::testing::grad_check;
using unmt::testing::random_tensor;

namespace {
constexpr Real kInf = std::numeric_limits<Real>::infinity();
}

TEST(Tensor, ShapeAndValueCountAgree) {
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rows(), 6u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor i2 = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor r = matmul(i2, m);
  EXPECT_EQ(std::vector<Real>(r.values().begin(), r.values().end()), (std::vector<Real>{1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})).item(), 11.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Rng rng(3);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng, false);
  GradientMap g = backward(sum(matmul(a, b)));
  const Tensor& ga = g.at(a);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      Real expect = 0;
      for (std::size_t j = 0; j < 3; ++j) expect += b.at(k, j);
      EXPECT_NEAR(ga.values()[i * 5 + k], expect, 1e-12);
    }
  EXPECT_LT(grad_check([&] { return sum(matmul(a, b)); }, {a}).max_relative_error, 1e-6);
}

TEST(Softmax, SpecExamples) {
  Tensor a = softmax_lastdim(Tensor::vector({0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  Tensor b = softmax_lastdim(Tensor::vector({-kInf, 0}));
  EXPECT_EQ(b[0], 0.0);
  EXPECT_EQ(b[1], 1.0);
  Tensor c = softmax_lastdim(Tensor::vector({-kInf, -kInf}));
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
}

TEST(Softmax, NanInputIsNumericError) {
  EXPECT_THROW(softmax_lastdim(Tensor::vector({std::nan(""), 0})), NumericError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 7}, rng, false, 3.0);
    Tensor p = softmax_lastdim(x);
    Tensor q = softmax_lastdim(add_scalar(x, 11.5));
    for (std::size_t r = 0; r < 3; ++r) {
      Real s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += p.at(r, c);
        EXPECT_NEAR(p.at(r, c), q.at(r, c), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, MonotoneInItsInput) {
  Tensor p = softmax_lastdim(Tensor::vector({0.1, 0.5, 0.2}));
  Tensor q = softmax_lastdim(Tensor::vector({0.1, 0.9, 0.2}));
  EXPECT_GT(q[1], p[1]);
}

TEST(LayerNorm, SpecExamples) {
  Tensor ones = Tensor::full({2}, 1.0);
  Tensor zeros = Tensor::zeros({2});
  Tensor c = layer_norm(Tensor::matrix({{4, 4}}), ones, zeros);
  EXPECT_NEAR(c[0], 0.0, 1e-9);
  EXPECT_NEAR(c[1], 0.0, 1e-9);
  Tensor r = layer_norm(Tensor::matrix({{1, 3}}), ones, zeros);
  EXPECT_NEAR(r[0], -1.0, 1e-5);
  EXPECT_NEAR(r[1], 1.0, 1e-5);
}

TEST(LayerNorm, NormalisesRandomRows) {
  Rng rng(8);
  Tensor x = random_tensor({5, 16}, rng, false, 4.0);
  Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 5; ++r) {
    Real mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c) / 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean) / 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(LayerNorm, ZeroWidthIsDimensionError) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})), DimensionError);
}

TEST(BatchNorm, TrainModeExamples) {
  BatchNormState state(1);
  Tensor g = Tensor::full({1}, 1.0), b = Tensor::zeros({1});
  Tensor y = batch_norm(Tensor::matrix({{-1}, {1}}), g, b, state, Mode::Train);
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
  Tensor z = batch_norm(Tensor::matrix({{2}, {2}, {2}}), g, b, state, Mode::Train);
  for (Real v : z.values()) EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_EQ(state.updates, 2u);
}

TEST(BatchNorm, SingleRowInTrainModeIsDegenerate) {
  BatchNormState state(2);
  EXPECT_THROW(batch_norm(Tensor::matrix({{1, 2}}), Tensor::full({2}, 1.0), Tensor::zeros({2}), state,
                          Mode::Train),
               DimensionError);
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  BatchNormState state(2);
  state.running_mean = {1.0, -2.0};
  state.running_var = {4.0, 0.25};
  Tensor gain = Tensor::vector({2.0, 0.5}), bias = Tensor::vector({0.1, -0.3});
  Tensor x = Tensor::matrix({{3, 1}, {0, -2}});
  Tensor y = batch_norm(x, gain, bias, state, Mode::Eval);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      const Real expect = (x.at(r, c) - state.running_mean[c]) / std::sqrt(state.running_var[c] + state.eps) *
                              gain[c] + bias[c];
      EXPECT_NEAR(y.at(r, c), expect, 1e-14);
    }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  BatchNormState state(1);
  batch_norm(Tensor::matrix({{1}, {3}}), Tensor::full({1}, 1.0), Tensor::zeros({1}), state, Mode::Train);
  EXPECT_NEAR(state.running_mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(state.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(1);
  Tensor x = random_tensor({2, 3, 2}, rng);
  Tensor g = backward(sum(x)).at(x);
  for (Real v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquaredNormGivesTwiceInput) {
  Tensor x = Tensor::vector({1.5, -2.0, 0.25}, true);
  Tensor g = backward(sum(mul(x, x))).at(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], 2 * x[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, ConstantsNeverAppearInGradientMap) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor c = Tensor::vector({3, 4}, false);
  GradientMap g = backward(sum(mul(x, c)));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(c));
}

TEST(Backward, RepeatedCallsAreBitIdentical) {
  Rng rng(9);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  Tensor loss = sum(tanh(matmul(a, b)));
  GradientMap g1 = backward(loss), g2 = backward(loss);
  for (const Tensor* t : {&a, &b}) {
    auto x = g1.at(*t).values(), y = g2.at(*t).values();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(Backward, SharedSubgraphAccumulates) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  Tensor loss = add(y, y);
  EXPECT_DOUBLE_EQ(backward(loss).at(x).item(), 12.0);
}

TEST(NoGrad, GuardSkipsGraphRecording) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = scale(x, 2.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(GradientSuite, ElementwiseAndReductionOps) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), row = random_tensor({4}, rng);
    Tensor pos = Tensor::from_values({3, 4}, [&] {
      std::vector<Real> v(12);
      std::uniform_real_distribution<Real> u(0.5, 2.0);
      for (auto& x : v) x = u(rng);
      return v;
    }(), true);
    EXPECT_LT(grad_check([&] { return sum(mul(sub(a, b), add_row(a, row))); }, {a, b, row}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return mean(mul(sigmoid(a), tanh(b))); }, {a, b}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(log(pos), exp(scale(a, 0.3)))); }, {pos, a}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(softmax_lastdim(a), b)); }, {a}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(log_softmax_lastdim(a), b)); }, {a}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(transpose(a), transpose(b))); }, {a, b}).max_relative_error, 1e-4);
  }
}

TEST(GradientSuite, LinearNormsAndLosses) {
  Rng rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng), bias = random_tensor({3}, rng);
    Tensor gain = random_tensor({4}, rng), shift = random_tensor({4}, rng), probe = random_tensor({5, 4}, rng, false);
    std::vector<int> labels{0, 2, 1, 1, 0};
    EXPECT_LT(grad_check([&] { return cross_entropy(linear(x, w, bias), labels); }, {x, w, bias}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(layer_norm(x, gain, shift), probe)); }, {x, gain, shift}).max_relative_error, 1e-4);
    BatchNormState state(4);
    EXPECT_LT(grad_check([&] {
                BatchNormState s = state;
                return sum(mul(batch_norm(x, gain, shift, s, Mode::Train), probe));
              }, {x, gain, shift}).max_relative_error, 1e-4);
  }
}

TEST(GradientSuite, SegmentAndGatherOps) {
  Rng rng(23);
  Segments seg = Segments::from_lengths(std::vector<std::size_t>{2, 3, 1});
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({6, 3}, rng), table = random_tensor({5, 3}, rng);
    Tensor probe = random_tensor({3, 3}, rng, false);
    std::vector<int> ids{4, 0, 2, 2};
    EXPECT_LT(grad_check([&] { return sum(mul(segment_mean(x, seg), probe)); }, {x}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(segment_max(x, seg), probe)); }, {x}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(mul(segment_sum(x, seg), probe)); }, {x}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(tanh(rows_gather(table, ids))); }, {table}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] {
                Tensor parts[] = {slice_rows(x, 1, 3), tanh(slice_rows(x, 0, 3))};
                return sum(mul(concat_cols(parts), concat_cols(parts)));
              }, {x}).max_relative_error, 1e-4);
    EXPECT_LT(grad_check([&] { return sum(tanh(unfold_windows(x, 3, 2))); }, {x}).max_relative_error, 1e-4);
  }
}

TEST(Dropout, EvalModeIsIdentityAndTrainModeRescales) {
  Rng rng(4);
  Tensor x = Tensor::full({1000}, 1.0);
  Tensor e = dropout(x, 0.3, rng, Mode::Eval);
  EXPECT_EQ(e.id(), x.id());
  Tensor t = dropout(x, 0.3, rng, Mode::Train);
  std::size_t zeros = 0;
  for (Real v : t.values()) {
    if (v == 0) ++zeros;
    else EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
  }
  EXPECT_GT(zeros, 200u);
  EXPECT_LT(zeros, 400u);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tensor logits = Tensor::zeros({3, 7});
  std::vector<int> t{0, 3, 6};
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(7.0), 1e-12);
  std::vector<int> bad{0, 3, 7};
  EXPECT_THROW(cross_entropy(logits, bad), DataError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::vector({0.3, -1.2}, true);
  GradientMap g;
  g.insert(p.id(), Tensor::zeros({2}));
  Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-9});
  adam.step(std::vector<Tensor>{p}, g);
  EXPECT_EQ(p[0], 0.3);
  EXPECT_EQ(p[1], -1.2);
  EXPECT_EQ(adam.state().step, 1u);
}

TEST(Adam, FirstUnitGradientStepMovesByTheRate) {
  Tensor p = Tensor::vector({1.0}, true);
  GradientMap g;
  g.insert(p.id(), Tensor::vector({1.0}));
  Adam adam(AdamConfig{0.01, 0.9, 0.999, 1e-9});
  adam.step(std::vector<Tensor>{p}, g);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-9);
}

TEST(Adam, MissingGradientIsContractError) {
  Tensor p = Tensor::vector({1.0}, true);
  Adam adam;
  EXPECT_THROW(adam.step(std::vector<Tensor>{p}, GradientMap{}), ContractError);
}

TEST(Adam, TenStepTrajectoryMatchesScalarReference) {
  const AdamConfig cfg{0.05, 0.9, 0.98, 1e-9, 4, 0};
  Tensor p = Tensor::vector({0.7}, true);
  Adam adam(cfg);
  Real x = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    // Gradient of f(x) = x^4 - x.
    GradientMap g;
    g.insert(p.id(), Tensor::vector({4 * std::pow(p[0], 3) - 1}));
    adam.step(std::vector<Tensor>{p}, g);
    const Real grad = 4 * x * x * x - 1;
    m = 0.9 * m + 0.1 * grad;
    v = 0.98 * v + 0.02 * grad * grad;
    const Real rate = 0.05 * std::sqrt(4.0) * std::min(1.0 / std::sqrt(t), t * std::pow(4.0, -1.5));
    x -= rate * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.98, t))) + 1e-9);
    EXPECT_NEAR(p[0], x, 1e-10);
  }
}

TEST(Adam, WarmupScheduleShape) {
  AdamConfig c;
  c.learning_rate = 1.0;
  c.warmup = 100;
  EXPECT_NEAR(scheduled_rate(c, 100), 1.0, 1e-12);
  EXPECT_NEAR(scheduled_rate(c, 50), 0.5, 1e-12);
  EXPECT_NEAR(scheduled_rate(c, 400), 0.5, 1e-12);
  c.warmup = 0;
  EXPECT_EQ(scheduled_rate(c, 7), 1.0);
}

TEST(Checkpoint, RoundTripIsValueExact) {
  Rng rng(12);
  Checkpoint ck;
  ck.metadata["name"] = "probe run";
  ck.tensors.emplace_back("a", random_tensor({3, 4}, rng, false, 1e3));
  ck.tensors.emplace_back("b", Tensor::vector({1.0 / 3.0, -0.0, 5e-320}));
  const auto path = std::filesystem::temp_directory_path() / "unmt_ck_roundtrip.txt";
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.meta("name"), "probe run");
  for (const auto& [name, t] : ck.tensors) {
    const Tensor* u = back.find(name);
    ASSERT_NE(u, nullptr);
    EXPECT_EQ(u->shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(std::signbit(u->values()[i]), std::signbit(t.values()[i]));
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), u->values().begin()));
  }
  std::filesystem::remove(path);
}
