#include <gtest/gtest.h>

#include "borelog/gradcheck.hpp"
#include "borelog/nn.hpp"
#include "support/layer_cases.hpp"

using namespace borelog;
using borelog::fixtures::random_tensor;
using borelog::fixtures::store_with;

TEST(Forward, SoftmaxOfUniformLogitsIsUniform) {
  Graph g;
  Var x = g.constant(Tensor({1, 4, 1, 1}, 0.0));
  const Tensor& p = ops::softmax_channels(x).value();
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, ReluAndSigmoid) {
  Graph g;
  Var x = g.constant(Tensor({2}, std::vector<double>{-1.0, 2.0}));
  const Tensor& r = ops::relu(x).value();
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  EXPECT_EQ(ops::sigmoid(g.constant(Tensor::scalar(0.0))).value()[0], 0.5);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  Graph g;
  Var x = g.constant(random_tensor({2, 4, 5, 6}, 3, -30, 30));
  const Tensor& p = ops::softmax_channels(x).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 30; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += p[n * 120 + k * 30 + i];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Forward, NormalizationStatistics) {
  Graph g;
  Var x = g.constant(random_tensor({1, 16, 6, 5}, 9, -3, 5));
  Var ones = g.constant(Tensor({16}, 1.0));
  Var zeros = g.constant(Tensor({16}, 0.0));
  const Tensor& ln = ops::layer_norm_channels(x, ones, zeros).value();
  for (std::size_t p = 0; p < 30; ++p) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += ln[c * 30 + p];
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (ln[c * 30 + p] - m) * (ln[c * 30 + p] - m);
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(v / 16, 1.0, 1e-4);
  }
  const Tensor& gn = ops::group_norm(x, ones, zeros, 8).value();
  for (std::size_t grp = 0; grp < 8; ++grp) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 60; ++i) m += gn[grp * 60 + i];
    m /= 60;
    for (std::size_t i = 0; i < 60; ++i) v += (gn[grp * 60 + i] - m) * (gn[grp * 60 + i] - m);
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(v / 60, 1.0, 1e-4);
  }
}

TEST(Forward, ShapeMismatchNamesTheLayer) {
  ParameterStore s;
  nn::declare_conv(s, "encoder.conv2", 5, 4, 3, 3);
  Graph g;
  Var x = g.constant(Tensor({1, 3, 6, 6}));
  try {
    nn::conv_same(g, s, "encoder.conv2", x);
    FAIL() << "expected shape error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.conv2"), std::string::npos) << e.what();
  }
}

TEST(Forward, NonFiniteOutputIsAnError) {
  Graph g;
  Var x = g.constant(Tensor({2}, std::vector<double>{1e200, 1e200}));
  EXPECT_THROW(ops::square(x), Error);
}

TEST(Forward, ConvTransposeDoublesExtent) {
  Graph g;
  Var x = g.constant(Tensor({2, 3, 4, 4}, 1.0));
  Var w = g.constant(Tensor({3, 5, 3, 3}, 0.1));
  EXPECT_EQ(ops::conv_transpose2d(x, w, std::nullopt, {2, 2, 1, 1}, 1).shape(), (Shape{2, 5, 8, 8}));
}

TEST(Backprop, SumOfSquares) {
  ParameterStore s = store_with({{"x", Tensor::scalar(3.0)}, {"unused", Tensor({2}, 5.0)}});
  Graph g;
  Var loss = ops::sum(ops::square(g.parameter(s, "x")));
  g.parameter(s, "unused");
  g.backward(loss);
  auto grads = g.parameter_gradients();
  EXPECT_DOUBLE_EQ(grads.at("x")[0], 6.0);
  EXPECT_EQ(grads.at("unused"), Tensor({2}, 0.0));
}

TEST(Backprop, RejectsNonScalarLoss) {
  Graph g;
  Var x = g.input(Tensor({3}, 1.0), true);
  EXPECT_THROW(g.backward(ops::square(x)), Error);
}

TEST(Backprop, ConvMatchesFiniteDifferences) {
  ParameterStore s = store_with({{"x", random_tensor({1, 2, 6, 6}, 1)}, {"w", random_tensor({3, 2, 3, 3}, 2)}, {"b", random_tensor({3}, 3)}});
  auto report = gradient_check(
      [](Graph& g, const ParameterStore& p) {
        return fixtures::project(ops::conv2d(g.parameter(p, "x"), g.parameter(p, "w"), g.parameter(p, "b"), ops::same_padding(3, 3)), 4);
      },
      s, {.tolerance = 1e-4, .step = 1e-6, .max_entries_per_parameter = 1000});
  EXPECT_TRUE(report.passed()) << report.max_error();
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore s = store_with({{"p", random_tensor({4}, 1)}});
  const Tensor before = s.at("p");
  OptimizerState st;
  adam_step(s, {{"p", Tensor({4})}}, st);
  EXPECT_EQ(s.at("p"), before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore s = store_with({{"p", Tensor::scalar(0.5)}});
  OptimizerState st;
  adam_step(s, {{"p", Tensor::scalar(1.0)}}, st);
  EXPECT_NEAR(s.at("p")[0] - 0.5, -1e-3, 1e-10);
}

TEST(Adam, IdenticalCallsAreBitIdentical) {
  auto run = [] {
    ParameterStore s = store_with({{"p", random_tensor({5}, 2)}});
    OptimizerState st;
    for (int i = 0; i < 3; ++i) adam_step(s, {{"p", random_tensor({5}, 10 + i)}}, st);
    return s;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchThrows) {
  ParameterStore s = store_with({{"p", Tensor({3})}});
  OptimizerState st;
  EXPECT_THROW(adam_step(s, {{"p", Tensor({4})}}, st), Error);
}

TEST(GradCheck, EveryLayerPasses) {
  for (auto& c : fixtures::layer_gradient_cases()) {
    auto report = gradient_check(c.loss, c.params);
    EXPECT_TRUE(report.passed()) << c.name << ": max relative error " << report.max_error();
  }
}

TEST(GradCheck, DenseReluToyGraph) {
  ParameterStore s(3);
  nn::declare_dense(s, "fc1", 4, 6);
  nn::declare_dense(s, "fc2", 6, 2);
  const Tensor x = random_tensor({5, 4}, 8);
  auto build = [x](Graph& g, const ParameterStore& p) {
    Var h = ops::relu(nn::dense(g, p, "fc1", g.constant(x)));
    return fixtures::project(nn::dense(g, p, "fc2", h), 9);
  };
  EXPECT_TRUE(gradient_check(build, s).passed());
}

TEST(GradCheck, CorruptedGradientFails) {
  ParameterStore s(3);
  nn::declare_dense(s, "fc", 4, 3);
  const Tensor x = random_tensor({2, 4}, 8);
  auto build = [x](Graph& g, const ParameterStore& p) { return fixtures::project(nn::dense(g, p, "fc", g.constant(x)), 9); };
  GradientMap grads = analytic_gradients(build, s);
  grads.at("fc.w")[0] += 0.1;
  EXPECT_FALSE(compare_gradients(build, s, grads).passed());
}

TEST(Params, InitializationIsSeededPerName) {
  ParameterStore a(42), b(42), c(43);
  a.declare("x.w", {8, 8}, Init::kFanInUniform, 8);
  a.declare("y.w", {8, 8}, Init::kFanInUniform, 8);
  b.declare("y.w", {8, 8}, Init::kFanInUniform, 8);
  b.declare("x.w", {8, 8}, Init::kFanInUniform, 8);
  c.declare("x.w", {8, 8}, Init::kFanInUniform, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.at("x.w"), a.at("y.w"));
  EXPECT_NE(a.at("x.w"), c.at("x.w"));
  for (double v : a.at("x.w").values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(8.0));
}

TEST(Checkpoint, RoundTripsBitExactly) {
  ParameterStore s(99);
  s.declare("enc.w", {3, 2, 3, 3}, Init::kFanInUniform, 18);
  s.declare("enc.b", {3}, Init::kZeros);
  s.at("enc.b")[1] = -0.0;
  s.at("enc.b")[2] = 1e-310;
  s.metadata()["model"] = "ae";
  const std::string bytes = serialize_checkpoint(s);
  EXPECT_EQ(bytes.substr(0, 6), "BLCKPT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1);  // version, little-endian
  const ParameterStore back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.metadata().at("model"), "ae");
  EXPECT_EQ(back.seed(), 99u);
  EXPECT_TRUE(std::signbit(back.at("enc.b")[1]));
}

TEST(Checkpoint, RejectsCorruptInput) {
  ParameterStore s;
  s.declare("p", {2}, Init::kOnes);
  const std::string bytes = serialize_checkpoint(s);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(deserialize_checkpoint("XXXXXXXXXX"), Error);
}
