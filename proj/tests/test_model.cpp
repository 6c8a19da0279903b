#include <gtest/gtest.h>

#include <numeric>

#include "infip/model.hpp"
#include "test_util.hpp"

using namespace infip;
using infip::testing::random_image;
using infip::testing::tiny_model;

TEST(Model, DenseIdentityForward) {
  Model m({2}, 2, {Layer::dense(Tensor({2, 2}, {1, 0, 0, 1}))});
  const ActivationTrace t = forward(m, Tensor({2}, {0.2, 0.8}));
  EXPECT_EQ(t.logits, Tensor({2}, {0.2, 0.8}));
  EXPECT_EQ(t.predicted, 1u);
  ASSERT_EQ(t.layer_inputs.size(), 1u);
  EXPECT_EQ(t.layer_inputs[0], Tensor({2}, {0.2, 0.8}));
}

TEST(Model, TraceMatchesTraceFreeExecution) {
  Rng rng(21);
  const Model m = make_preset_model(4);
  for (int i = 0; i < 5; ++i) {
    const Tensor x = random_image({1, 28, 28}, rng);
    const ActivationTrace t = forward(m, x);
    Tensor a = x;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
      EXPECT_EQ(t.layer_inputs[l], a);
      a = layer_forward(m.layers()[l], a);
    }
    EXPECT_EQ(t.logits, a);
    EXPECT_EQ(logits(m, x), t.logits);
    EXPECT_EQ(t.logits.size(), 10u);
  }
}

TEST(Model, ZeroInputTieBreaksToLowestIndex) {
  const Model m = strip_biases(make_preset_model(5));
  const ActivationTrace t = forward(m, Tensor({1, 28, 28}));
  EXPECT_EQ(t.logits, Tensor(Shape{10}));
  EXPECT_EQ(t.predicted, 0u);
  EXPECT_NEAR(t.confidence, 0.1, 1e-15);
}

TEST(Model, ArgmaxTieBreak) {
  const std::vector<double> v{0.1, 0.7, 0.7, 0.2};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Model, SoftmaxSumsToOne) {
  Rng rng(2);
  const Model m = make_preset_model(6);
  for (int i = 0; i < 10; ++i) {
    const ActivationTrace t = forward(m, random_image({1, 28, 28}, rng));
    const double s = std::accumulate(t.probabilities.begin(), t.probabilities.end(), 0.0);
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_EQ(t.predicted, argmax(t.logits.values()));
    EXPECT_DOUBLE_EQ(t.confidence, t.probabilities[t.predicted]);
  }
  const auto p = softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_NEAR(p[0], 1.0, 1e-15);
}

TEST(Model, ForwardIsPure) {
  Rng rng(3);
  const Model m = tiny_model(1);
  const Tensor x = random_image({1, 8, 8}, rng);
  const ActivationTrace a = forward(m, x), b = forward(m, x);
  EXPECT_EQ(a.layer_inputs, b.layer_inputs);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Model, ForwardRejectsBadInput) {
  const Model m = tiny_model(1);
  EXPECT_THROW(forward(m, Tensor({1, 7, 8})), ShapeError);
  EXPECT_THROW(forward(m, Tensor::filled({1, 8, 8}, 1.5)), InvalidArgument);
  EXPECT_THROW(forward(m, Tensor::filled({1, 8, 8}, -0.1)), InvalidArgument);
}

TEST(Model, CompositionIsValidated) {
  EXPECT_THROW(Model({4}, 2, {Layer::dense(Tensor({2, 3}))}), ShapeError);
  EXPECT_THROW(Model({4}, 3, {Layer::dense(Tensor({2, 4}))}), ShapeError);
  EXPECT_THROW(Layer::dense(Tensor({2, 4}), Tensor({3})), ShapeError);
  EXPECT_THROW(Layer::conv2d(Tensor({2, 1, 3}), std::nullopt), ShapeError);
  EXPECT_THROW(Model({4}, 0, {}), InvalidArgument);
  EXPECT_NO_THROW(Model({4}, 4, {}));
}

TEST(Model, PresetShapes) {
  const Model m = make_preset_model(1);
  ASSERT_EQ(m.layers().size(), 8u);
  EXPECT_EQ(m.layers()[0].weights->shape(), (Shape{8, 1, 3, 3}));
  EXPECT_EQ(m.layers()[3].weights->shape(), (Shape{16, 8, 3, 3}));
  EXPECT_EQ(m.layers()[7].weights->shape(), (Shape{10, 16 * 7 * 7}));
  EXPECT_EQ(m.weight_count(), 8u * 9 + 16u * 8 * 9 + 10u * 784);
}

TEST(Model, GlorotBounds) {
  Rng rng(8);
  const Tensor w = glorot_uniform({50, 30}, 30, 50, rng);
  const double limit = std::sqrt(6.0 / 80.0);
  double lo = 1, hi = -1;
  for (double v : w.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, -limit);
  EXPECT_LE(hi, limit);
  EXPECT_LT(lo, -0.8 * limit);
  EXPECT_GT(hi, 0.8 * limit);
}

TEST(Model, HashTracksEveryParameter) {
  const Model m = tiny_model(3);
  EXPECT_EQ(m.hash(), tiny_model(3).hash());
  EXPECT_NE(m.hash(), tiny_model(4).hash());
  auto layers = m.layers();
  (*layers[0].weights)[5] = std::nextafter((*layers[0].weights)[5], 10.0);
  EXPECT_NE(m.with_layers(layers).hash(), m.hash());
  layers = m.layers();
  (*layers.back().bias)[0] += 1.0;
  EXPECT_NE(m.with_layers(layers).hash(), m.hash());
  layers = m.layers();
  layers[0].padding = 2;
  layers[3].padding = 2;
  layers[6] = Layer::flatten();
  EXPECT_THROW(m.with_layers(layers), ShapeError);
  EXPECT_EQ(m.with_lineage("[\"note\"]").hash(), m.hash());
}

TEST(Model, StripBiases) {
  const Model m = strip_biases(tiny_model(2));
  for (const Layer& l : m.layers()) EXPECT_FALSE(l.bias.has_value());
}
