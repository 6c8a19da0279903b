#include <gtest/gtest.h>

#include "infip/relevance.hpp"
#include "test_util.hpp"

using namespace infip;
using infip::testing::random_image;
using infip::testing::random_tensor;
using infip::testing::tiny_model;

namespace {

std::vector<double> dense_oracle(const Tensor& w, const Tensor& a, const Tensor& r_out) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  std::vector<double> r_in(in, 0.0);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      double z = 0.0;
      for (std::size_t k = 0; k < in; ++k) z += a[k] * std::max(w.at(j, k), 0.0);
      if (z > 0.0) r_in[i] += a[i] * std::max(w.at(j, i), 0.0) / z * r_out[j];
    }
  return r_in;
}

// Builds the dense matrix equivalent to a convolution (rows = outputs,
// columns = inputs) by mapping every kernel tap onto its input pixel.
Tensor unroll_conv(const Tensor& k, const Shape& in, std::size_t stride, std::size_t pad) {
  const Shape out = conv2d_output_shape(in, k.shape(), stride, pad);
  const std::size_t C = in[0], H = in[1], W = in[2], F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Tensor m({shape_size(out), shape_size(in)});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t oy = 0; oy < out[1]; ++oy)
      for (std::size_t ox = 0; ox < out[2]; ++ox)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
              const long x = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
              if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
              m.at((f * out[1] + oy) * out[2] + ox, (c * H + y) * W + x) += k[((f * C + c) * kh + i) * kw + j];
            }
  return m;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(Relevance, DenseIdentityExample) {
  const Model m({2}, 2, {Layer::dense(Tensor({2, 2}, {1, 0, 0, 1}))});
  const Tensor x({2}, {1, 0});
  const RelevanceMap r = dtd_extract(m, x);
  EXPECT_EQ(r.root_class, 0u);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.values.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(r.values[0], r.root_relevance);
  EXPECT_EQ(r.values[1], 0.0);
  EXPECT_DOUBLE_EQ(r.root_relevance, std::exp(1.0) / (std::exp(1.0) + 1.0));
}

TEST(Relevance, NonPositiveWeightsGiveDegenerateMap) {
  const Model m({2}, 2, {Layer::dense(Tensor({2, 2}, {-1, -2, -0.5, 0}))});
  const RelevanceMap r = dtd_extract(m, Tensor({2}, {0.5, 0.5}));
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.values, Tensor(Shape{1, 2}));
  EXPECT_GT(r.root_relevance, 0.0);
}

TEST(Relevance, DenseUniformSplitsEqually) {
  const Layer l = Layer::dense(Tensor::filled({2, 4}, 0.5));
  const Tensor r = propagate_dense_zplus(l, Tensor::filled({4}, 0.3), Tensor({2}, {1.0, 0.0}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r[i], 0.25, 1e-15);
}

TEST(Relevance, DenseZeroRelevance) {
  Rng rng(1);
  const Layer l = Layer::dense(random_tensor({3, 4}, rng));
  EXPECT_EQ(propagate_dense_zplus(l, random_tensor({4}, rng, 0, 1), Tensor({3})), Tensor(Shape{4}));
}

TEST(Relevance, DenseMatchesDoubleLoopOracle) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Tensor w = random_tensor({3, 4}, rng), a = random_tensor({4}, rng, 0, 1), r = random_tensor({3}, rng, 0, 1);
    const Tensor got = propagate_dense_zplus(Layer::dense(w, random_tensor({3}, rng)), a, r);
    const auto ref = dense_oracle(w, a, r);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Relevance, DenseRejectsNegativeActivations) {
  const Layer l = Layer::dense(Tensor::filled({1, 2}, 1.0));
  EXPECT_THROW(propagate_dense_zplus(l, Tensor({2}, {-0.1, 1}), Tensor({1}, {1})), InvalidArgument);
  EXPECT_THROW(propagate_dense_zplus(l, Tensor({3}), Tensor({1}, {1})), ShapeError);
}

TEST(Relevance, ConvUnitKernelPassesThrough) {
  Rng rng(3);
  const Layer l = Layer::conv2d(Tensor({1, 1, 1, 1}, {0.7}));
  const Tensor a = random_tensor({1, 5, 5}, rng, 0.1, 1), r = random_tensor({1, 5, 5}, rng, 0, 1);
  const Tensor got = propagate_conv_zplus(l, a, r);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(got[i], r[i], 1e-15);
}

TEST(Relevance, ConvZeroRelevance) {
  Rng rng(4);
  const Layer l = Layer::conv2d(random_tensor({2, 1, 2, 2}, rng));
  EXPECT_EQ(propagate_conv_zplus(l, random_tensor({1, 4, 4}, rng, 0, 1), Tensor({2, 3, 3})), Tensor(Shape{1, 4, 4}));
}

TEST(Relevance, ConvMatchesUnrolledDenseOracle) {
  Rng rng(5);
  const Tensor k = random_tensor({1, 1, 2, 2}, rng);
  const Tensor a = random_tensor({1, 4, 4}, rng, 0, 1);
  const Tensor r = random_tensor({1, 3, 3}, rng, 0, 1);
  const Tensor got = propagate_conv_zplus(Layer::conv2d(k), a, r);
  const auto ref = dense_oracle(unroll_conv(k, a.shape(), 1, 0), a.reshaped({16}), r.reshaped({9}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], ref[i], 1e-10);
}

TEST(Relevance, ConvMatchesUnrolledOracleWithStrideAndPadding) {
  Rng rng(6);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      const Tensor k = random_tensor({3, 2, 3, 3}, rng);
      const Tensor a = random_tensor({2, 6, 7}, rng, 0, 1);
      const Shape out = conv2d_output_shape(a.shape(), k.shape(), stride, pad);
      const Tensor r = random_tensor(out, rng, 0, 1);
      const Tensor got = propagate_conv_zplus(Layer::conv2d(k, std::nullopt, stride, pad), a, r);
      const auto ref = dense_oracle(unroll_conv(k, a.shape(), stride, pad), a.reshaped({a.size()}), r.reshaped({r.size()}));
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-10);
    }
}

TEST(Relevance, MaxPoolUniqueMax) {
  const Tensor a({1, 2, 2}, {5, 1, 1, 1});
  const Tensor r = propagate_pool(Layer::max_pool(2), a, Tensor({1, 1, 1}, {1.0}));
  EXPECT_EQ(r, Tensor({1, 2, 2}, {1, 0, 0, 0}));
}

TEST(Relevance, MaxPoolTieGoesToLowestIndex) {
  const Tensor a = Tensor::filled({1, 2, 2}, 0.4);
  EXPECT_EQ(propagate_pool(Layer::max_pool(2), a, Tensor({1, 1, 1}, {1.0})), Tensor({1, 2, 2}, {1, 0, 0, 0}));
  const Tensor b({1, 2, 2}, {0.1, 0.2, 0.2, 0.0});
  EXPECT_EQ(propagate_pool(Layer::max_pool(2), b, Tensor({1, 1, 1}, {1.0})), Tensor({1, 2, 2}, {0, 1, 0, 0}));
}

TEST(Relevance, AvgPoolProportionalSplit) {
  // A 1x2 window is expressed as a 2x2 window with a zero row.
  const Tensor a({1, 2, 2}, {1, 3, 0, 0});
  const Tensor r = propagate_pool(Layer::avg_pool(2), a, Tensor({1, 1, 1}, {1.0}));
  EXPECT_DOUBLE_EQ(r[0], 0.25);
  EXPECT_DOUBLE_EQ(r[1], 0.75);
  EXPECT_EQ(r[2], 0.0);
  EXPECT_EQ(r[3], 0.0);
}

TEST(Relevance, ReluAndFlatten) {
  Rng rng(7);
  const Tensor r = random_tensor({2, 3, 3}, rng, 0, 1);
  EXPECT_EQ(propagate_relu_flatten(Layer::relu(), r, r.shape()), r);
  const Tensor flat = r.reshaped({18});
  const Tensor back = propagate_relu_flatten(Layer::flatten(), flat, r.shape());
  EXPECT_EQ(back, r);
  EXPECT_EQ(back.reshaped({18}), flat);
  EXPECT_THROW(propagate_relu_flatten(Layer::flatten(), flat, {2, 3, 4}), ShapeError);
}

TEST(Relevance, ConservationWithoutBiases) {
  Rng rng(8);
  const Model m = strip_biases(make_preset_model(11));
  for (int t = 0; t < 5; ++t) {
    const Tensor x = random_image({1, 28, 28}, rng);
    const ActivationTrace trace = forward(m, x);
    const RelevanceTrace rt = dtd_propagate(m, x, trace);
    double above = rt.output.sum();
    EXPECT_DOUBLE_EQ(above, trace.confidence);
    for (std::size_t i = m.layers().size(); i-- > 0;) {
      const double below = rt.at_input[i].sum();
      EXPECT_LE(relative_gap(below, above), 1e-9) << "layer " << i;
      for (double v : rt.at_input[i].values()) EXPECT_GE(v, 0.0);
      above = below;
    }
    const RelevanceMap map = dtd_extract(m, x, trace);
    EXPECT_LE(relative_gap(map.values.sum(), trace.confidence), 1e-9);
  }
}

TEST(Relevance, BiasedModelOnlyAbsorbs) {
  Rng rng(9);
  const Model m = make_preset_model(12);
  for (int t = 0; t < 5; ++t) {
    const Tensor x = random_image({1, 28, 28}, rng);
    const ActivationTrace trace = forward(m, x);
    const RelevanceTrace rt = dtd_propagate(m, x, trace);
    double above = rt.output.sum();
    for (std::size_t i = m.layers().size(); i-- > 0;) {
      const double below = rt.at_input[i].sum();
      EXPECT_LE(below, above * (1 + 1e-12));
      above = below;
    }
    const RelevanceMap map = dtd_extract(m, x, trace);
    EXPECT_LE(map.values.sum(), map.root_relevance + 1e-6);
    for (double v : map.values.values()) EXPECT_GE(v, 0.0);
    EXPECT_GE(map.root_relevance, 0.0);
    EXPECT_LE(map.root_relevance, 1.0);
  }
}

TEST(Relevance, MapShapeAndChannelSum) {
  Rng rng(10);
  const Model m = tiny_model(5);
  const RelevanceMap r = dtd_extract(m, random_image({1, 8, 8}, rng));
  EXPECT_EQ(r.values.shape(), (Shape{8, 8}));
  const Tensor multi({2, 1, 2}, {1, 2, 3, 4});
  EXPECT_EQ(channel_sum(multi), Tensor({1, 2}, {4, 6}));
}

TEST(Relevance, Deterministic) {
  Rng rng(11);
  const Model m = make_preset_model(13);
  const Tensor x = random_image({1, 28, 28}, rng);
  const RelevanceMap a = dtd_extract(m, x), b = dtd_extract(m, x);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.root_relevance, b.root_relevance);
}

TEST(Relevance, DiffersBetweenModels) {
  Rng rng(12);
  const Tensor x = random_image({1, 28, 28}, rng);
  EXPECT_NE(dtd_extract(make_preset_model(1), x).values, dtd_extract(make_preset_model(2), x).values);
}

TEST(Relevance, TraceMustMatch) {
  Rng rng(13);
  const Model m = tiny_model(5);
  const Tensor x = random_image({1, 8, 8}, rng), y = random_image({1, 8, 8}, rng);
  EXPECT_THROW(dtd_extract(m, y, forward(m, x)), InvalidArgument);
  EXPECT_THROW(dtd_extract(tiny_model(5, true, 4), x, forward(m, x)), InvalidArgument);
}
