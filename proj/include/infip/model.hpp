#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "infip/digest.hpp"
#include "infip/error.hpp"
#include "infip/rng.hpp"
#include "infip/tensor.hpp"

namespace infip {

enum class LayerKind : std::uint8_t { Dense = 0, Conv2d = 1, ReLU = 2, MaxPool2d = 3, AvgPool2d = 4, Flatten = 5 };

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2d: return "MaxPool2d";
    case LayerKind::AvgPool2d: return "AvgPool2d";
    case LayerKind::Flatten: return "Flatten";
  }
  return "Unknown";
}

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 0;  // window edge for pooling layers; stride equals window

  static Layer dense(Tensor weights, std::optional<Tensor> bias = std::nullopt) {
    if (weights.rank() != 2) throw ShapeError("dense: weights must be out x in, got " + shape_string(weights.shape()));
    if (bias && bias->shape() != Shape{weights.dim(0)})
      throw ShapeError("dense: bias " + shape_string(bias->shape()) + " does not match " + std::to_string(weights.dim(0)) + " outputs");
    return Layer{LayerKind::Dense, std::move(weights), std::move(bias), 1, 0, 0};
  }

  static Layer conv2d(Tensor kernels, std::optional<Tensor> bias = std::nullopt, std::size_t stride = 1,
                      std::size_t padding = 0) {
    if (kernels.rank() != 4)
      throw ShapeError("conv2d: kernels must be F x C x kh x kw, got " + shape_string(kernels.shape()));
    if (bias && bias->shape() != Shape{kernels.dim(0)})
      throw ShapeError("conv2d: bias " + shape_string(bias->shape()) + " does not match " + std::to_string(kernels.dim(0)) + " filters");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    return Layer{LayerKind::Conv2d, std::move(kernels), std::move(bias), stride, padding, 0};
  }

  static Layer relu() { return Layer{LayerKind::ReLU, {}, {}, 1, 0, 0}; }
  static Layer flatten() { return Layer{LayerKind::Flatten, {}, {}, 1, 0, 0}; }

  static Layer max_pool(std::size_t window) { return make_pool(LayerKind::MaxPool2d, window); }
  static Layer avg_pool(std::size_t window) { return make_pool(LayerKind::AvgPool2d, window); }

  bool weighted() const noexcept { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
  bool pooling() const noexcept { return kind == LayerKind::MaxPool2d || kind == LayerKind::AvgPool2d; }

  friend bool operator==(const Layer&, const Layer&) = default;

 private:
  static Layer make_pool(LayerKind kind, std::size_t window) {
    if (window == 0) throw ShapeError("pool: window must be positive");
    return Layer{kind, {}, {}, window, 0, window};
  }
};

inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::Dense:
      if (in.size() != 1 || in[0] != layer.weights->dim(1))
        throw ShapeError("dense: input " + shape_string(in) + " does not match weights " + shape_string(layer.weights->shape()));
      return {layer.weights->dim(0)};
    case LayerKind::Conv2d:
      return conv2d_output_shape(in, layer.weights->shape(), layer.stride, layer.padding);
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool2d:
    case LayerKind::AvgPool2d:
      if (in.size() != 3 || in[1] < layer.pool || in[2] < layer.pool)
        throw ShapeError(std::string(layer_kind_name(layer.kind)) + ": input " + shape_string(in) +
                         " too small for window " + std::to_string(layer.pool));
      return {in[0], in[1] / layer.pool, in[2] / layer.pool};
    case LayerKind::Flatten:
      return {shape_size(in)};
  }
  throw ShapeError("unsupported layer kind");
}

namespace detail {

// Flat input index of the maximum in one pooling window; ties go to the lowest index.
inline std::size_t pool_argmax(const Tensor& x, std::size_t c, std::size_t oy, std::size_t ox, std::size_t window) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  std::size_t best = (c * h + oy * window) * w + ox * window;
  for (std::size_t dy = 0; dy < window; ++dy)
    for (std::size_t dx = 0; dx < window; ++dx) {
      const std::size_t idx = (c * h + oy * window + dy) * w + ox * window + dx;
      if (x[idx] > x[best]) best = idx;
    }
  return best;
}

}  // namespace detail

inline Tensor layer_forward(const Layer& layer, const Tensor& x) {
  const Shape out_shape = layer_output_shape(layer, x.shape());
  switch (layer.kind) {
    case LayerKind::Dense: {
      Tensor y = matmul(*layer.weights, x.reshaped({x.size(), 1})).reshaped(out_shape);
      return layer.bias ? add(y, *layer.bias) : y;
    }
    case LayerKind::Conv2d: {
      Tensor y = conv2d(x, *layer.weights, layer.stride, layer.padding);
      if (layer.bias) {
        const std::size_t plane = out_shape[1] * out_shape[2];
        for (std::size_t f = 0; f < out_shape[0]; ++f)
          for (std::size_t i = 0; i < plane; ++i) y[f * plane + i] += (*layer.bias)[f];
      }
      return y;
    }
    case LayerKind::ReLU:
      return relu(x);
    case LayerKind::MaxPool2d: {
      Tensor y(out_shape);
      for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
          for (std::size_t ox = 0; ox < out_shape[2]; ++ox)
            y.at(c, oy, ox) = x[detail::pool_argmax(x, c, oy, ox, layer.pool)];
      return y;
    }
    case LayerKind::AvgPool2d: {
      Tensor y(out_shape);
      const double inv = 1.0 / static_cast<double>(layer.pool * layer.pool);
      for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
          for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < layer.pool; ++dy)
              for (std::size_t dx = 0; dx < layer.pool; ++dx) s += x.at(c, oy * layer.pool + dy, ox * layer.pool + dx);
            y.at(c, oy, ox) = s * inv;
          }
      return y;
    }
    case LayerKind::Flatten:
      return x.reshaped(out_shape);
  }
  throw ShapeError("unsupported layer kind");
}

/// Ordered layer stack with a fixed input shape and class count.
class Model {
 public:
  Model(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers, std::string lineage = {})
      : input_shape_(std::move(input_shape)), num_classes_(num_classes), layers_(std::move(layers)), lineage_(std::move(lineage)) {
    if (num_classes_ == 0) throw InvalidArgument("model: num_classes must be positive");
    Shape shape = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        shape = layer_output_shape(layers_[i], shape);
      } catch (const ShapeError& e) {
        throw ShapeError("model: layer " + std::to_string(i) + " (" + layer_kind_name(layers_[i].kind) + "): " + e.what());
      }
    }
    if (shape != Shape{num_classes_})
      throw ShapeError("model: output shape " + shape_string(shape) + " does not match " + std::to_string(num_classes_) + " classes");
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Free-form provenance note carried in the file header; not part of the hash.
  const std::string& lineage() const noexcept { return lineage_; }

  Model with_layers(std::vector<Layer> layers) const { return Model(input_shape_, num_classes_, std::move(layers), lineage_); }
  Model with_lineage(std::string lineage) const { return Model(input_shape_, num_classes_, layers_, std::move(lineage)); }

  // SHA-256 over architecture, hyperparameters and every weight bit.
  std::string hash() const {
    Sha256 h;
    h.update(std::string_view("infip-model"));
    h.update_u64(input_shape_.size());
    for (auto d : input_shape_) h.update_u64(d);
    h.update_u64(num_classes_);
    h.update_u64(layers_.size());
    for (const Layer& l : layers_) {
      h.update_u64(static_cast<std::uint64_t>(l.kind)).update_u64(l.stride).update_u64(l.padding).update_u64(l.pool);
      for (const auto* t : {&l.weights, &l.bias}) {
        h.update_u64(t->has_value());
        if (!t->has_value()) continue;
        h.update_u64((*t)->rank());
        for (auto d : (*t)->shape()) h.update_u64(d);
        for (double v : (*t)->values()) h.update_f64(v);
      }
    }
    return h.finish_hex();
  }

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_)
      if (l.weighted()) n += l.weights->size();
    return n;
  }

  friend bool operator==(const Model& a, const Model& b) {
    return a.input_shape_ == b.input_shape_ && a.num_classes_ == b.num_classes_ && a.layers_ == b.layers_;
  }

 private:
  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<Layer> layers_;
  std::string lineage_;
};

struct ActivationTrace {
  std::vector<Tensor> layer_inputs;  // layer_inputs[i] is the input to layer i
  Tensor logits;
  std::vector<double> probabilities;
  std::size_t predicted = 0;
  double confidence = 0.0;  // softmax probability of `predicted`
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(logits[i] - peak));
  for (double& v : p) v /= total;
  return p;
}

// First index of the maximum.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline void check_model_input(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape())
    throw ShapeError("forward: input " + shape_string(x.shape()) + " does not match model input " +
                     shape_string(model.input_shape()));
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("forward: input values must lie in [0, 1]");
}

// Logits without recording intermediate activations.
inline Tensor logits(const Model& model, const Tensor& x) {
  check_model_input(model, x);
  Tensor a = x;
  for (const Layer& l : model.layers()) a = layer_forward(l, a);
  return a;
}

inline ActivationTrace forward(const Model& model, const Tensor& x) {
  check_model_input(model, x);
  ActivationTrace trace;
  trace.layer_inputs.reserve(model.layers().size());
  Tensor a = x;
  for (const Layer& l : model.layers()) {
    trace.layer_inputs.push_back(a);
    a = layer_forward(l, a);
  }
  trace.logits = std::move(a);
  trace.probabilities = softmax(trace.logits.values());
  trace.predicted = argmax(trace.logits.values());
  trace.confidence = trace.probabilities[trace.predicted];
  return trace;
}

inline std::size_t predict(const Model& model, const Tensor& x) { return argmax(logits(model, x).values()); }

// Glorot/Xavier uniform initialisation.
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

inline Layer init_dense(std::size_t in, std::size_t out, Rng& rng) {
  return Layer::dense(glorot_uniform({out, in}, in, out, rng), Tensor({out}));
}

inline Layer init_conv(std::size_t filters, std::size_t channels, std::size_t k, Rng& rng, std::size_t stride = 1,
                       std::size_t padding = 0) {
  return Layer::conv2d(glorot_uniform({filters, channels, k, k}, channels * k * k, filters * k * k, rng),
                       Tensor({filters}), stride, padding);
}

/// Reference architecture: Conv(8,3x3)-ReLU-MaxPool2-Conv(16,3x3)-ReLU-MaxPool2-Flatten-Dense.
/// Convolutions use padding 1 so a 28x28 input reaches the dense layer as 16x7x7.
inline Model make_preset_model(std::uint64_t seed, Shape input_shape = {1, 28, 28}, std::size_t num_classes = 10) {
  if (input_shape.size() != 3) throw ShapeError("preset: input must be C x H x W, got " + shape_string(input_shape));
  Rng rng(seed);
  const std::size_t channels = input_shape[0];
  const std::size_t flat = 16 * (input_shape[1] / 4) * (input_shape[2] / 4);
  std::vector<Layer> layers;
  layers.push_back(init_conv(8, channels, 3, rng, 1, 1));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::max_pool(2));
  layers.push_back(init_conv(16, 8, 3, rng, 1, 1));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::max_pool(2));
  layers.push_back(Layer::flatten());
  layers.push_back(init_dense(flat, num_classes, rng));
  return Model(std::move(input_shape), num_classes, std::move(layers));
}

// Copy of `model` with every bias removed.
inline Model strip_biases(const Model& model) {
  auto layers = model.layers();
  for (Layer& l : layers) l.bias.reset();
  return model.with_layers(std::move(layers));
}

}  // namespace infip
