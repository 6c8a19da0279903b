#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "infip/dataset.hpp"
#include "infip/error.hpp"
#include "infip/model.hpp"
#include "infip/rng.hpp"

namespace infip {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double momentum = 0.9;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("train: learning_rate must be > 0");
    if (batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("train: momentum must lie in [0, 1)");
  }
};

struct LayerGrads {
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
};

/// Backward pass of one layer. `input` is the activation the layer consumed,
/// `grad_out` the loss gradient at its output. Parameter gradients are
/// accumulated into `grads` when present.
inline Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& grad_out, LayerGrads* grads,
                             bool want_input_grad = true) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      const Tensor& w = *layer.weights;
      const std::size_t out = w.dim(0), in = w.dim(1);
      Tensor grad_in({in});
      for (std::size_t o = 0; o < out; ++o) {
        const double g = grad_out[o];
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < in; ++i) grad_in[i] += w[o * in + i] * g;
        if (grads) {
          auto gw = grads->weights->values();
          for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * input[i];
        }
      }
      if (grads && grads->bias)
        for (std::size_t o = 0; o < out; ++o) (*grads->bias)[o] += grad_out[o];
      return grad_in;
    }
    case LayerKind::Conv2d: {
      if (grads) {
        const Tensor gk = conv2d_kernel_grad(input, grad_out, layer.weights->shape(), layer.stride, layer.padding);
        auto gw = grads->weights->values();
        for (std::size_t i = 0; i < gk.size(); ++i) gw[i] += gk[i];
        if (grads->bias) {
          const std::size_t plane = grad_out.dim(1) * grad_out.dim(2);
          for (std::size_t f = 0; f < grad_out.dim(0); ++f)
            for (std::size_t i = 0; i < plane; ++i) (*grads->bias)[f] += grad_out[f * plane + i];
        }
      }
      if (!want_input_grad) return Tensor();
      return conv2d_transpose(grad_out, *layer.weights, input.shape(), layer.stride, layer.padding);
    }
    case LayerKind::ReLU: {
      Tensor grad_in = grad_out;
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        if (!(input[i] > 0.0)) grad_in[i] = 0.0;
      return grad_in;
    }
    case LayerKind::MaxPool2d: {
      Tensor grad_in(input.shape());
      for (std::size_t c = 0; c < grad_out.dim(0); ++c)
        for (std::size_t oy = 0; oy < grad_out.dim(1); ++oy)
          for (std::size_t ox = 0; ox < grad_out.dim(2); ++ox)
            grad_in[detail::pool_argmax(input, c, oy, ox, layer.pool)] += grad_out.at(c, oy, ox);
      return grad_in;
    }
    case LayerKind::AvgPool2d: {
      Tensor grad_in(input.shape());
      const double inv = 1.0 / static_cast<double>(layer.pool * layer.pool);
      for (std::size_t c = 0; c < grad_out.dim(0); ++c)
        for (std::size_t oy = 0; oy < grad_out.dim(1); ++oy)
          for (std::size_t ox = 0; ox < grad_out.dim(2); ++ox)
            for (std::size_t dy = 0; dy < layer.pool; ++dy)
              for (std::size_t dx = 0; dx < layer.pool; ++dx)
                grad_in.at(c, oy * layer.pool + dy, ox * layer.pool + dx) += grad_out.at(c, oy, ox) * inv;
      return grad_in;
    }
    case LayerKind::Flatten:
      return grad_out.reshaped(input.shape());
  }
  throw ShapeError("unsupported layer kind");
}

inline std::vector<LayerGrads> zero_grads(const Model& model) {
  std::vector<LayerGrads> grads(model.layers().size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Layer& l = model.layers()[i];
    if (l.weights) grads[i].weights = Tensor(l.weights->shape());
    if (l.bias) grads[i].bias = Tensor(l.bias->shape());
  }
  return grads;
}

/// Cross-entropy loss of one sample; parameter gradients are added to `grads`.
inline double accumulate_sample_gradient(const Model& model, const Tensor& x, std::size_t label,
                                         std::vector<LayerGrads>& grads) {
  const auto& layers = model.layers();
  std::vector<Tensor> inputs;
  inputs.reserve(layers.size());
  Tensor a = x;
  for (const Layer& l : layers) {
    inputs.push_back(a);
    a = layer_forward(l, a);
  }
  const auto p = softmax(a.values());
  const double loss = -std::log(std::max(p[label], 1e-300));
  Tensor g(a.shape());
  for (std::size_t k = 0; k < p.size(); ++k) g[k] = p[k] - (k == label ? 1.0 : 0.0);
  for (std::size_t i = layers.size(); i-- > 0;) {
    LayerGrads* lg = layers[i].weighted() ? &grads[i] : nullptr;
    if (i == 0 && !lg) break;
    g = layer_backward(layers[i], inputs[i], g, lg, i > 0);
  }
  return loss;
}

inline double mean_loss(const Model& model, const LabeledDataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = softmax(logits(model, data.images[i]).values());
    total += -std::log(std::max(p[data.labels[i]], 1e-300));
  }
  return total / static_cast<double>(data.size());
}

inline double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predict(model, data.images[i]) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Mini-batch SGD with momentum on softmax cross-entropy. Sample order in
/// each epoch is a seeded permutation, so equal inputs give bitwise-equal
/// weights. The input model is left untouched.
inline Model train_sgd(const Model& model, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train: dataset is empty");
  data.validate();
  if (data.input_shape != model.input_shape())
    throw ShapeError("train: dataset shape " + shape_string(data.input_shape) + " does not match model input " +
                     shape_string(model.input_shape()));
  for (std::size_t y : data.labels)
    if (y >= model.num_classes())
      throw InvalidArgument("train: label " + std::to_string(y) + " outside [0, " + std::to_string(model.num_classes()) + ")");
  if (cfg.epochs == 0) return model;

  Model current = model;
  std::vector<LayerGrads> velocity = zero_grads(model);
  Rng rng(cfg.seed);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grads = zero_grads(current);
      double loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k)
          loss += accumulate_sample_gradient(current, data.images[order[k]], data.labels[order[k]], grads);
      } catch (const NumericError& e) {
        throw DivergenceError("train: " + std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index);
      }
      if (!std::isfinite(loss))
        throw DivergenceError("train: loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index);
      const double inv = 1.0 / static_cast<double>(end - start);
      auto layers = current.layers();
      for (std::size_t i = 0; i < layers.size(); ++i) {
        auto step = [&](Tensor& param, Tensor& vel, const Tensor& grad) {
          for (std::size_t j = 0; j < param.size(); ++j) {
            vel[j] = cfg.momentum * vel[j] - cfg.learning_rate * grad[j] * inv;
            param[j] += vel[j];
          }
        };
        if (layers[i].weights) step(*layers[i].weights, *velocity[i].weights, *grads[i].weights);
        if (layers[i].bias) step(*layers[i].bias, *velocity[i].bias, *grads[i].bias);
        for (auto* t : {&layers[i].weights, &layers[i].bias})
          if (*t && !(*t)->all_finite())
            throw DivergenceError("train: parameters became non-finite at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_index),
                                  epoch, batch_index);
      }
      current = current.with_layers(std::move(layers));
    }
  }
  return current;
}

}  // namespace infip
