#pragma once

#include <string>
#include <vector>

#include "infip/error.hpp"
#include "infip/model.hpp"
#include "infip/tensor.hpp"

namespace infip {

/// Per-pixel relevance of one input, summed over channels.
struct RelevanceMap {
  Tensor values;  // H x W
  std::size_t root_class = 0;
  double root_relevance = 0.0;
  bool degenerate = false;  // no relevance reached the input
};

namespace detail {

inline void require_nonnegative(const Tensor& a, const char* op) {
  for (double v : a.values())
    if (v < 0.0) throw InvalidArgument(std::string(op) + ": z+ rule needs nonnegative input activations");
}

inline void require_shape(const Tensor& t, const Shape& expect, const char* what) {
  if (t.shape() != expect)
    throw ShapeError(std::string(what) + ": got " + shape_string(t.shape()) + ", expected " + shape_string(expect));
}

}  // namespace detail

/// z+ rule for a dense layer: each output's relevance is split over inputs in
/// proportion to a_i * max(w_ji, 0). Outputs whose positive contributions sum
/// to zero pass nothing down. Biases never enter the denominators.
inline Tensor propagate_dense_zplus(const Layer& layer, const Tensor& input_activation, const Tensor& relevance_out) {
  if (layer.kind != LayerKind::Dense) throw InvalidArgument("propagate_dense_zplus: layer is not Dense");
  const Tensor& w = *layer.weights;
  const std::size_t out = w.dim(0), in = w.dim(1);
  detail::require_shape(input_activation, {in}, "propagate_dense_zplus: input activation");
  detail::require_shape(relevance_out, {out}, "propagate_dense_zplus: output relevance");
  detail::require_nonnegative(input_activation, "propagate_dense_zplus");
  Tensor relevance_in({in});
  for (std::size_t j = 0; j < out; ++j) {
    if (relevance_out[j] == 0.0) continue;
    double z = 0.0;
    for (std::size_t i = 0; i < in; ++i) z += input_activation[i] * std::max(w[j * in + i], 0.0);
    if (!(z > 0.0)) continue;
    const double s = relevance_out[j] / z;
    for (std::size_t i = 0; i < in; ++i) relevance_in[i] += input_activation[i] * std::max(w[j * in + i], 0.0) * s;
  }
  return relevance_in;
}

/// z+ rule over convolution receptive fields, equivalent to unrolling the
/// convolution into a dense layer and applying the dense rule.
inline Tensor propagate_conv_zplus(const Layer& layer, const Tensor& input_activation, const Tensor& relevance_out) {
  if (layer.kind != LayerKind::Conv2d) throw InvalidArgument("propagate_conv_zplus: layer is not Conv2d");
  const Shape out_shape = layer_output_shape(layer, input_activation.shape());
  detail::require_shape(relevance_out, out_shape, "propagate_conv_zplus: output relevance");
  detail::require_nonnegative(input_activation, "propagate_conv_zplus");
  const Tensor w_plus = positive_part(*layer.weights);
  const Tensor z = conv2d(input_activation, w_plus, layer.stride, layer.padding);
  Tensor s(out_shape);
  for (std::size_t j = 0; j < s.size(); ++j)
    if (z[j] > 0.0) s[j] = relevance_out[j] / z[j];
  const Tensor c = conv2d_transpose(s, w_plus, input_activation.shape(), layer.stride, layer.padding);
  return mul(input_activation, c);
}

/// Max pooling sends each window's relevance to its argmax (lowest index on
/// ties); average pooling splits it in proportion to the input activations.
inline Tensor propagate_pool(const Layer& layer, const Tensor& input_activation, const Tensor& relevance_out) {
  if (!layer.pooling()) throw InvalidArgument("propagate_pool: layer is not a pooling layer");
  const Shape out_shape = layer_output_shape(layer, input_activation.shape());
  detail::require_shape(relevance_out, out_shape, "propagate_pool: output relevance");
  Tensor relevance_in(input_activation.shape());
  const std::size_t k = layer.pool;
  for (std::size_t c = 0; c < out_shape[0]; ++c)
    for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
      for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
        const double r = relevance_out.at(c, oy, ox);
        if (r == 0.0) continue;
        if (layer.kind == LayerKind::MaxPool2d) {
          relevance_in[detail::pool_argmax(input_activation, c, oy, ox, k)] += r;
          continue;
        }
        double z = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) z += std::max(input_activation.at(c, oy * k + dy, ox * k + dx), 0.0);
        if (!(z > 0.0)) continue;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            relevance_in.at(c, oy * k + dy, ox * k + dx) +=
                std::max(input_activation.at(c, oy * k + dy, ox * k + dx), 0.0) / z * r;
      }
  return relevance_in;
}

// ReLU passes relevance unchanged; Flatten restores the pre-flatten shape.
inline Tensor propagate_relu_flatten(const Layer& layer, const Tensor& relevance_out, const Shape& input_shape) {
  if (layer.kind != LayerKind::ReLU && layer.kind != LayerKind::Flatten)
    throw InvalidArgument("propagate_relu_flatten: layer is neither ReLU nor Flatten");
  if (shape_size(input_shape) != relevance_out.size())
    throw ShapeError("propagate_relu_flatten: relevance " + shape_string(relevance_out.shape()) +
                     " cannot take input shape " + shape_string(input_shape));
  if (layer.kind == LayerKind::ReLU && relevance_out.shape() != input_shape)
    throw ShapeError("propagate_relu_flatten: ReLU relevance " + shape_string(relevance_out.shape()) +
                     " differs from input " + shape_string(input_shape));
  return relevance_out.reshaped(input_shape);
}

inline Tensor propagate_layer(const Layer& layer, const Tensor& input_activation, const Tensor& relevance_out) {
  switch (layer.kind) {
    case LayerKind::Dense: return propagate_dense_zplus(layer, input_activation, relevance_out);
    case LayerKind::Conv2d: return propagate_conv_zplus(layer, input_activation, relevance_out);
    case LayerKind::MaxPool2d:
    case LayerKind::AvgPool2d: return propagate_pool(layer, input_activation, relevance_out);
    case LayerKind::ReLU:
    case LayerKind::Flatten: return propagate_relu_flatten(layer, relevance_out, input_activation.shape());
  }
  throw InvalidArgument(std::string("dtd: unsupported layer kind ") + layer_kind_name(layer.kind));
}

/// Relevance at every layer boundary: at_input[i] is the relevance arriving
/// at the input of layer i; output is the root vector.
struct RelevanceTrace {
  std::vector<Tensor> at_input;
  Tensor output;
};

inline void check_trace(const Model& model, const Tensor& x, const ActivationTrace& trace) {
  if (trace.layer_inputs.size() != model.layers().size() || trace.logits.shape() != Shape{model.num_classes()} ||
      trace.predicted >= model.num_classes())
    throw InvalidArgument("dtd: activation trace does not belong to this model");
  if (!trace.layer_inputs.empty() && trace.layer_inputs.front() != x)
    throw InvalidArgument("dtd: activation trace was recorded for a different input");
}

inline RelevanceTrace dtd_propagate(const Model& model, const Tensor& x, const ActivationTrace& trace) {
  check_trace(model, x, trace);
  RelevanceTrace out;
  out.output = Tensor({model.num_classes()});
  out.output[trace.predicted] = trace.confidence;
  out.at_input.resize(model.layers().size());
  Tensor r = out.output;
  for (std::size_t i = model.layers().size(); i-- > 0;) {
    r = propagate_layer(model.layers()[i], trace.layer_inputs[i], r);
    out.at_input[i] = r;
  }
  return out;
}

// Sums a CxHxW relevance tensor over channels; rank-1 inputs become 1 x n.
inline Tensor channel_sum(const Tensor& relevance) {
  if (relevance.rank() == 1) return relevance.reshaped({1, relevance.size()});
  if (relevance.rank() == 2) return relevance;
  if (relevance.rank() != 3) throw ShapeError("dtd: cannot map relevance of shape " + shape_string(relevance.shape()));
  const std::size_t c = relevance.dim(0), h = relevance.dim(1), w = relevance.dim(2);
  Tensor out({h, w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h * w; ++i) out[i] += relevance[k * h * w + i];
  return out;
}

/// Deep Taylor relevance map of the predicted class. The root relevance is
/// the softmax probability of that class.
inline RelevanceMap dtd_extract(const Model& model, const Tensor& x, const ActivationTrace& trace) {
  const RelevanceTrace rt = dtd_propagate(model, x, trace);
  RelevanceMap map;
  map.root_class = trace.predicted;
  map.root_relevance = trace.confidence;
  map.values = channel_sum(rt.at_input.empty() ? rt.output : rt.at_input.front());
  map.degenerate = !(map.root_relevance > 0.0) || !(map.values.sum() > 0.0);
  if (map.degenerate) map.values = Tensor(map.values.shape());
  return map;
}

inline RelevanceMap dtd_extract(const Model& model, const Tensor& x) { return dtd_extract(model, x, forward(model, x)); }

}  // namespace infip
