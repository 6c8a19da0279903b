#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "infip/error.hpp"

namespace infip {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    if (!all_finite()) throw NumericError("tensor: non-finite value in data");
  }

  static Tensor filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_shape() const {
    for (std::size_t d : shape_)
      if (d == 0 && shape_.size() != 1) throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline Tensor checked(Tensor t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  return t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                                  std::size_t padding) {
  if (input.size() != 3 || kernels.size() != 4)
    throw ShapeError("conv2d: expected CxHxW input and FxCxkhxkw kernels, got " + shape_string(input) +
                     " and " + shape_string(kernels));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (kernels[1] != input[0])
    throw ShapeError("conv2d: kernel channels " + shape_string(kernels) + " do not match input " +
                     shape_string(input));
  const std::size_t ph = input[1] + 2 * padding, pw = input[2] + 2 * padding;
  if (kernels[2] > ph || kernels[3] > pw)
    throw ShapeError("conv2d: kernel " + shape_string(kernels) + " larger than padded input " +
                     shape_string(input));
  return {input[0],  input[1], input[2], kernels[0], kernels[2],
          kernels[3], stride,   padding,  (ph - kernels[2]) / stride + 1,
          (pw - kernels[3]) / stride + 1};
}

// Calls fn(c, iy, ix, ky, kx, oy, ox) for each in-bounds tap of filter-independent geometry.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox)
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                  static_cast<std::ptrdiff_t>(g.padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
          fn(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ky, kx, oy, ox);
        }
      }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  return detail::checked(std::move(out), "matmul");
}

inline Shape conv2d_output_shape(const Shape& input, const Shape& kernels, std::size_t stride,
                                 std::size_t padding) {
  const auto g = detail::conv_geometry(input, kernels, stride, padding);
  return {g.filters, g.out_h, g.out_w};
}

/// Cross-correlation of a CxHxW input with FxCxkhxkw kernels; zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  const auto g = detail::conv_geometry(input.shape(), kernels.shape(), stride, padding);
  Tensor out({g.filters, g.out_h, g.out_w});
  for (std::size_t f = 0; f < g.filters; ++f)
    for (std::size_t c = 0; c < g.channels; ++c)
      detail::for_each_tap(g, [&](std::size_t iy, std::size_t ix, std::size_t ky, std::size_t kx,
                                  std::size_t oy, std::size_t ox) {
        out[(f * g.out_h + oy) * g.out_w + ox] +=
            input[(c * g.height + iy) * g.width + ix] * kernels[((f * g.channels + c) * g.kh + ky) * g.kw + kx];
      });
  return detail::checked(std::move(out), "conv2d");
}

/// Adjoint of conv2d with respect to its input: scatters each output cell
/// back through the kernel taps. Shapes follow the forward call.
inline Tensor conv2d_transpose(const Tensor& output, const Tensor& kernels, const Shape& input_shape,
                               std::size_t stride, std::size_t padding) {
  const auto g = detail::conv_geometry(input_shape, kernels.shape(), stride, padding);
  if (output.shape() != Shape{g.filters, g.out_h, g.out_w})
    throw ShapeError("conv2d_transpose: output " + shape_string(output.shape()) + " does not match " +
                     shape_string({g.filters, g.out_h, g.out_w}));
  Tensor in(input_shape);
  for (std::size_t f = 0; f < g.filters; ++f)
    for (std::size_t c = 0; c < g.channels; ++c)
      detail::for_each_tap(g, [&](std::size_t iy, std::size_t ix, std::size_t ky, std::size_t kx,
                                  std::size_t oy, std::size_t ox) {
        in[(c * g.height + iy) * g.width + ix] +=
            output[(f * g.out_h + oy) * g.out_w + ox] * kernels[((f * g.channels + c) * g.kh + ky) * g.kw + kx];
      });
  return detail::checked(std::move(in), "conv2d_transpose");
}

/// Gradient of conv2d with respect to its kernels.
inline Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_output, const Shape& kernel_shape,
                                 std::size_t stride, std::size_t padding) {
  const auto g = detail::conv_geometry(input.shape(), kernel_shape, stride, padding);
  Tensor grad(kernel_shape);
  for (std::size_t f = 0; f < g.filters; ++f)
    for (std::size_t c = 0; c < g.channels; ++c)
      detail::for_each_tap(g, [&](std::size_t iy, std::size_t ix, std::size_t ky, std::size_t kx,
                                  std::size_t oy, std::size_t ox) {
        grad[((f * g.channels + c) * g.kh + ky) * g.kw + kx] +=
            input[(c * g.height + iy) * g.width + ix] * grad_output[(f * g.out_h + oy) * g.out_w + ox];
      });
  return detail::checked(std::move(grad), "conv2d_kernel_grad");
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::max(v, 0.0);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return detail::checked(std::move(out), "add");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return detail::checked(std::move(out), "mul");
}

inline Tensor scale(const Tensor& x, double factor) {
  Tensor out = x;
  for (double& v : out.values()) v *= factor;
  return detail::checked(std::move(out), "scale");
}

// Elementwise max(x, 0).
inline Tensor positive_part(const Tensor& x) { return relu(x); }

}  // namespace infip
