#include <cstdint>

#include "gemm.hpp"
#include "svae/ad/ops.hpp"
#include "svae/errors.hpp"

namespace svae::ad {

namespace {

struct ConvGeometry {
  std::size_t channels, height, width;  // the "image" side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;              // the "column" side
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
};

// cols[(c*k + ky)*k + kx][oy*out_w + ox] = img[c][oy*s + ky - p][ox*s + kx - p]
void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const auto h = static_cast<std::int64_t>(g.height), w = static_cast<std::int64_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= h) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const auto h = static_cast<std::int64_t>(g.height), w = static_cast<std::int64_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * g.out_w;
          double* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv_args(const char* op, const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t in_channels_axis, std::size_t out_channels_axis,
                     std::size_t stride) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ConfigError(std::string(op) + ": expected rank-4 input and weight, got " +
                      shape_string(x.shape()) + " and " + shape_string(weight.shape()));
  }
  if (weight.dim(2) != weight.dim(3)) throw ConfigError(std::string(op) + ": square kernels only");
  if (weight.dim(in_channels_axis) != x.dim(1)) {
    throw ConfigError(std::string(op) + ": weight " + shape_string(weight.shape()) +
                      " does not match input channels of " + shape_string(x.shape()));
  }
  if (bias.defined() && bias.numel() != weight.dim(out_channels_axis)) {
    throw ConfigError(std::string(op) + ": bias size mismatch");
  }
  if (stride == 0) throw ConfigError(std::string(op) + ": stride must be positive");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  check_conv_args("conv2d", x, weight, bias, 1, 0, stride);
  const std::size_t n = x.dim(0), k = weight.dim(2), out_c = weight.dim(0);
  if (x.dim(2) + 2 * pad < k || x.dim(3) + 2 * pad < k) {
    throw ConfigError("conv2d: kernel larger than padded input " + shape_string(x.shape()));
  }
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), k, stride, pad,
                 (x.dim(2) + 2 * pad - k) / stride + 1, (x.dim(3) + 2 * pad - k) / stride + 1};
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = out_c * g.cols();

  std::vector<double> out(n * out_size, 0.0);
  std::vector<double> cols(g.rows() * g.cols());
  const double* w = weight.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    im2col(g, x.values().data() + i * in_size, cols.data());
    double* o = out.data() + i * out_size;
    if (bias.defined()) {
      auto b = bias.values();
      for (std::size_t c = 0; c < out_c; ++c) {
        for (std::size_t j = 0; j < g.cols(); ++j) o[c * g.cols() + j] = b[c];
      }
    }
    detail::gemm(false, false, out_c, g.cols(), g.rows(), 1.0, w, g.rows(), cols.data(), g.cols(),
                 1.0, o, g.cols());
  }

  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      "conv2d", {n, out_c, g.out_h, g.out_w}, std::move(out), std::move(parents),
      [g, n, out_c, in_size, out_size, has_bias](detail::Node& self) {
        const double* xv = self.parents[0]->value.data();
        const double* wv = self.parents[1]->value.data();
        double* gx = grad_target(self, 0);
        double* gw = grad_target(self, 1);
        double* gb = has_bias ? grad_target(self, 2) : nullptr;
        std::vector<double> cols(g.rows() * g.cols());
        for (std::size_t i = 0; i < n; ++i) {
          const double* go = self.grad.data() + i * out_size;
          if (gw) {
            im2col(g, xv + i * in_size, cols.data());
            detail::gemm(false, true, out_c, g.rows(), g.cols(), 1.0, go, g.cols(), cols.data(),
                         g.cols(), 1.0, gw, g.rows());
          }
          if (gb) {
            for (std::size_t c = 0; c < out_c; ++c) {
              double s = 0.0;
              for (std::size_t j = 0; j < g.cols(); ++j) s += go[c * g.cols() + j];
              gb[c] += s;
            }
          }
          if (gx) {
            detail::gemm(true, false, g.rows(), g.cols(), out_c, 1.0, wv, g.rows(), go, g.cols(),
                         0.0, cols.data(), g.cols());
            col2im(g, cols.data(), gx + i * in_size);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t pad) {
  check_conv_args("conv_transpose2d", x, weight, bias, 0, 1, stride);
  const std::size_t n = x.dim(0), in_c = x.dim(1), k = weight.dim(2), out_c = weight.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  if ((h - 1) * stride + k < 2 * pad + 1 || (w - 1) * stride + k < 2 * pad + 1) {
    throw ConfigError("conv_transpose2d: padding removes the whole output");
  }
  // Geometry of the conv2d whose input-adjoint this op is: the "image" is the
  // output of this op, the "columns" are indexed by input pixels.
  ConvGeometry g{out_c, (h - 1) * stride + k - 2 * pad, (w - 1) * stride + k - 2 * pad,
                 k, stride, pad, h, w};
  const std::size_t in_size = in_c * h * w;
  const std::size_t out_size = out_c * g.height * g.width;

  std::vector<double> out(n * out_size, 0.0);
  std::vector<double> cols(g.rows() * g.cols());
  const double* wv = weight.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    detail::gemm(true, false, g.rows(), g.cols(), in_c, 1.0, wv, g.rows(),
                 x.values().data() + i * in_size, g.cols(), 0.0, cols.data(), g.cols());
    double* o = out.data() + i * out_size;
    col2im(g, cols.data(), o);
    if (bias.defined()) {
      auto b = bias.values();
      const std::size_t plane = g.height * g.width;
      for (std::size_t c = 0; c < out_c; ++c) {
        for (std::size_t j = 0; j < plane; ++j) o[c * plane + j] += b[c];
      }
    }
  }

  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      "conv_transpose2d", {n, out_c, g.height, g.width}, std::move(out), std::move(parents),
      [g, n, in_c, out_c, in_size, out_size, has_bias](detail::Node& self) {
        const double* xv = self.parents[0]->value.data();
        const double* wv = self.parents[1]->value.data();
        double* gx = grad_target(self, 0);
        double* gw = grad_target(self, 1);
        double* gb = has_bias ? grad_target(self, 2) : nullptr;
        std::vector<double> cols(g.rows() * g.cols());
        const std::size_t plane = g.height * g.width;
        for (std::size_t i = 0; i < n; ++i) {
          const double* go = self.grad.data() + i * out_size;
          if (gb) {
            for (std::size_t c = 0; c < out_c; ++c) {
              double s = 0.0;
              for (std::size_t j = 0; j < plane; ++j) s += go[c * plane + j];
              gb[c] += s;
            }
          }
          if (!gx && !gw) continue;
          im2col(g, go, cols.data());
          if (gx) {
            detail::gemm(false, false, in_c, g.cols(), g.rows(), 1.0, wv, g.rows(), cols.data(),
                         g.cols(), 1.0, gx + i * in_size, g.cols());
          }
          if (gw) {
            detail::gemm(false, true, in_c, g.rows(), g.cols(), 1.0, xv + i * in_size, g.cols(),
                         cols.data(), g.cols(), 1.0, gw, g.rows());
          }
        }
      });
}

}  // namespace svae::ad
