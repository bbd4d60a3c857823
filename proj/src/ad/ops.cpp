#include "svae/ad/ops.hpp"

#include <cmath>
#include <numbers>

#include "gemm.hpp"
#include "svae/errors.hpp"

namespace svae::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_string(a.shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx) {
  auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [dfdx](detail::Node& self) {
    double* ga = grad_target(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_target(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& xa = self.parents[0]->value;
    const auto& xb = self.parents[1]->value;
    if (double* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (double* g = grad_target(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary("leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
               [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ConfigError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                      shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (double* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result("sum", {}, {total}, {a}, [](detail::Node& self) {
    if (double* g = grad_target(self, 0)) {
      const auto n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ConfigError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_per_sample(const Tensor& a) {
  if (a.rank() == 0) throw ConfigError("sum_per_sample: scalar input");
  const std::size_t n = a.dim(0);
  const std::size_t inner = n ? a.numel() / n : 0;
  auto v = a.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < inner; ++j) out[i] += v[i * inner + j];
  }
  return make_result("sum_per_sample", {n}, std::move(out), {a}, [n, inner](detail::Node& self) {
    if (double* g = grad_target(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < inner; ++j) g[i * inner + j] += self.grad[i];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ConfigError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                      shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, 1.0, a.values().data(), k, b.values().data(), n, 0.0,
               out.data(), n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](detail::Node& self) {
    const double* va = self.parents[0]->value.data();
    const double* vb = self.parents[1]->value.data();
    if (double* ga = grad_target(self, 0)) {
      detail::gemm(false, true, m, k, n, 1.0, self.grad.data(), n, vb, n, 1.0, ga, k);
    }
    if (double* gb = grad_target(self, 1)) {
      detail::gemm(true, false, k, n, m, 1.0, va, k, self.grad.data(), n, 1.0, gb, n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.numel() != out_dim) {
    throw ConfigError("linear: weight " + shape_string(weight.shape()) + " / bias " +
                      shape_string(bias.shape()) + " do not fit input " + shape_string(x.shape()));
  }
  std::vector<double> out(batch * out_dim);
  auto vb = bias.values();
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t o = 0; o < out_dim; ++o) out[i * out_dim + o] = vb[o];
  }
  detail::gemm(false, true, batch, out_dim, in, 1.0, x.values().data(), in,
               weight.values().data(), in, 1.0, out.data(), out_dim);
  return make_result(
      "linear", {batch, out_dim}, std::move(out), {x, weight, bias},
      [batch, in, out_dim](detail::Node& self) {
        const double* vx = self.parents[0]->value.data();
        const double* vw = self.parents[1]->value.data();
        if (double* gx = grad_target(self, 0)) {
          detail::gemm(false, false, batch, in, out_dim, 1.0, self.grad.data(), out_dim, vw, in,
                       1.0, gx, in);
        }
        if (double* gw = grad_target(self, 1)) {
          detail::gemm(true, false, out_dim, in, batch, 1.0, self.grad.data(), out_dim, vx, in,
                       1.0, gw, in);
        }
        if (double* gb = grad_target(self, 2)) {
          for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t o = 0; o < out_dim; ++o) gb[o] += self.grad[i * out_dim + o];
          }
        }
      });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank("concat_channels", p, 4);
  const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t channels = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ConfigError("concat_channels: incompatible " + shape_string(p.shape()));
    }
    offsets.push_back(channels);
    channels += p.dim(1);
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * channels * plane);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].dim(1);
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(v.begin() + i * c * plane, c * plane,
                  out.begin() + (i * channels + offsets[k]) * plane);
    }
  }
  return make_result("concat_channels", {n, channels, h, w}, std::move(out), parts,
                     [n, channels, plane, offsets](detail::Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         double* g = grad_target(self, k);
                         if (!g) continue;
                         const std::size_t c = self.parents[k]->shape[1];
                         for (std::size_t i = 0; i < n; ++i) {
                           const double* src = self.grad.data() + (i * channels + offsets[k]) * plane;
                           double* dst = g + i * c * plane;
                           for (std::size_t j = 0; j < c * plane; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank("slice_channels", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (begin + count > c) throw ConfigError("slice_channels: range exceeds channel count");
  auto v = x.values();
  std::vector<double> out(n * count * plane);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(v.begin() + (i * c + begin) * plane, count * plane,
                out.begin() + i * count * plane);
  }
  return make_result("slice_channels", {n, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                     [n, c, plane, begin, count](detail::Node& self) {
                       double* g = grad_target(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* src = self.grad.data() + i * count * plane;
                         double* dst = g + (i * c + begin) * plane;
                         for (std::size_t j = 0; j < count * plane; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor mean_spatial(const Tensor& x) {
  require_rank("mean_spatial", x, 4);
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  auto v = x.values();
  std::vector<double> out(nc, 0.0);
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += v[i * plane + j];
    out[i] = s / static_cast<double>(plane);
  }
  return make_result("mean_spatial", {x.dim(0), x.dim(1), 1, 1}, std::move(out), {x},
                     [nc, plane](detail::Node& self) {
                       double* g = grad_target(self, 0);
                       if (!g) return;
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t i = 0; i < nc; ++i) {
                         for (std::size_t j = 0; j < plane; ++j) g[i * plane + j] += self.grad[i] * inv;
                       }
                     });
}

Tensor broadcast_spatial(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank("broadcast_spatial", x, 4);
  if (x.dim(2) != 1 || x.dim(3) != 1) throw ConfigError("broadcast_spatial: input must be [N,C,1,1]");
  const std::size_t nc = x.dim(0) * x.dim(1), plane = height * width;
  auto v = x.values();
  std::vector<double> out(nc * plane);
  for (std::size_t i = 0; i < nc; ++i) {
    std::fill_n(out.begin() + i * plane, plane, v[i]);
  }
  return make_result("broadcast_spatial", {x.dim(0), x.dim(1), height, width}, std::move(out), {x},
                     [nc, plane](detail::Node& self) {
                       double* g = grad_target(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < nc; ++i) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < plane; ++j) s += self.grad[i * plane + j];
                         g[i] += s;
                       }
                     });
}

Tensor diag_gaussian_log_prob(const Tensor& mu, const Tensor& log_sigma, const Tensor& x) {
  require_same_shape("diag_gaussian_log_prob", mu, log_sigma);
  require_same_shape("diag_gaussian_log_prob", mu, x);
  if (mu.rank() == 0) throw ConfigError("diag_gaussian_log_prob: scalar input");
  const std::size_t n = mu.dim(0);
  const std::size_t inner = n ? mu.numel() / n : 0;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  auto vm = mu.values(), vs = log_sigma.values(), vx = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t e = i * inner + j;
      const double z = (vx[e] - vm[e]) * std::exp(-vs[e]);
      acc += -half_log_2pi - vs[e] - 0.5 * z * z;
    }
    out[i] = acc;
  }
  return make_result("diag_gaussian_log_prob", {n}, std::move(out), {mu, log_sigma, x},
                     [n, inner](detail::Node& self) {
                       const auto& m = self.parents[0]->value;
                       const auto& s = self.parents[1]->value;
                       const auto& xv = self.parents[2]->value;
                       double* gm = grad_target(self, 0);
                       double* gs = grad_target(self, 1);
                       double* gx = grad_target(self, 2);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double g = self.grad[i];
                         for (std::size_t j = 0; j < inner; ++j) {
                           const std::size_t e = i * inner + j;
                           const double inv_var = std::exp(-2.0 * s[e]);
                           const double r = xv[e] - m[e];
                           if (gm) gm[e] += g * r * inv_var;
                           if (gx) gx[e] -= g * r * inv_var;
                           if (gs) gs[e] += g * (r * r * inv_var - 1.0);
                         }
                       }
                     });
}

}  // namespace svae::ad
