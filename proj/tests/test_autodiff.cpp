#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "svae/ad/adam.hpp"
#include "svae/ad/gradient_check.hpp"
#include "svae/ad/ops.hpp"
#include "svae/ad/param_store.hpp"
#include "svae/errors.hpp"

using namespace svae;
using namespace svae::ad;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Values bounded away from zero, for ops with a kink there.
std::vector<double> away_from_zero(std::mt19937_64& rng, std::size_t n) {
  auto v = random_values(rng, n, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v) x = sign(rng) ? x : -x;
  return v;
}

// Direct summation oracle for zero-padded strided convolution.
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t n, std::size_t c,
                               std::size_t h, std::size_t w, const std::vector<double>& k,
                               std::size_t o, std::size_t ks, std::size_t stride,
                               std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += x[((i * c + ic) * h + iy) * w + ix] * k[((oc * c + ic) * ks + ky) * ks + kx];
              }
          out[((i * o + oc) * oh + oy) * ow + ox] = s;
        }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(ForwardOps, MatmulIdentity) {
  auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, eye);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{1, 2, 3, 4}));
}

TEST(ForwardOps, ExpOfZeros) {
  auto y = exp(Tensor::zeros({3}));
  for (double v : y.values()) EXPECT_EQ(v, 1.0);
}

TEST(ForwardOps, ConvAllOnesCenterPixel) {
  auto x = Tensor::constant({1, 1, 4, 4}, std::vector<double>(16, 1.0));
  auto k = Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto y = conv2d(x, k, Tensor(), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const auto oracle = naive_conv(std::vector<double>(16, 1.0), 1, 1, 4, 4,
                                 std::vector<double>(9, 1.0), 1, 3, 1, 1);
  EXPECT_EQ(oracle[1 * 4 + 1], 9.0);
  EXPECT_EQ(y.values()[1 * 4 + 1], oracle[1 * 4 + 1]);
  EXPECT_EQ(y.values()[0], 4.0);  // corner sees a 2x2 window
}

TEST(ForwardOps, ConvMatchesDirectSummation) {
  std::mt19937_64 rng(7);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const auto xv = random_values(rng, 2 * 3 * 6 * 5);
      const auto kv = random_values(rng, 4 * 3 * 3 * 3);
      auto y = conv2d(Tensor::constant({2, 3, 6, 5}, xv), Tensor::constant({4, 3, 3, 3}, kv),
                      Tensor(), stride, pad);
      const auto oracle = naive_conv(xv, 2, 3, 6, 5, kv, 4, 3, stride, pad);
      ASSERT_EQ(y.numel(), oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(y.values()[i], oracle[i], 1e-12);
    }
  }
}

TEST(ForwardOps, ShapeMismatchIsConfigError) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), ConfigError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ConfigError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor(), 1, 1),
               ConfigError);
}

TEST(ForwardOps, NonFiniteIsNumericFaultNamingTheOp) {
  try {
    log(Tensor::constant({2}, {1.0, -1.0}));
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
  EXPECT_THROW(exp(Tensor::constant({1}, {1e4})), NumericFault);
}

TEST(Backward, SumOfSquares) {
  auto w = Tensor::parameter({3}, {1, 2, 3});
  backward(sum(mul(w, w)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ExpChainAtZero) {
  auto x = Tensor::parameter({1}, {0.0});
  backward(sum(exp(x)));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  auto w = Tensor::parameter({3}, {1, 2, 3});
  EXPECT_THROW(backward(mul(w, w)), UsageError);
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
  auto w = Tensor::parameter({2}, {1, -2});
  auto loss = sum(square(w));
  backward(loss);
  backward(loss);
  EXPECT_EQ(w.grad()[0], 4.0);
  EXPECT_EQ(w.grad()[1], -8.0);
  w.zero_grad();
  backward(loss);
  EXPECT_EQ(w.grad()[0], 2.0);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  auto w = Tensor::parameter({2}, {1, 2});
  NoGradGuard guard;
  auto y = square(w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Adam, SingleStepMovesByLearningRate) {
  ParamStore store;
  auto p = store.add("p", Tensor::parameter({1}, {1.0}));
  p.mutable_grad()[0] = 1.0;
  AdamState state;
  state.learning_rate = 0.0005;
  adam_step(store, state);
  // m = 0.1, v = 0.001; bias-corrected both are 1.
  EXPECT_NEAR(p.values()[0], 1.0 - 0.0005 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParamStore store;
  auto p = store.add("p", Tensor::parameter({2}, {0.3, -0.7}));
  AdamState state;
  adam_step(store, state);
  EXPECT_EQ(p.values()[0], 0.3);
  EXPECT_EQ(p.values()[1], -0.7);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, TwoStepsFollowExponentialAverages) {
  ParamStore store;
  auto p = store.add("p", Tensor::parameter({1}, {1.0}));
  AdamState state;
  for (int i = 0; i < 2; ++i) {
    p.mutable_grad()[0] = 1.0;
    adam_step(store, state);
  }
  EXPECT_EQ(state.step, 2u);
  const auto& m = state.moments.at("p");
  EXPECT_NEAR(m.first[0], 0.9 * 0.1 + 0.1, 1e-15);
  EXPECT_NEAR(m.second[0], 0.999 * 0.001 + 0.001, 1e-15);
  // Constant gradients give bias-corrected ratio 1 at every step.
  EXPECT_NEAR(p.values()[0], 1.0 - 2 * 0.0005 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, FrozenParametersUntouched) {
  ParamStore store;
  auto a = store.add("a", Tensor::parameter({1}, {1.0}));
  auto b = store.add("b", Tensor::parameter({1}, {2.0}));
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = 1.0;
  store.set_trainable([](const std::string& n) { return n == "a"; });
  AdamState state;
  adam_step(store, state);
  EXPECT_NE(a.values()[0], 1.0);
  EXPECT_EQ(b.values()[0], 2.0);
  EXPECT_FALSE(state.moments.contains("b"));
}

TEST(ParamStoreTest, DuplicateNamesRejectedAndOrderStable) {
  ParamStore store;
  store.add("z", Tensor::parameter({1}, {0}));
  store.add("a", Tensor::parameter({2}, {0, 0}));
  EXPECT_THROW(store.add("z", Tensor::parameter({1}, {0})), ConfigError);
  EXPECT_EQ(store.entries()[0].first, "z");
  EXPECT_EQ(store.entries()[1].first, "a");
  EXPECT_EQ(store.total_elements(), 3u);
}

TEST(GradientCheck, HalfSquaredNorm) {
  ParamStore store;
  std::mt19937_64 rng(3);
  store.add("p", Tensor::parameter({5}, random_values(rng, 5)));
  auto report = gradient_check(
      [](ParamStore& s) { return scale(sum(square(s.at("p"))), 0.5); }, store, {});
  EXPECT_TRUE(report.pass);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradientCheck, KinkInsideStencilIsReportedNotThrown) {
  ParamStore store;
  GradientCheckOptions opts;
  store.add("p", Tensor::parameter({1}, {0.25 * opts.step}));
  auto report = gradient_check([](ParamStore& s) { return sum(abs(s.at("p"))); }, store, opts);
  EXPECT_FALSE(report.pass);
  EXPECT_FALSE(report.params[0].pass);
}

// Every forward op: analytic gradient vs central differences on random shapes.
TEST(GradientProperty, EveryOpMatchesFiniteDifferences) {
  using Builder = std::function<Tensor(ParamStore&)>;
  struct Case {
    const char* name;
    std::function<Builder(std::mt19937_64&, ParamStore&)> make;
  };
  auto dims = [](std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  // Projects the op output onto fixed random weights so every output element matters.
  auto project = [](std::mt19937_64& rng, Builder inner) -> Builder {
    auto seed = rng();
    return [inner, seed](ParamStore& s) {
      Tensor y = inner(s);
      std::mt19937_64 r(seed);
      auto w = Tensor::constant(y.shape(), random_values(r, y.numel()));
      return sum(mul(y, w));
    };
  };
  std::vector<Case> cases = {
      {"add", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n)));
         s.add("b", Tensor::parameter({n}, random_values(rng, n)));
         return project(rng, [](ParamStore& s) { return add(s.at("a"), s.at("b")); });
       }},
      {"sub_mul", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n)));
         s.add("b", Tensor::parameter({n}, random_values(rng, n)));
         return project(rng, [](ParamStore& s) {
           return mul(sub(s.at("a"), s.at("b")), s.at("b"));
         });
       }},
      {"scale_add_scalar", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n)));
         return project(rng, [](ParamStore& s) { return add_scalar(scale(s.at("a"), -2.5), 0.7); });
       }},
      {"exp", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n)));
         return project(rng, [](ParamStore& s) { return exp(s.at("a")); });
       }},
      {"log", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n, 0.2, 3.0)));
         return project(rng, [](ParamStore& s) { return log(s.at("a")); });
       }},
      {"softplus", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n, -3, 3)));
         return project(rng, [](ParamStore& s) { return softplus(s.at("a")); });
       }},
      {"leaky_relu", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, away_from_zero(rng, n)));
         return project(rng, [](ParamStore& s) { return leaky_relu(s.at("a"), 0.2); });
       }},
      {"tanh", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, random_values(rng, n, -2, 2)));
         return project(rng, [](ParamStore& s) { return tanh(s.at("a")); });
       }},
      {"square_abs", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 16);
         s.add("a", Tensor::parameter({n}, away_from_zero(rng, n)));
         return project(rng, [](ParamStore& s) { return add(square(s.at("a")), abs(s.at("a"))); });
       }},
      {"reshape_sum_mean", [&](auto& rng, ParamStore& s) {
         auto r = dims(rng, 1, 4), c = dims(rng, 1, 4);
         s.add("a", Tensor::parameter({r, c}, random_values(rng, r * c)));
         return project(rng, [r, c](ParamStore& s) {
           auto v = reshape(s.at("a"), {c, r});
           return add(scale(sum(v), 0.5), mean(square(v)));
         });
       }},
      {"sum_per_sample", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 4), m = dims(rng, 1, 8);
         s.add("a", Tensor::parameter({n, m}, random_values(rng, n * m)));
         return project(rng, [](ParamStore& s) { return sum_per_sample(square(s.at("a"))); });
       }},
      {"matmul", [&](auto& rng, ParamStore& s) {
         auto m = dims(rng, 1, 5), k = dims(rng, 1, 5), n = dims(rng, 1, 5);
         s.add("a", Tensor::parameter({m, k}, random_values(rng, m * k)));
         s.add("b", Tensor::parameter({k, n}, random_values(rng, k * n)));
         return project(rng, [](ParamStore& s) { return matmul(s.at("a"), s.at("b")); });
       }},
      {"linear", [&](auto& rng, ParamStore& s) {
         auto b = dims(rng, 1, 4), in = dims(rng, 1, 5), out = dims(rng, 1, 5);
         s.add("x", Tensor::parameter({b, in}, random_values(rng, b * in)));
         s.add("w", Tensor::parameter({out, in}, random_values(rng, out * in)));
         s.add("bias", Tensor::parameter({out}, random_values(rng, out)));
         return project(rng, [](ParamStore& s) { return linear(s.at("x"), s.at("w"), s.at("bias")); });
       }},
      {"conv2d", [&](auto& rng, ParamStore& s) {
         auto c = dims(rng, 1, 2), o = dims(rng, 1, 2), h = dims(rng, 3, 5), w = dims(rng, 3, 5);
         auto stride = dims(rng, 1, 2), pad = dims(rng, 0, 1), k = dims(rng, 0, 1) ? 3u : 2u;
         s.add("x", Tensor::parameter({1, c, h, w}, random_values(rng, c * h * w)));
         s.add("k", Tensor::parameter({o, c, k, k}, random_values(rng, o * c * k * k)));
         s.add("b", Tensor::parameter({o}, random_values(rng, o)));
         return project(rng, [stride, pad](ParamStore& s) {
           return conv2d(s.at("x"), s.at("k"), s.at("b"), stride, pad);
         });
       }},
      {"conv_transpose2d", [&](auto& rng, ParamStore& s) {
         auto c = dims(rng, 1, 2), o = dims(rng, 1, 2), h = dims(rng, 1, 3), w = dims(rng, 1, 3);
         auto stride = dims(rng, 1, 2), k = std::size_t{4} - dims(rng, 0, 1) * 1, pad = dims(rng, 0, 1);
         s.add("x", Tensor::parameter({1, c, h, w}, random_values(rng, c * h * w)));
         s.add("k", Tensor::parameter({c, o, k, k}, random_values(rng, o * c * k * k)));
         s.add("b", Tensor::parameter({o}, random_values(rng, o)));
         return project(rng, [stride, pad](ParamStore& s) {
           return conv_transpose2d(s.at("x"), s.at("k"), s.at("b"), stride, pad);
         });
       }},
      {"concat_slice", [&](auto& rng, ParamStore& s) {
         auto h = dims(rng, 1, 3), w = dims(rng, 1, 3);
         s.add("a", Tensor::parameter({2, 1, h, w}, random_values(rng, 2 * h * w)));
         s.add("b", Tensor::parameter({2, 2, h, w}, random_values(rng, 4 * h * w)));
         return project(rng, [](ParamStore& s) {
           auto c = concat_channels({s.at("a"), s.at("b")});
           return mul(slice_channels(c, 1, 2), slice_channels(c, 0, 2));
         });
       }},
      {"spatial_mean_broadcast", [&](auto& rng, ParamStore& s) {
         auto h = dims(rng, 1, 4), w = dims(rng, 1, 4);
         s.add("a", Tensor::parameter({2, 2, h, w}, random_values(rng, 4 * h * w)));
         return project(rng, [h, w](ParamStore& s) {
           auto m = mean_spatial(s.at("a"));
           return mul(broadcast_spatial(m, h, w), s.at("a"));
         });
       }},
      {"diag_gaussian_log_prob", [&](auto& rng, ParamStore& s) {
         auto n = dims(rng, 1, 3), m = dims(rng, 1, 8);
         s.add("mu", Tensor::parameter({n, m}, random_values(rng, n * m)));
         s.add("ls", Tensor::parameter({n, m}, random_values(rng, n * m)));
         auto x = Tensor::constant({n, m}, random_values(rng, n * m));
         return project(rng, [x](ParamStore& s) {
           return diag_gaussian_log_prob(s.at("mu"), s.at("ls"), x);
         });
       }},
  };

  std::mt19937_64 rng(20240611);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      ParamStore store;
      auto f = c.make(rng, store);
      auto report = gradient_check(f, store, {});
      worst = std::max(worst, report.max_rel_error);
      ASSERT_TRUE(report.pass) << c.name << " trial " << trial << " rel " << report.max_rel_error;
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(ConvProperty, TransposeIsAdjoint) {
  std::mt19937_64 rng(11);
  int compared = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 1 + trial % 3, o = 1 + trial % 2, stride = 1 + trial % 2, k = 3 + trial % 2;
    const std::size_t pad = 1, h = 8, w = 6;
    auto x = Tensor::constant({2, c, h, w}, random_values(rng, 2 * c * h * w));
    auto weight = Tensor::constant({o, c, k, k}, random_values(rng, o * c * k * k));
    auto y_shape_probe = conv2d(x, weight, Tensor(), stride, pad);
    auto y = Tensor::constant(y_shape_probe.shape(), random_values(rng, y_shape_probe.numel()));
    auto back = conv_transpose2d(y, weight, Tensor(), stride, pad);
    // convT may produce a slightly smaller image when stride does not divide evenly.
    if (back.shape() != x.shape()) continue;
    const double lhs = dot(y_shape_probe.values(), y.values());
    const double rhs = dot(x.values(), back.values());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::fabs(lhs)));
    ++compared;
  }
  EXPECT_GE(compared, 10);
}

TEST(Determinism, IdenticalInputsGiveBitwiseIdenticalResults) {
  auto run = [] {
    std::mt19937_64 rng(5);
    ParamStore s;
    s.add("x", Tensor::parameter({2, 2, 6, 6}, random_values(rng, 144)));
    s.add("k", Tensor::parameter({3, 2, 3, 3}, random_values(rng, 54)));
    auto y = sum(tanh(conv2d(s.at("x"), s.at("k"), Tensor(), 2, 1)));
    backward(y);
    std::vector<double> out{y.item()};
    for (auto& [n, t] : s.entries()) out.insert(out.end(), t.grad().begin(), t.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
