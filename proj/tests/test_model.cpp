#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "svae/ad/adam.hpp"
#include "svae/ad/gradient_check.hpp"
#include "svae/ad/ops.hpp"
#include "svae/data.hpp"
#include "svae/errors.hpp"
#include "svae/model.hpp"

using namespace svae;
using namespace svae::model;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

ModelConfig toy_config(Likelihood mode = Likelihood::Structured) {
  ModelConfig c;
  c.image_size = 8;
  c.latent_dim = 3;
  c.channels = {4, 6};
  c.dense_units = 8;
  c.likelihood = mode;
  return c;
}

std::vector<color::YccImage> synthetic_images(const ModelConfig& cfg, std::size_t n,
                                              std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.size = cfg.image_size;
  spec.grayscale = cfg.grayscale;
  spec.family = data::MeanFamily::Texture;
  spec.seed = seed;
  auto s = data::gen_synthetic(spec, n);
  std::vector<color::YccImage> out;
  for (const auto& r : s.dataset.records) out.push_back(data::to_ycc(r.rgb, cfg.effective_chroma_factor()));
  return out;
}

Batch batch_of(const ModelConfig& cfg, const std::vector<color::YccImage>& imgs) {
  std::vector<const color::YccImage*> ptrs;
  for (const auto& i : imgs) ptrs.push_back(&i);
  return make_batch(cfg, ptrs);
}

ad::Tensor filled(ad::Shape s, double v) {
  return ad::Tensor::constant(s, std::vector<double>(ad::shape_numel(s), v));
}

}  // namespace

TEST(Config, Validation) {
  auto c = toy_config();
  EXPECT_NO_THROW(c.validate());
  c.patch_size = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.patch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.image_size = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.gamma = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_likelihood("full"), ConfigError);
}

TEST(Encode, ShapesPositivityDeterminism) {
  auto cfg = toy_config();
  VaeModel m(cfg, 1);
  auto b = batch_of(cfg, synthetic_images(cfg, 3, 1));
  auto q = m.encode(b.enc_in);
  EXPECT_EQ(q.rho.shape(), (ad::Shape{3, 3}));
  EXPECT_EQ(q.log_omega.shape(), (ad::Shape{3, 3}));
  for (double v : q.log_omega.values()) EXPECT_GT(std::exp(v), 0.0);
  auto q2 = m.encode(b.enc_in);
  EXPECT_TRUE(std::equal(q.rho.values().begin(), q.rho.values().end(), q2.rho.values().begin()));
  EXPECT_THROW(m.encode(filled({1, 3, 4, 4}, 0.0)), ConfigError);
}

TEST(Reparameterize, ZeroOmegaReturnsRho) {
  LatentGaussian q{ad::Tensor::constant({1, 3}, {0.5, -1.0, 2.0}), filled({1, 3}, -1000.0)};
  std::mt19937_64 rng(1);
  auto z = reparameterize(q, rng);
  EXPECT_EQ(z.values()[0], 0.5);
  EXPECT_EQ(z.values()[1], -1.0);
  EXPECT_EQ(z.values()[2], 2.0);
}

TEST(Reparameterize, UnbiasedAndGradientOfSquaredNorm) {
  const double rho = 0.7, omega = 1.3;
  auto r = ad::Tensor::parameter({1, 1}, {rho});
  LatentGaussian q{r, ad::Tensor::constant({1, 1}, {std::log(omega)})};
  std::mt19937_64 rng(5);
  const int n = 100000;
  double s = 0.0, g = 0.0, g2 = 0.0;
  for (int i = 0; i < n; ++i) {
    auto z = reparameterize(q, rng);
    s += z.item();
    r.zero_grad();
    ad::backward(ad::sum(ad::square(z)));
    g += r.grad()[0];
    g2 += r.grad()[0] * r.grad()[0];
  }
  EXPECT_LT(std::abs(s / n - rho), 4.0 * omega / std::sqrt(n));
  const double gm = g / n, gsd = std::sqrt(g2 / n - gm * gm);
  EXPECT_LT(std::abs(gm - 2.0 * rho), 4.0 * gsd / std::sqrt(n));
}

TEST(Kl, ClosedFormExamples) {
  LatentGaussian std_normal{filled({1, 4}, 0.0), filled({1, 4}, 0.0)};
  EXPECT_EQ(kl_divergence(std_normal).item(), 0.0);
  LatentGaussian shifted{filled({1, 1}, 1.0), filled({1, 1}, 0.0)};
  EXPECT_NEAR(kl_divergence(shifted).item(), 0.5, 1e-15);
}

TEST(Kl, MatchesMonteCarlo) {
  const std::vector<double> rho{0.3, -1.2}, omega{0.6, 1.5};
  LatentGaussian q{ad::Tensor::constant({1, 2}, rho),
                   ad::Tensor::constant({1, 2}, {std::log(omega[0]), std::log(omega[1])})};
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double z = rho[j] + omega[j] * normal(rng);
      const double log_q = -0.5 * std::pow((z - rho[j]) / omega[j], 2) - std::log(omega[j]) - 0.5 * kLog2Pi;
      const double log_p = -0.5 * z * z - 0.5 * kLog2Pi;
      v += log_q - log_p;
    }
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(kl_divergence(q).item() - mean), 3.0 * se);
}

TEST(KlProperty, NonNegativeAndZeroOnlyAtPrior) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> r(5), l(5);
    for (int j = 0; j < 5; ++j) {
      r[j] = u(rng);
      l[j] = u(rng);
    }
    const double kl = kl_divergence({ad::Tensor::constant({1, 5}, r), ad::Tensor::constant({1, 5}, l)}).item();
    EXPECT_GT(kl, 0.0);
  }
  EXPECT_EQ(kl_divergence({filled({2, 5}, 0.0), filled({2, 5}, 0.0)}).values()[1], 0.0);
}

TEST(Decode, PaperScaleShapeContract) {
  ModelConfig cfg;  // 64x64, four levels, d_z = 64
  cfg.basis_size = 4;
  VaeModel m(cfg, 3);
  auto out = m.decode(filled({1, 64}, 0.1), Likelihood::Structured);
  EXPECT_EQ(out.mu_y.shape(), (ad::Shape{1, 1, 64, 64}));
  EXPECT_EQ(out.mu_c.shape(), (ad::Shape{1, 2, 16, 16}));
  EXPECT_EQ(out.cov_weights.shape(), (ad::Shape{1, 4, 64, 64}));
  // Basis expansion yields (3^2 - 1) / 2 + 1 = 5 coefficients per pixel.
  EXPECT_EQ(out.cov_field.shape(), (ad::Shape{1, 5, 64, 64}));
  auto again = m.decode(filled({1, 64}, 0.1), Likelihood::Structured);
  EXPECT_TRUE(std::equal(out.cov_field.values().begin(), out.cov_field.values().end(),
                         again.cov_field.values().begin()));
}

TEST(Decode, SphericalSigmaIsSpatiallyConstant) {
  auto cfg = toy_config();
  VaeModel m(cfg, 4);
  auto out = m.decode(filled({2, 3}, 0.3), Likelihood::Spherical);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t p = 1; p < 64; ++p) {
      EXPECT_EQ(out.log_sigma_y.values()[n * 64 + p], out.log_sigma_y.values()[n * 64]);
    }
  }
  EXPECT_FALSE(out.cov_field.defined());
}

TEST(Likelihood, AllGaussiansAtTheirMode) {
  ModelConfig cfg;
  cfg.channels = {4, 4, 4, 4};
  cfg.dense_units = 4;
  VaeModel m(cfg, 1);
  DecoderOutput out;
  out.mu_y = filled({1, 1, 64, 64}, 0.4);
  out.mu_c = filled({1, 2, 16, 16}, 0.5);
  out.log_sigma_c = filled({1, 2, 16, 16}, 0.0);
  out.cov_field = filled({1, 5, 64, 64}, 0.0);  // L = I
  Batch b;
  b.size = 1;
  b.y = out.mu_y;
  b.chroma = out.mu_c;
  const double ll = likelihood_term(m, out, b, Likelihood::Structured).item();
  const double n_total = 64.0 * 64.0 + 2.0 * 16.0 * 16.0;
  EXPECT_NEAR(ll, -(n_total / 2.0) * kLog2Pi, 1e-9);
}

TEST(LikelihoodProperty, DiagonalEqualsDiagonalOnlyStructured) {
  auto cfg = toy_config();
  VaeModel m(cfg, 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> mu(2 * 64), x(2 * 64), ls(2 * 64), field(2 * 5 * 64, 0.0);
    for (std::size_t i = 0; i < mu.size(); ++i) {
      mu[i] = u(rng);
      x[i] = u(rng);
      ls[i] = 0.5 * u(rng);
    }
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t p = 0; p < 64; ++p) field[n * 5 * 64 + p] = -ls[n * 64 + p];
    }
    DecoderOutput out;
    out.mu_y = ad::Tensor::constant({2, 1, 8, 8}, mu);
    out.log_sigma_y = ad::Tensor::constant({2, 1, 8, 8}, ls);
    out.cov_field = ad::Tensor::constant({2, 5, 8, 8}, field);
    out.mu_c = filled({2, 2, 8, 8}, 0.5);
    out.log_sigma_c = filled({2, 2, 8, 8}, -1.0);
    Batch b;
    b.size = 2;
    b.y = ad::Tensor::constant({2, 1, 8, 8}, x);
    b.chroma = filled({2, 2, 8, 8}, 0.45);
    auto d = likelihood_term(m, out, b, Likelihood::Diagonal);
    auto s = likelihood_term(m, out, b, Likelihood::Structured);
    for (std::size_t n = 0; n < 2; ++n) EXPECT_NEAR(d.values()[n], s.values()[n], 1e-10);
  }
}

TEST(Likelihood, CloserMeanIncreasesTerm) {
  auto cfg = toy_config();
  cfg.grayscale = true;
  VaeModel m(cfg, 1);
  DecoderOutput out;
  out.mu_y = filled({1, 1, 8, 8}, 0.5);
  out.log_sigma_y = filled({1, 1, 8, 8}, -1.0);
  Batch b;
  b.size = 1;
  std::vector<double> x(64, 0.7);
  b.y = ad::Tensor::constant({1, 1, 8, 8}, x);
  double prev = likelihood_term(m, out, b, Likelihood::Diagonal).item();
  for (double v : {0.65, 0.6, 0.55, 0.5}) {
    x[17] = v;
    b.y = ad::Tensor::constant({1, 1, 8, 8}, x);
    const double cur = likelihood_term(m, out, b, Likelihood::Diagonal).item();
    EXPECT_GT(cur, prev);
    prev = cur;
  }
}

TEST(Loss, ReducesToNegativeElbo) {
  auto cfg = toy_config();
  VaeModel m(cfg, 7);
  auto b = batch_of(cfg, synthetic_images(cfg, 2, 4));
  LossOptions opts;
  opts.alpha = 0.0;
  opts.gamma = 0.0;
  opts.beta = 1.0;
  auto terms = loss(m, b, 99, Likelihood::Structured, opts);

  auto q = m.encode(b.enc_in);
  std::mt19937_64 rng(99);
  auto out = m.decode(reparameterize(q, rng), Likelihood::Structured);
  auto ll = likelihood_term(m, out, b, Likelihood::Structured);
  auto kl = kl_divergence(q);
  const double elbo = 0.5 * (ll.values()[0] - kl.values()[0] + ll.values()[1] - kl.values()[1]);
  EXPECT_NEAR(terms.total.item(), -elbo, 1e-10 * std::abs(elbo));
  EXPECT_NEAR(terms.nll + terms.kl, -elbo, 1e-10 * std::abs(elbo));
  EXPECT_EQ(terms.alpha_term, 0.0);
}

TEST(Loss, GammaTermVanishesForDiagonalFactor) {
  auto cfg = toy_config();
  VaeModel m(cfg, 7);
  for (auto& v : m.params().at("cov.conv2.w").mutable_values()) v = 0.0;
  auto bias = m.params().at("cov.conv2.b").mutable_values();
  for (std::size_t i = 1; i < bias.size(); ++i) bias[i] = 0.0;
  auto b = batch_of(cfg, synthetic_images(cfg, 2, 4));
  auto terms = loss(m, b, 1, Likelihood::Structured);
  EXPECT_EQ(terms.gamma_term, 0.0);
  EXPECT_GT(terms.alpha_term, 0.0);
}

TEST(Loss, FiniteDifferenceGradientsOnToyConfig) {
  auto cfg = toy_config();
  cfg.basis_size = 3;
  VaeModel m(cfg, 11);
  auto b = batch_of(cfg, synthetic_images(cfg, 2, 5));
  ad::GradientCheckOptions opts;
  opts.max_elements_per_param = 12;
  opts.sample_seed = 3;
  auto report = ad::gradient_check(
      [&](ad::ParamStore&) { return loss(m, b, 21, Likelihood::Structured).total; }, m.params(), opts);
  for (const auto& p : report.params) {
    EXPECT_TRUE(p.pass) << p.name << " rel err " << p.max_rel_error << " analytic " << p.analytic
                        << " numeric " << p.numeric;
  }
}

TEST(Loss, DecreasesOnFixedBatch) {
  auto cfg = toy_config(Likelihood::Diagonal);
  VaeModel m(cfg, 2);
  auto b = batch_of(cfg, synthetic_images(cfg, 8, 6));
  ad::AdamState adam;
  adam.learning_rate = 1e-3;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    auto terms = loss(m, b, 1000 + step, Likelihood::Diagonal);
    if (step == 0) first = terms.total.item();
    last = terms.total.item();
    ad::backward(terms.total);
    ad::adam_step(m.params(), adam);
  }
  EXPECT_LT(last, first);
}

TEST(ParamCount, StructuredAddsExactlyTheCovarianceBranch) {
  for (std::size_t nb : {0, 3}) {
    auto cfg = toy_config(Likelihood::Structured);
    cfg.basis_size = nb;
    VaeModel s(cfg, 1);
    cfg.likelihood = Likelihood::Diagonal;
    VaeModel d(cfg, 1);
    const auto branch = s.params().total_elements(is_cov_param);
    EXPECT_EQ(s.params().total_elements() - d.params().total_elements(), branch);
    // 4*4*9 + 4 + K*4*9 + K (+ 5*nb with a basis).
    const std::size_t k = nb ? nb : 5;
    EXPECT_EQ(branch, 4 * 4 * 9 + 4 + k * 4 * 9 + k + 5 * nb);
    EXPECT_EQ(branch, cov_branch_size(cfg));
  }
}
