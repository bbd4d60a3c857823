#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "smoke_setup.hpp"
#include "svae/ad/ops.hpp"
#include "svae/errors.hpp"
#include "svae/evaluation.hpp"
#include "svae/rng.hpp"

using namespace svae;
using namespace svae::eval;
namespace fs = std::filesystem;

namespace {

model::ModelConfig color_config() {
  model::ModelConfig c;
  c.image_size = 8;
  c.latent_dim = 3;
  c.channels = {4, 6};
  c.dense_units = 8;
  c.chroma_factor = 2;
  return c;
}

data::Dataset color_dataset(std::size_t n, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.size = 8;
  spec.grayscale = false;
  spec.family = data::MeanFamily::Texture;
  spec.seed = seed;
  return data::gen_synthetic(spec, n).dataset;
}

color::RgbImage random_rgb(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 255.0);
  color::RgbImage img(h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

double oracle_mse(const color::RgbImage& a, const color::RgbImage& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < a.height; ++y) {
      for (std::size_t x = 0; x < a.width; ++x) {
        const double d = a.at(c, y, x) - b.at(c, y, x);
        s += d * d;
      }
    }
  }
  return s / (3.0 * a.height * a.width);
}

}  // namespace

TEST(LogMeanExp, ShiftChangesBoundByExactlyMinusC) {
  const std::vector<double> w{-3.5, -1.25, -2.0, -0.75};
  const double c = 1024.0;
  std::vector<double> shifted;
  for (double v : w) shifted.push_back(v + c);
  EXPECT_EQ(-log_mean_exp(shifted), -log_mean_exp(w) - c);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(-5000.0, 30.0);
  std::vector<double> big(200);
  for (auto& v : big) v = n(rng);
  const double b = log_mean_exp(big);
  EXPECT_TRUE(std::isfinite(b));  // exp underflows without max subtraction
  for (auto& v : big) v += 321.5;
  EXPECT_NEAR(log_mean_exp(big), b + 321.5, 1e-10);
}

TEST(LogMeanExp, Faults) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(log_mean_exp(std::vector<double>{-inf, -inf}), NumericFault);
  EXPECT_THROW(log_mean_exp(std::vector<double>{0.0, std::nan("")}), NumericFault);
  EXPECT_DOUBLE_EQ(log_mean_exp(std::vector<double>{-inf, std::log(2.0)}), 0.0);
}

TEST(Iwae, SingleSampleMatchesLossWithSharedZ) {
  for (auto mode : {model::Likelihood::Structured, model::Likelihood::Diagonal}) {
    auto cfg = color_config();
    cfg.likelihood = mode;
    model::VaeModel m(cfg, 3);
    const auto ds = color_dataset(4, 9);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto x = data::to_ycc(ds.records[i].rgb, cfg.effective_chroma_factor());
      const std::uint64_t seed = 100 + i;
      model::LossOptions o;
      o.alpha = 0.0;
      o.beta = 1.0;
      o.gamma = 0.0;
      const auto terms = model::loss(m, model::make_batch(cfg, {&x}), seed, mode, o);

      // Single-sample KL estimate log q(z|x) - log p(z) with the loss's draw.
      ad::NoGradGuard guard;
      const auto q = m.encode(model::make_batch(cfg, {&x}).enc_in);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      double mc_kl = 0.0;
      for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
        const double nu = normal(rng);
        const double lw = q.log_omega.values()[j];
        const double z = q.rho.values()[j] + std::exp(lw) * nu;
        mc_kl += (-0.5 * nu * nu - lw) - (-0.5 * z * z);
      }
      EXPECT_NEAR(iwae_nll(m, x, 1, seed, mode), terms.nll + mc_kl, 1e-10);
      // With the closed-form KL the loss is the expectation of the same draw.
      EXPECT_NEAR(terms.total.item(), terms.nll + terms.kl, 1e-10);
    }
  }
}

TEST(Iwae, BoundTightensWithK) {
  auto cfg = color_config();
  model::VaeModel m(cfg, 5);
  const auto ds = color_dataset(1, 2);
  const auto x = data::to_ycc(ds.records[0].rgb, cfg.effective_chroma_factor());
  double mean[3] = {0, 0, 0};
  const std::size_t ks[3] = {1, 5, 25};
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (int k = 0; k < 3; ++k) mean[k] += iwae_nll(m, x, ks[k], mix_seed(77, s)) / 50.0;
  }
  EXPECT_GE(mean[0], mean[1]);
  EXPECT_GE(mean[1], mean[2]);
}

TEST(Iwae, ChunkingDoesNotChangeWeights) {
  auto cfg = color_config();
  model::VaeModel m(cfg, 5);
  const auto ds = color_dataset(1, 2);
  const auto x = data::to_ycc(ds.records[0].rgb, cfg.effective_chroma_factor());
  const auto w120 = importance_log_weights(m, x, 120, 9, cfg.likelihood);
  const auto w1 = importance_log_weights(m, x, 1, 9, cfg.likelihood);
  EXPECT_NEAR(w120[0], w1[0], 1e-9);
  EXPECT_THROW(importance_log_weights(m, x, 0, 9, cfg.likelihood), ConfigError);
}

TEST(Kl, ZeroForStandardPosterior) {
  auto cfg = color_config();
  model::VaeModel m(cfg, 1);
  for (auto& [name, t] : m.params().entries()) {
    if (name.rfind("enc.fc2.", 0) == 0) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  const auto ds = color_dataset(3, 1);
  std::vector<color::YccImage> ycc;
  for (const auto& r : ds.records) ycc.push_back(data::to_ycc(r.rgb, 2));
  EXPECT_EQ(kl_metric(m, {&ycc[0], &ycc[1], &ycc[2]}), 0.0);
}

TEST(Kl, MatchesPerImageDivergence) {
  auto cfg = color_config();
  model::VaeModel m(cfg, 1);
  const auto ds = color_dataset(70, 1);  // more than one internal batch
  std::vector<color::YccImage> ycc;
  for (const auto& r : ds.records) ycc.push_back(data::to_ycc(r.rgb, 2));
  std::vector<const color::YccImage*> ptrs;
  for (const auto& y : ycc) ptrs.push_back(&y);
  double ref = 0.0;
  for (const auto* p : ptrs) {
    ad::NoGradGuard g;
    ref += model::kl_divergence(m.encode(model::make_batch(cfg, {p}).enc_in)).item();
  }
  EXPECT_NEAR(kl_metric(m, ptrs), ref / 70.0, 1e-12);
}

TEST(Mse, ConstantOffsetAndIdentity) {
  color::RgbImage a(4, 4), b(4, 4);
  std::fill(a.data.begin(), a.data.end(), 128.0);
  std::fill(b.data.begin(), b.data.end(), 130.0);
  EXPECT_DOUBLE_EQ(rgb_mse(a, b), 4.0);
  EXPECT_EQ(rgb_mse(b, b), 0.0);
}

TEST(Mse, MatchesDoubleLoopOracleAndFlipInvariance) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_rgb(7, 5, rng), b = random_rgb(7, 5, rng);
    EXPECT_NEAR(rgb_mse(a, b), oracle_mse(a, b), 1e-12 * oracle_mse(a, b));
    EXPECT_NEAR(rgb_mse(data::flip_horizontal(a), data::flip_horizontal(b)), rgb_mse(a, b), 1e-12 * rgb_mse(a, b));
  }
}

TEST(Mse, MetricUsesPosteriorMeanReconstruction) {
  auto cfg = color_config();
  model::VaeModel m(cfg, 2);
  const auto ds = color_dataset(5, 3);
  std::vector<color::YccImage> ycc;
  for (const auto& r : ds.records) ycc.push_back(data::to_ycc(r.rgb, 2));
  std::vector<const color::YccImage*> ptrs;
  std::vector<const color::RgbImage*> targets;
  for (std::size_t i = 0; i < 5; ++i) {
    ptrs.push_back(&ycc[i]);
    targets.push_back(&ds.records[i].rgb);
  }
  const auto v = mse_values(m, ptrs, targets);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto p = reconstruct(m, ycc[i], ds.records[i].rgb, 1);
    EXPECT_NEAR(v[i], oracle_mse(ds.records[i].rgb, p.mean), 1e-12);
  }
  const auto agg = mse_metric(m, ptrs, targets);
  double mean = 0;
  for (double x : v) mean += x / 5.0;
  EXPECT_NEAR(agg.mean, mean, 1e-12);
}

TEST(Visuals, NoiseOfIdentityFactorIsWhite) {
  auto pattern = std::make_shared<structured::SparsityPattern>(structured::SparsityPattern::build(32, 32, 3, 1));
  const auto eye = structured::PackedCholesky::identity(pattern);
  const auto eps = sample_noise(eye, 42);
  double num = 0, den = 0, mean = 0;
  for (double e : eps) mean += e / eps.size();
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      const double a = eps[y * 32 + x] - mean;
      den += a * a;
      if (x + 1 < 32) num += a * (eps[y * 32 + x + 1] - mean);
    }
  }
  const double r = num / den;
  EXPECT_LT(std::abs(r), 4.0 / std::sqrt(32.0 * 31.0));
}

TEST(Visuals, RenderClampsAroundMidGray) {
  const auto r = render_noise(std::vector<double>{0.0, 10.0, -70.0, 70.0});
  EXPECT_EQ(r, (std::vector<double>{128.0, 148.0, 0.0, 255.0}));
}

TEST(Visuals, PanelsForABatchOfEight) {
  const auto dir = fs::temp_directory_path() / "svae_test_visuals";
  fs::remove_all(dir);
  auto cfg = color_config();
  model::VaeModel m(cfg, 2);
  const auto ds = color_dataset(8, 3);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto x = data::to_ycc(ds.records[i].rgb, 2);
    const auto p = reconstruct(m, x, ds.records[i].rgb, i);
    for (std::size_t k = 0; k < p.residual.data.size(); ++k) {
      EXPECT_EQ(p.residual.data[k], ds.records[i].rgb.data[k] - p.mean.data[k]);
    }
    for (double v : p.sample.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 255.0);
    }
    const auto files = emit_visuals(m, x, ds.records[i].rgb, i, dir.string(), "img" + std::to_string(i));
    EXPECT_EQ(files.size(), 5u);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    const auto s = "img" + std::to_string(i);
    for (const auto* suffix : {"_input.ppm", "_mean.ppm", "_eps.pgm", "_sample.ppm", "_residual.ppm"}) {
      EXPECT_TRUE(fs::exists(dir / (s + suffix))) << s + suffix;
    }
  }
}

TEST(Visuals, GrayscalePriorSampleHasNoInputPanels) {
  const auto dir = fs::temp_directory_path() / "svae_test_visuals_gray";
  fs::remove_all(dir);
  model::VaeModel m(testsupport::smoke_config(), 2);
  const auto z = ad::Tensor::constant({1, 8}, std::vector<double>(8, 0.3));
  const auto p = make_panels(m, z, nullptr, 5);
  EXPECT_FALSE(p.has_input);
  const auto files = write_panels(p, true, dir.string(), "s");
  EXPECT_EQ(files.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "s_mean.pgm"));
  const auto again = make_panels(m, z, nullptr, 5);
  EXPECT_EQ(again.sample.data, p.sample.data);
}

TEST(Report, AggregatesAndDeterminism) {
  const auto dir = fs::temp_directory_path() / "svae_test_report";
  fs::create_directories(dir);
  auto cfg = color_config();
  model::VaeModel m(cfg, 2);
  const auto ds = color_dataset(6, 3);
  EvalOptions o;
  o.samples = 10;
  o.seed = 4;
  EXPECT_EQ(EvalOptions{}.samples, 500u);
  const auto r1 = evaluate(m, ds, {0, 2, 4}, o);
  const auto r2 = evaluate(m, ds, {0, 2, 4}, o);
  ASSERT_EQ(r1.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r1.images[i].nll, r2.images[i].nll);
  EXPECT_EQ(r1.images[1].nll, iwae_nll(m, data::to_ycc(ds.records[2].rgb, 2), 10, mix_seed(4, 2)));
  auto copy = r1;
  copy.nll = {};
  finalize(copy);
  EXPECT_EQ(copy.nll.mean, r1.nll.mean);
  EXPECT_NEAR(r1.nll.mean, (r1.images[0].nll + r1.images[1].nll + r1.images[2].nll) / 3.0, 1e-9);

  const auto path = (dir / "report.jsonl").string();
  write_jsonl(path, r1);
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 4u);
  std::ostringstream table;
  write_table(table, r1);
  EXPECT_NE(table.str().find("+-"), std::string::npos);
}
