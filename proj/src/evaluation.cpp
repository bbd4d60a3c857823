#include "svae/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>

#include "svae/ad/ops.hpp"
#include "svae/errors.hpp"
#include "svae/rng.hpp"

namespace svae::eval {

namespace fs = std::filesystem;
using model::Likelihood;

namespace {

constexpr std::size_t kChunk = 50;
constexpr std::size_t kBatch = 64;

ad::Tensor repeat_rows(std::span<const double> row, std::size_t k) {
  std::vector<double> v;
  v.reserve(row.size() * k);
  for (std::size_t i = 0; i < k; ++i) v.insert(v.end(), row.begin(), row.end());
  return ad::Tensor::constant({k, row.size()}, std::move(v));
}

std::vector<double> scaled(std::span<const double> v, double s) {
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x *= s;
  return out;
}

double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

template <class F>
void for_batches(std::size_t n, F&& f) {
  for (std::size_t b = 0; b < n; b += kBatch) f(b, std::min(n, b + kBatch));
}

std::vector<const color::YccImage*> slice(const std::vector<const color::YccImage*>& v, std::size_t b,
                                          std::size_t e) {
  return {v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e)};
}

}  // namespace

double log_mean_exp(std::span<const double> log_w) {
  if (log_w.empty()) throw UsageError("log_mean_exp of an empty set");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_w) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericFault("importance weight is not finite");
    }
    m = std::max(m, v);
  }
  if (m == -std::numeric_limits<double>::infinity()) throw NumericFault("all importance weights are zero");
  double s = 0.0;
  for (double v : log_w) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(log_w.size()));
}

std::vector<double> importance_log_weights(const model::VaeModel& model, const color::YccImage& x,
                                           std::size_t K, std::uint64_t seed, Likelihood mode) {
  if (K == 0) throw ConfigError("importance sample count K must be at least 1");
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  const auto dz = cfg.latent_dim;
  const auto q = model.encode(model::make_batch(cfg, {&x}).enc_in);
  const auto rho = q.rho.values();
  const auto log_omega = q.log_omega.values();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> nu(K * dz);
  for (auto& v : nu) v = normal(rng);

  // log p(z) - log q(z|x) = sum_j (-z_j^2 + nu_j^2) / 2 + log omega_j
  std::vector<double> log_w(K);
  for (std::size_t begin = 0; begin < K; begin += kChunk) {
    const auto k = std::min(K, begin + kChunk) - begin;
    std::vector<double> z(k * dz);
    for (std::size_t i = 0; i < k; ++i) {
      double prior = 0.0;
      for (std::size_t j = 0; j < dz; ++j) {
        const double n = nu[(begin + i) * dz + j];
        const double zz = rho[j] + std::exp(log_omega[j]) * n;
        z[i * dz + j] = zz;
        prior += 0.5 * (n * n - zz * zz) + log_omega[j];
      }
      log_w[begin + i] = prior;
    }
    // Same expression as in model::reparameterize, so K = 1 is bitwise the loss draw.
    const auto zt = ad::add(repeat_rows(rho, k),
                            ad::mul(ad::exp(repeat_rows(log_omega, k)), ad::Tensor::constant({k, dz}, std::vector<double>(
                                                                            nu.begin() + begin * dz,
                                                                            nu.begin() + (begin + k) * dz))));
    const auto out = model.decode(zt, mode);
    const auto batch = model::make_batch(cfg, std::vector<const color::YccImage*>(k, &x));
    const auto ll = model::likelihood_term(model, out, batch, mode);
    for (std::size_t i = 0; i < k; ++i) log_w[begin + i] += ll.values()[i];
  }
  return log_w;
}

double iwae_nll(const model::VaeModel& model, const color::YccImage& x, std::size_t K, std::uint64_t seed,
                Likelihood mode) {
  const auto w = importance_log_weights(model, x, K, seed, mode);
  return -log_mean_exp(w);
}

std::vector<double> kl_values(const model::VaeModel& model, const std::vector<const color::YccImage*>& images) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  for_batches(images.size(), [&](std::size_t b, std::size_t e) {
    const auto q = model.encode(model::make_batch(model.config(), slice(images, b, e)).enc_in);
    const auto kl = model::kl_divergence(q);
    out.insert(out.end(), kl.values().begin(), kl.values().end());
  });
  return out;
}

double kl_metric(const model::VaeModel& model, const std::vector<const color::YccImage*>& images) {
  const auto v = kl_values(model, images);
  return summarize(v).mean;
}

MeanStd summarize(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  for (double v : values) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / n);
  r.se = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  return r;
}

double rgb_mse(const color::RgbImage& a, const color::RgbImage& b) {
  if (a.height != b.height || a.width != b.width) throw UsageError("rgb_mse: image sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

color::RgbImage to_rgb(const model::ModelConfig& config, std::span<const double> y_model,
                       std::span<const double> cb_model, std::span<const double> cr_model) {
  const auto s = config.image_size;
  if (config.grayscale) {
    color::RgbImage out(s, s);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < s * s; ++p) out.data[c * s * s + p] = clamp255(255.0 * y_model[p]);
    }
    return out;
  }
  const auto f = config.effective_chroma_factor();
  color::YccImage ycc;
  ycc.height = ycc.width = s;
  ycc.factor = f;
  ycc.y = scaled(y_model, 255.0);
  ycc.cb = scaled(cb_model, 255.0);
  ycc.cr = scaled(cr_model, 255.0);
  return color::ycbcr_to_rgb(color::upsample_chroma(ycc, f));
}

namespace {

// Posterior-mean decode of images [b, e) with the configured likelihood.
template <class F>
void decode_means(const model::VaeModel& model, const std::vector<const color::YccImage*>& images, F&& f) {
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  const auto s = cfg.image_size, cs = cfg.chroma_size();
  for_batches(images.size(), [&](std::size_t b, std::size_t e) {
    const auto q = model.encode(model::make_batch(cfg, slice(images, b, e)).enc_in);
    const auto out = model.decode(q.rho, cfg.likelihood);
    const auto my = out.mu_y.values();
    std::span<const double> mc;
    if (!cfg.grayscale) mc = out.mu_c.values();
    for (std::size_t i = 0; i < e - b; ++i) {
      const auto y = my.subspan(i * s * s, s * s);
      std::span<const double> cb, cr;
      if (!cfg.grayscale) {
        cb = mc.subspan((2 * i) * cs * cs, cs * cs);
        cr = mc.subspan((2 * i + 1) * cs * cs, cs * cs);
      }
      f(b + i, to_rgb(cfg, y, cb, cr));
    }
  });
}

}  // namespace

std::vector<double> mse_values(const model::VaeModel& model, const std::vector<const color::YccImage*>& images,
                               const std::vector<const color::RgbImage*>& targets) {
  if (images.size() != targets.size()) throw UsageError("mse_values: images and targets differ in count");
  std::vector<double> out(images.size());
  decode_means(model, images, [&](std::size_t i, const color::RgbImage& mu) { out[i] = rgb_mse(*targets[i], mu); });
  return out;
}

MeanStd mse_metric(const model::VaeModel& model, const std::vector<const color::YccImage*>& images,
                   const std::vector<const color::RgbImage*>& targets) {
  const auto v = mse_values(model, images, targets);
  return summarize(v);
}

std::vector<double> render_noise(std::span<const double> eps) {
  std::vector<double> out(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) out[i] = clamp255(128.0 + 2.0 * eps[i]);
  return out;
}

std::vector<double> sample_noise(const structured::PackedCholesky& factor, std::uint64_t seed) {
  const std::vector<double> zero(factor.pattern().pixel_count(), 0.0);
  return structured::sample(factor, zero, seed);
}

Panels make_panels(const model::VaeModel& model, const ad::Tensor& z, const color::RgbImage* input,
                   std::uint64_t seed) {
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  if (z.rank() != 2 || z.dim(0) != 1 || z.dim(1) != cfg.latent_dim) {
    throw UsageError("make_panels expects z of shape [1, latent_dim]");
  }
  const auto s = cfg.image_size, cs = cfg.chroma_size(), n = s * s;
  const auto out = model.decode(z, cfg.likelihood);
  const auto my = out.mu_y.values();
  std::vector<double> cb, cr;
  if (!cfg.grayscale) {
    const auto mc = out.mu_c.values();
    cb.assign(mc.begin(), mc.begin() + cs * cs);
    cr.assign(mc.begin() + cs * cs, mc.begin() + 2 * cs * cs);
  }

  Panels p;
  p.mean = to_rgb(cfg, my, cb, cr);

  std::mt19937_64 rng(seed);
  std::vector<double> eps(n);
  if (cfg.likelihood == Likelihood::Structured) {
    const auto field = out.cov_field.values();
    const auto factor = structured::PackedCholesky::from_slot_field(model.pattern_ptr(), field);
    const std::vector<double> zero(n, 0.0);
    eps = structured::sample(factor, zero, rng);
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto ls = out.log_sigma_y.values();
    for (std::size_t i = 0; i < n; ++i) eps[i] = std::exp(ls[i]) * normal(rng);
  }
  std::vector<double> ys(my.begin(), my.end());
  for (std::size_t i = 0; i < n; ++i) ys[i] += eps[i];
  if (!cfg.grayscale) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto ls = out.log_sigma_c.values();
    for (std::size_t i = 0; i < cs * cs; ++i) cb[i] += std::exp(ls[i]) * normal(rng);
    for (std::size_t i = 0; i < cs * cs; ++i) cr[i] += std::exp(ls[cs * cs + i]) * normal(rng);
  }
  p.eps_y = scaled(eps, 255.0);
  p.sample = to_rgb(cfg, ys, cb, cr);

  if (input != nullptr) {
    p.has_input = true;
    p.input = *input;
    p.residual = *input;
    for (std::size_t i = 0; i < p.residual.data.size(); ++i) p.residual.data[i] -= p.mean.data[i];
  }
  return p;
}

Panels reconstruct(const model::VaeModel& model, const color::YccImage& x, const color::RgbImage& input,
                   std::uint64_t seed) {
  ad::Tensor rho;
  {
    ad::NoGradGuard guard;
    rho = model.encode(model::make_batch(model.config(), {&x}).enc_in).rho;
  }
  return make_panels(model, rho, &input, seed);
}

std::vector<std::string> write_panels(const Panels& panels, bool grayscale, const std::string& out_dir,
                                      const std::string& stem) {
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  const auto base = (fs::path(out_dir) / stem).string();
  const auto put = [&](const std::string& suffix, const color::RgbImage& img) {
    if (grayscale) {
      const auto path = base + suffix + ".pgm";
      data::write_pgm(path, std::vector<double>(img.data.begin(), img.data.begin() + img.pixels()), img.height,
                      img.width);
      written.push_back(path);
    } else {
      const auto path = base + suffix + ".ppm";
      data::write_ppm(path, img);
      written.push_back(path);
    }
  };
  if (panels.has_input) put("_input", panels.input);
  put("_mean", panels.mean);
  const auto eps_path = base + "_eps.pgm";
  data::write_pgm(eps_path, render_noise(panels.eps_y), panels.mean.height, panels.mean.width);
  written.push_back(eps_path);
  put("_sample", panels.sample);
  if (panels.has_input) {
    auto shown = panels.residual;
    for (auto& v : shown.data) v = clamp255(128.0 + v);
    put("_residual", shown);
  }
  return written;
}

std::vector<std::string> emit_visuals(const model::VaeModel& model, const color::YccImage& x,
                                      const color::RgbImage& input, std::uint64_t seed,
                                      const std::string& out_dir, const std::string& stem) {
  return write_panels(reconstruct(model, x, input, seed), model.config().grayscale, out_dir, stem);
}

EvalReport evaluate(const model::VaeModel& model, const data::Dataset& dataset,
                    const std::vector<std::size_t>& indices, const EvalOptions& options) {
  const auto& cfg = model.config();
  std::vector<color::YccImage> ycc;
  ycc.reserve(indices.size());
  for (auto i : indices) ycc.push_back(data::to_ycc(dataset.records.at(i).rgb, cfg.effective_chroma_factor()));
  std::vector<const color::YccImage*> ptrs;
  std::vector<const color::RgbImage*> targets;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    ptrs.push_back(&ycc[i]);
    targets.push_back(&dataset.records[indices[i]].rgb);
  }
  const auto kl = kl_values(model, ptrs);
  const auto mse = mse_values(model, ptrs, targets);

  EvalReport r;
  r.likelihood = model::to_string(cfg.likelihood);
  r.samples = options.samples;
  r.seed = options.seed;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    ImageRecord rec;
    rec.index = indices[i];
    rec.name = dataset.records[indices[i]].name;
    rec.nll = iwae_nll(model, ycc[i], options.samples, mix_seed(options.seed, indices[i]));
    rec.kl = kl[i];
    rec.mse = mse[i];
    r.images.push_back(std::move(rec));
  }
  finalize(r);
  return r;
}

void finalize(EvalReport& report) {
  std::vector<double> nll, kl, mse;
  for (const auto& i : report.images) {
    nll.push_back(i.nll);
    kl.push_back(i.kl);
    mse.push_back(i.mse);
  }
  report.nll = summarize(nll);
  report.mse = summarize(mse);
  report.kl = summarize(kl).mean;
}

void write_table(std::ostream& out, const EvalReport& r) {
  const auto flags = out.flags();
  out << "likelihood   " << r.likelihood << "\n"
      << "images       " << r.images.size() << "\n"
      << "K            " << r.samples << "\n"
      << std::fixed << std::setprecision(3) << "NLL (nats)   " << r.nll.mean << " +- " << r.nll.std
      << "  (se " << r.nll.se << ")\n"
      << "KL           " << r.kl << "\n"
      << "MSE          " << r.mse.mean << " +- " << r.mse.std << "\n";
  out.flags(flags);
}

void write_jsonl(const std::string& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write report '" + path + "'");
  for (const auto& i : r.images) {
    nlohmann::json j{{"index", i.index}, {"name", i.name}, {"nll", i.nll}, {"kl", i.kl}, {"mse", i.mse}};
    out << j.dump() << "\n";
  }
  nlohmann::json s{{"summary", true},      {"likelihood", r.likelihood}, {"K", r.samples},
                   {"seed", r.seed},       {"images", r.images.size()},  {"nll_mean", r.nll.mean},
                   {"nll_std", r.nll.std}, {"nll_se", r.nll.se},         {"kl_mean", r.kl},
                   {"mse_mean", r.mse.mean}, {"mse_std", r.mse.std}};
  out << s.dump() << "\n";
  if (!out) throw ConfigError("failed writing report '" + path + "'");
}

}  // namespace svae::eval
