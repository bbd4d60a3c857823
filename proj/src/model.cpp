#include "svae/model.hpp"

#include <cmath>
#include <string>

#include "svae/ad/ops.hpp"
#include "svae/errors.hpp"
#include "svae/structured/ad_ops.hpp"

namespace svae::model {

namespace {

constexpr double kLeak = 0.2;
constexpr double kHiddenGain = 1.4142135623730951;  // sqrt(2)
constexpr double kHeadGain = 0.1;
constexpr double kInitSigma = 0.1;  // initial output standard deviation, model units

ad::Tensor uniform_param(std::mt19937_64& rng, ad::Shape shape, double fan_in, double gain) {
  const double a = gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor::parameter(std::move(shape), std::move(v));
}

ad::Tensor const_param(ad::Shape shape, double value) {
  const auto n = ad::shape_numel(shape);
  return ad::Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t log2_exact(std::size_t v) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < v) ++k;
  return k;
}

ad::Tensor split_half(const ad::Tensor& t, std::size_t half, bool second) {
  const auto n = t.dim(0);
  auto as_map = ad::reshape(t, {n, 2 * half, 1, 1});
  return ad::reshape(ad::slice_channels(as_map, second ? half : 0, half), {n, half});
}

}  // namespace

Likelihood parse_likelihood(const std::string& name) {
  if (name == "spherical") return Likelihood::Spherical;
  if (name == "diagonal") return Likelihood::Diagonal;
  if (name == "structured") return Likelihood::Structured;
  throw ConfigError("likelihood must be spherical, diagonal or structured, got '" + name + "'");
}

std::string to_string(Likelihood mode) {
  switch (mode) {
    case Likelihood::Spherical: return "spherical";
    case Likelihood::Diagonal: return "diagonal";
    case Likelihood::Structured: return "structured";
  }
  return "structured";
}

ChromaSigma parse_chroma_sigma(const std::string& name) {
  if (name == "scalar") return ChromaSigma::Scalar;
  if (name == "per_pixel") return ChromaSigma::PerPixel;
  throw ConfigError("chroma_sigma must be scalar or per_pixel, got '" + name + "'");
}

std::string to_string(ChromaSigma mode) {
  return mode == ChromaSigma::Scalar ? "scalar" : "per_pixel";
}

std::size_t ModelConfig::effective_chroma_factor() const {
  return chroma_factor == 0 ? color::default_chroma_factor(image_size) : chroma_factor;
}

std::size_t ModelConfig::slot_count() const { return structured::slot_count_for(patch_size); }

void ModelConfig::validate() const {
  if (channels.empty()) throw ConfigError("channels: at least one encoder level is required");
  for (auto c : channels) {
    if (c == 0) throw ConfigError("channels: widths must be positive");
  }
  const std::size_t down = std::size_t{1} << levels();
  if (image_size == 0 || image_size % down != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " must be divisible by 2^" +
                      std::to_string(levels()));
  }
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (dense_units == 0) throw ConfigError("dense_units must be positive");
  if (patch_size == 0 || patch_size % 2 == 0) throw ConfigError("patch_size must be odd");
  if (likelihood == Likelihood::Structured && patch_size < 3) {
    throw ConfigError("patch_size must be at least 3 for the structured likelihood");
  }
  if (dilation == 0) throw ConfigError("dilation must be positive");
  const auto f = effective_chroma_factor();
  if (!is_power_of_two(f) || f > down) {
    throw ConfigError("chroma_factor " + std::to_string(f) + " must be a power of two no larger than 2^" +
                      std::to_string(levels()));
  }
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
}

bool is_cov_param(const std::string& name) { return name.rfind(kCovPrefix, 0) == 0; }

std::size_t cov_branch_size(const ModelConfig& config) {
  const auto c0 = config.channels.front(), k = config.cov_channels();
  std::size_t n = c0 * c0 * 9 + c0 + k * c0 * 9 + k;
  if (config.basis_size > 0) n += config.slot_count() * config.basis_size;
  return n;
}

Batch make_batch(const ModelConfig& config, const std::vector<const color::YccImage*>& images) {
  const auto n = images.size(), s = config.image_size, cs = config.chroma_size();
  const auto f = config.effective_chroma_factor();
  if (n == 0) throw UsageError("make_batch needs at least one image");
  const std::size_t enc_ch = config.grayscale ? 1 : 3;
  std::vector<double> y(n * s * s), c(config.grayscale ? 0 : n * 2 * cs * cs), e(n * enc_ch * s * s);
  const double inv = 1.0 / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& img = *images[i];
    if (img.height != s || img.width != s || (!config.grayscale && img.factor != f)) {
      throw ConfigError("image " + std::to_string(i) + " is " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " with chroma factor " + std::to_string(img.factor) +
                        ", model expects " + std::to_string(s) + "x" + std::to_string(s) +
                        " with factor " + std::to_string(f));
    }
    for (std::size_t p = 0; p < s * s; ++p) {
      y[i * s * s + p] = img.y[p] * inv;
      e[i * enc_ch * s * s + p] = img.y[p] * inv;
    }
    if (config.grayscale) continue;
    for (std::size_t p = 0; p < cs * cs; ++p) {
      c[(i * 2) * cs * cs + p] = img.cb[p] * inv;
      c[(i * 2 + 1) * cs * cs + p] = img.cr[p] * inv;
    }
    const auto cb = color::upsample_plane(img.cb, cs, cs, f);
    const auto cr = color::upsample_plane(img.cr, cs, cs, f);
    for (std::size_t p = 0; p < s * s; ++p) {
      e[(i * 3 + 1) * s * s + p] = cb[p] * inv;
      e[(i * 3 + 2) * s * s + p] = cr[p] * inv;
    }
  }
  Batch b;
  b.size = n;
  b.y = ad::Tensor::constant({n, 1, s, s}, std::move(y));
  if (!config.grayscale) b.chroma = ad::Tensor::constant({n, 2, cs, cs}, std::move(c));
  b.enc_in = ad::Tensor::constant({n, enc_ch, s, s}, std::move(e));
  return b;
}

VaeModel::VaeModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = config_.channels;
  const auto levels = config_.levels();
  const auto s = config_.image_size;
  const auto h0 = s >> levels;
  const auto dz = config_.latent_dim, hidden = config_.dense_units;
  const std::size_t in_ch = config_.grayscale ? 1 : 3;
  const auto flat = ch.back() * h0 * h0;

  std::size_t prev = in_ch;
  for (std::size_t i = 0; i < levels; ++i) {
    const auto tag = "enc.conv" + std::to_string(i);
    params_.add(tag + ".w", uniform_param(rng, {ch[i], prev, 4, 4}, prev * 16.0, kHiddenGain));
    params_.add(tag + ".b", const_param({ch[i]}, 0.0));
    prev = ch[i];
  }
  params_.add("enc.fc1.w", uniform_param(rng, {hidden, flat}, flat, kHiddenGain));
  params_.add("enc.fc1.b", const_param({hidden}, 0.0));
  params_.add("enc.fc2.w", uniform_param(rng, {2 * dz, hidden}, hidden, kHeadGain));
  params_.add("enc.fc2.b", const_param({2 * dz}, 0.0));

  params_.add("dec.fc1.w", uniform_param(rng, {hidden, dz}, dz, kHiddenGain));
  params_.add("dec.fc1.b", const_param({hidden}, 0.0));
  params_.add("dec.fc2.w", uniform_param(rng, {flat, hidden}, hidden, kHiddenGain));
  params_.add("dec.fc2.b", const_param({flat}, 0.0));
  prev = ch.back();
  for (std::size_t i = 0; i < levels; ++i) {
    const auto out = i + 1 < levels ? ch[levels - 2 - i] : ch.front();
    const auto tag = "dec.up" + std::to_string(i);
    // A stride-2 4x4 transposed convolution feeds each output from 2x2 taps
    // per input channel.
    params_.add(tag + ".w", uniform_param(rng, {prev, out, 4, 4}, prev * 4.0, kHiddenGain));
    params_.add(tag + ".b", const_param({out}, 0.0));
    prev = out;
  }
  const auto c0 = ch.front();
  params_.add("head.y_mu.w", uniform_param(rng, {1, c0, 3, 3}, c0 * 9.0, kHeadGain));
  params_.add("head.y_mu.b", const_param({1}, 0.5));
  params_.add("head.y_sigma.w", uniform_param(rng, {1, c0, 3, 3}, c0 * 9.0, kHeadGain));
  params_.add("head.y_sigma.b", const_param({1}, std::log(kInitSigma)));
  if (!config_.grayscale) {
    const auto j = log2_exact(config_.effective_chroma_factor());
    const auto cc = j == levels ? ch.back() : (j == 0 ? c0 : ch[j - 1]);
    params_.add("head.c_mu.w", uniform_param(rng, {2, cc, 3, 3}, cc * 9.0, kHeadGain));
    params_.add("head.c_mu.b", const_param({2}, 128.0 / 255.0));
    params_.add("head.c_sigma.w", uniform_param(rng, {2, cc, 3, 3}, cc * 9.0, kHeadGain));
    params_.add("head.c_sigma.b", const_param({2}, std::log(kInitSigma)));
  }

  pattern_ = std::make_shared<const structured::SparsityPattern>(
      structured::SparsityPattern::build(s, s, config_.patch_size, config_.dilation));
  if (config_.likelihood == Likelihood::Structured) {
    const auto k = config_.slot_count(), kc = config_.cov_channels();
    params_.add("cov.conv1.w", uniform_param(rng, {c0, c0, 3, 3}, c0 * 9.0, kHiddenGain));
    params_.add("cov.conv1.b", const_param({c0}, 0.0));
    params_.add("cov.conv2.w", uniform_param(rng, {kc, c0, 3, 3}, c0 * 9.0, kHeadGain));
    std::vector<double> bias(kc, 0.0);
    bias[0] = -std::log(kInitSigma);  // L_pp = 1 / sigma
    params_.add("cov.conv2.b", ad::Tensor::parameter({kc}, bias));
    if (config_.basis_size > 0) {
      // Identity-like start: basis vector b feeds slot b.
      std::uniform_real_distribution<double> u(-0.01, 0.01);
      std::vector<double> basis(k * kc);
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < kc; ++c) basis[r * kc + c] = (r == c ? 1.0 : 0.0) + u(rng);
      }
      params_.add("cov.basis", ad::Tensor::parameter({k, kc}, std::move(basis)));
    }
  }
}

LatentGaussian VaeModel::encode(const ad::Tensor& enc_in) const {
  const std::size_t in_ch = config_.grayscale ? 1 : 3;
  const auto s = config_.image_size;
  if (enc_in.rank() != 4 || enc_in.dim(1) != in_ch || enc_in.dim(2) != s || enc_in.dim(3) != s) {
    throw ConfigError("encoder input " + ad::shape_string(enc_in.shape()) + " does not match [N," +
                      std::to_string(in_ch) + "," + std::to_string(s) + "," + std::to_string(s) + "]");
  }
  auto h = enc_in;
  for (std::size_t i = 0; i < config_.levels(); ++i) {
    const auto tag = "enc.conv" + std::to_string(i);
    h = ad::leaky_relu(ad::conv2d(h, p(tag + ".w"), p(tag + ".b"), 2, 1), kLeak);
  }
  const auto n = h.dim(0);
  h = ad::reshape(h, {n, h.numel() / n});
  h = ad::leaky_relu(ad::linear(h, p("enc.fc1.w"), p("enc.fc1.b")), kLeak);
  auto out = ad::linear(h, p("enc.fc2.w"), p("enc.fc2.b"));
  const auto dz = config_.latent_dim;
  return {split_half(out, dz, false), split_half(out, dz, true)};
}

DecoderOutput VaeModel::decode(const ad::Tensor& z, Likelihood mode) const {
  if (z.rank() != 2 || z.dim(1) != config_.latent_dim) {
    throw ConfigError("latent " + ad::shape_string(z.shape()) + " does not match d_z = " +
                      std::to_string(config_.latent_dim));
  }
  if (mode == Likelihood::Structured && config_.likelihood != Likelihood::Structured) {
    throw ConfigError("structured likelihood requested from a model without a covariance branch");
  }
  const auto n = z.dim(0), levels = config_.levels();
  const auto s = config_.image_size, h0 = s >> levels;

  auto h = ad::leaky_relu(ad::linear(z, p("dec.fc1.w"), p("dec.fc1.b")), kLeak);
  h = ad::leaky_relu(ad::linear(h, p("dec.fc2.w"), p("dec.fc2.b")), kLeak);
  h = ad::reshape(h, {n, config_.channels.back(), h0, h0});
  // maps[i] has resolution h0 * 2^i.
  std::vector<ad::Tensor> maps{h};
  for (std::size_t i = 0; i < levels; ++i) {
    const auto tag = "dec.up" + std::to_string(i);
    h = ad::leaky_relu(ad::conv_transpose2d(h, p(tag + ".w"), p(tag + ".b"), 2, 1), kLeak);
    maps.push_back(h);
  }
  const auto& top = maps.back();

  DecoderOutput out;
  out.mu_y = ad::conv2d(top, p("head.y_mu.w"), p("head.y_mu.b"), 1, 1);
  auto ls_y = ad::conv2d(top, p("head.y_sigma.w"), p("head.y_sigma.b"), 1, 1);
  if (mode == Likelihood::Spherical) ls_y = ad::broadcast_spatial(ad::mean_spatial(ls_y), s, s);
  out.log_sigma_y = ls_y;

  if (!config_.grayscale) {
    const auto j = log2_exact(config_.effective_chroma_factor());
    const auto& cmap = maps[levels - j];
    const auto cs = config_.chroma_size();
    out.mu_c = ad::conv2d(cmap, p("head.c_mu.w"), p("head.c_mu.b"), 1, 1);
    auto ls_c = ad::conv2d(cmap, p("head.c_sigma.w"), p("head.c_sigma.b"), 1, 1);
    if (mode == Likelihood::Spherical || config_.chroma_sigma == ChromaSigma::Scalar) {
      ls_c = ad::broadcast_spatial(ad::mean_spatial(ls_c), cs, cs);
    }
    out.log_sigma_c = ls_c;
  }

  if (mode == Likelihood::Structured) {
    auto c = ad::leaky_relu(ad::conv2d(top, p("cov.conv1.w"), p("cov.conv1.b"), 1, 1), kLeak);
    out.cov_weights = ad::conv2d(c, p("cov.conv2.w"), p("cov.conv2.b"), 1, 1);
    out.cov_field = config_.basis_size > 0
                        ? structured::basis_expand(p("cov.basis"), out.cov_weights)
                        : out.cov_weights;
  }
  return out;
}

ad::Tensor reparameterize(const LatentGaussian& q, const ad::Tensor& nu) {
  return ad::add(q.rho, ad::mul(ad::exp(q.log_omega), nu));
}

ad::Tensor reparameterize(const LatentGaussian& q, std::mt19937_64& rng) {
  std::vector<double> nu(q.rho.numel());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : nu) v = normal(rng);
  return reparameterize(q, ad::Tensor::constant(q.rho.shape(), std::move(nu)));
}

ad::Tensor kl_divergence(const LatentGaussian& q) {
  // omega^2 + rho^2 - 1 - 2 log omega
  auto terms = ad::add(ad::exp(ad::scale(q.log_omega, 2.0)), ad::square(q.rho));
  terms = ad::sub(ad::add_scalar(terms, -1.0), ad::scale(q.log_omega, 2.0));
  return ad::scale(ad::sum_per_sample(terms), 0.5);
}

ad::Tensor likelihood_term(const VaeModel& model, const DecoderOutput& out, const Batch& batch,
                           Likelihood mode) {
  ad::Tensor ll = mode == Likelihood::Structured
                      ? structured::structured_log_prob(model.pattern(), out.cov_field, out.mu_y, batch.y)
                      : ad::diag_gaussian_log_prob(out.mu_y, out.log_sigma_y, batch.y);
  if (!model.config().grayscale) {
    ll = ad::add(ll, ad::diag_gaussian_log_prob(out.mu_c, out.log_sigma_c, batch.chroma));
  }
  return ll;
}

LossTerms loss(const VaeModel& model, const Batch& batch, std::uint64_t seed, Likelihood mode,
               const LossOptions& options) {
  const auto& cfg = model.config();
  const double beta = options.beta.value_or(cfg.beta);
  const double alpha = options.alpha.value_or(cfg.alpha);
  const double gamma = options.gamma.value_or(cfg.gamma);

  const auto q = model.encode(batch.enc_in);
  std::mt19937_64 rng(seed);
  const auto z = reparameterize(q, rng);
  auto out = model.decode(z, mode);
  if (options.mu_y_override) out.mu_y = *options.mu_y_override;

  const auto ll = likelihood_term(model, out, batch, mode);
  const auto kl = kl_divergence(q);
  auto sq = ad::sum_per_sample(ad::square(ad::sub(batch.y, out.mu_y)));
  if (!cfg.grayscale) sq = ad::add(sq, ad::sum_per_sample(ad::square(ad::sub(batch.chroma, out.mu_c))));

  auto per_image = ad::add(ad::scale(ll, -1.0), ad::scale(kl, beta));
  per_image = ad::add(per_image, ad::scale(sq, alpha));
  ad::Tensor l1;
  if (mode == Likelihood::Structured) {
    l1 = structured::offdiag_abs_sum(model.pattern(), out.cov_field);
    per_image = ad::add(per_image, ad::scale(l1, gamma));
  }

  LossTerms terms;
  terms.total = ad::mean(per_image);
  const double n = static_cast<double>(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) {
    terms.nll -= ll.values()[i] / n;
    terms.kl += kl.values()[i] / n;
    terms.alpha_term += alpha * sq.values()[i] / n;
    if (l1.defined()) terms.gamma_term += gamma * l1.values()[i] / n;
  }
  return terms;
}

}  // namespace svae::model
