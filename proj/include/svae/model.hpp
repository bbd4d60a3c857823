#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "svae/ad/param_store.hpp"
#include "svae/ad/tensor.hpp"
#include "svae/color.hpp"
#include "svae/structured/pattern.hpp"

namespace svae::model {

enum class Likelihood { Spherical, Diagonal, Structured };
Likelihood parse_likelihood(const std::string& name);
std::string to_string(Likelihood mode);

enum class ChromaSigma { Scalar, PerPixel };
ChromaSigma parse_chroma_sigma(const std::string& name);
std::string to_string(ChromaSigma mode);

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t latent_dim = 64;
  // Output channels of the stride-2 encoder convolutions; the decoder
  // mirrors them. image_size must be divisible by 2^levels.
  std::vector<std::size_t> channels{32, 64, 128, 256};
  std::size_t dense_units = 256;
  std::size_t patch_size = 3;
  std::size_t dilation = 1;
  std::size_t basis_size = 0;  // 0 = direct coefficients
  Likelihood likelihood = Likelihood::Structured;
  ChromaSigma chroma_sigma = ChromaSigma::Scalar;
  bool grayscale = false;
  std::size_t chroma_factor = 0;  // 0 = color::default_chroma_factor(image_size)
  double beta = 1.0;
  double alpha = 10.0;
  double gamma = 0.001;

  std::size_t levels() const { return channels.size(); }
  std::size_t effective_chroma_factor() const;
  std::size_t chroma_size() const { return image_size / effective_chroma_factor(); }
  /// Slots per pixel of the precision factor.
  std::size_t slot_count() const;
  /// Channels produced by the covariance branch (slots or basis weights).
  std::size_t cov_channels() const { return basis_size > 0 ? basis_size : slot_count(); }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Parameter-name prefix of the covariance branch.
inline constexpr const char* kCovPrefix = "cov.";
bool is_cov_param(const std::string& name);

/// Number of parameters in the covariance branch for `config`:
/// conv3x3 C0->C0 with bias, conv3x3 C0->cov_channels with bias, plus the
/// slot_count x basis_size basis when enabled.
std::size_t cov_branch_size(const ModelConfig& config);

/// One minibatch in model units (pixel values / 255).
struct Batch {
  std::size_t size = 0;
  ad::Tensor y;         // [N,1,S,S]
  ad::Tensor chroma;    // [N,2,s,s]; undefined for grayscale
  ad::Tensor enc_in;    // [N,1 or 3,S,S]: Y and full-resolution chroma
};

/// Images must be at the configured size and chroma factor.
Batch make_batch(const ModelConfig& config, const std::vector<const color::YccImage*>& images);

struct LatentGaussian {
  ad::Tensor rho;        // [N,d_z]
  ad::Tensor log_omega;  // [N,d_z]; omega = exp(log_omega)
};

struct DecoderOutput {
  ad::Tensor mu_y;         // [N,1,S,S]
  ad::Tensor log_sigma_y;  // [N,1,S,S] (spatially constant for spherical)
  ad::Tensor mu_c;         // [N,2,s,s]
  ad::Tensor log_sigma_c;  // [N,2,s,s]
  ad::Tensor cov_weights;  // [N,cov_channels,S,S] branch output (W, or the slots)
  ad::Tensor cov_field;    // [N,K,S,S] slot field of L; slot 0 = log L_pp
};

class VaeModel {
 public:
  /// Builds and initializes parameters (fan-in scaled uniform) from `seed`.
  /// The covariance branch exists only for structured models.
  VaeModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const structured::SparsityPattern& pattern() const { return *pattern_; }
  std::shared_ptr<const structured::SparsityPattern> pattern_ptr() const { return pattern_; }

  LatentGaussian encode(const ad::Tensor& enc_in) const;
  /// `mode` selects which Y variance head is shaped (spherical/diagonal);
  /// the covariance branch runs when mode is structured.
  DecoderOutput decode(const ad::Tensor& z, Likelihood mode) const;

 private:
  ad::Tensor p(const std::string& name) const { return params_.at(name); }

  ModelConfig config_;
  ad::ParamStore params_;
  std::shared_ptr<const structured::SparsityPattern> pattern_;
};

/// z = rho + omega * nu with nu ~ N(0, I) drawn from `rng` in row-major order.
ad::Tensor reparameterize(const LatentGaussian& q, std::mt19937_64& rng);
/// Same with given noise [N,d_z].
ad::Tensor reparameterize(const LatentGaussian& q, const ad::Tensor& nu);

/// 0.5 * sum_j (omega_j^2 + rho_j^2 - 1 - log omega_j^2), per image [N].
ad::Tensor kl_divergence(const LatentGaussian& q);

/// log p(x | z) per image [N]: Y term per `mode` plus independent chroma
/// terms (skipped for grayscale).
ad::Tensor likelihood_term(const VaeModel& model, const DecoderOutput& out, const Batch& batch,
                           Likelihood mode);

struct LossOptions {
  /// Replaces the decoded Y mean (e.g. by the known mean of synthetic data).
  std::optional<ad::Tensor> mu_y_override;
  /// Overrides config beta / alpha / gamma when set.
  std::optional<double> beta, alpha, gamma;
};

struct LossTerms {
  ad::Tensor total;  // scalar, batch mean
  double nll = 0.0;      // -log p(x|z), batch mean
  double kl = 0.0;       // batch mean
  double alpha_term = 0.0;
  double gamma_term = 0.0;
};

/// -log p(x|z) + beta KL + alpha |x - mu|^2 (all channels) + gamma sum |L_ij|
/// (off-diagonal), averaged over the batch, with one reparameterized sample
/// drawn from mt19937_64(seed).
LossTerms loss(const VaeModel& model, const Batch& batch, std::uint64_t seed, Likelihood mode,
               const LossOptions& options = {});

}  // namespace svae::model
