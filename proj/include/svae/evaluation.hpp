#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "svae/color.hpp"
#include "svae/data.hpp"
#include "svae/model.hpp"
#include "svae/structured/gaussian.hpp"

namespace svae::eval {

inline constexpr std::size_t kDefaultImportanceSamples = 500;

/// log((1/K) sum_k exp(log_w[k])) with max subtraction. NumericFault when
/// every weight is -inf or any is NaN / +inf.
double log_mean_exp(std::span<const double> log_w);

/// log w_k = log p(x|z_k) + log p(z_k) - log q(z_k|x) for K posterior draws.
/// The noise nu is drawn as K x d_z standard normals, row-major, from
/// mt19937_64(seed), so K = 1 shares z with model::loss at the same seed.
std::vector<double> importance_log_weights(const model::VaeModel& model, const color::YccImage& x,
                                           std::size_t K, std::uint64_t seed,
                                           model::Likelihood mode);
/// -log_mean_exp(importance_log_weights(...)), nats per image in model units.
double iwae_nll(const model::VaeModel& model, const color::YccImage& x, std::size_t K,
                std::uint64_t seed, model::Likelihood mode);
inline double iwae_nll(const model::VaeModel& model, const color::YccImage& x, std::size_t K,
                       std::uint64_t seed) {
  return iwae_nll(model, x, K, seed, model.config().likelihood);
}

/// Closed-form KL of q(z|x) to N(0, I), one value per image.
std::vector<double> kl_values(const model::VaeModel& model, const std::vector<const color::YccImage*>& images);
double kl_metric(const model::VaeModel& model, const std::vector<const color::YccImage*>& images);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
  double se = 0.0;   // sample std / sqrt(n)
};
MeanStd summarize(std::span<const double> values);

/// Mean over pixels and channels of (a - b)^2, both in [0, 255].
double rgb_mse(const color::RgbImage& a, const color::RgbImage& b);

/// RGB of a model-unit Y plane and (subsampled) chroma planes: scaled to
/// [0, 255], chroma upsampled, inverted and clamped. Grayscale copies Y.
color::RgbImage to_rgb(const model::ModelConfig& config, std::span<const double> y_model,
                       std::span<const double> cb_model, std::span<const double> cr_model);

/// Per-image reconstruction error with z at the posterior mean and eps = 0.
std::vector<double> mse_values(const model::VaeModel& model, const std::vector<const color::YccImage*>& images,
                               const std::vector<const color::RgbImage*>& targets);
MeanStd mse_metric(const model::VaeModel& model, const std::vector<const color::YccImage*>& images,
                   const std::vector<const color::RgbImage*>& targets);

/// Display mapping of luma noise: 128 + 2 eps, clamped to [0, 255].
std::vector<double> render_noise(std::span<const double> eps);
/// Zero-mean draw from the precision factor (units of the factor).
std::vector<double> sample_noise(const structured::PackedCholesky& factor, std::uint64_t seed);

struct Panels {
  bool has_input = false;
  color::RgbImage input;     // x
  color::RgbImage mean;      // mu, eps = 0
  std::vector<double> eps_y; // luma noise sample, [0, 255] units
  color::RgbImage sample;    // mu + eps, clamped
  color::RgbImage residual;  // x - mu, unclamped
};

/// Decodes latent row `z` ([1, d_z]) and draws eps from mt19937_64(seed).
/// `input` may be null (prior samples).
Panels make_panels(const model::VaeModel& model, const ad::Tensor& z, const color::RgbImage* input,
                   std::uint64_t seed);
/// Reconstruction panels: z is the posterior mean of `x`.
Panels reconstruct(const model::VaeModel& model, const color::YccImage& x, const color::RgbImage& input,
                   std::uint64_t seed);

/// Writes <stem>_input, <stem>_mean, <stem>_eps, <stem>_sample and
/// <stem>_residual (128 + x - mu, clamped). Colour panels are .ppm, grayscale
/// and eps panels .pgm. Input and residual only when the panels have an input.
/// Returns the written paths.
std::vector<std::string> write_panels(const Panels& panels, bool grayscale, const std::string& out_dir,
                                      const std::string& stem);
std::vector<std::string> emit_visuals(const model::VaeModel& model, const color::YccImage& x,
                                      const color::RgbImage& input, std::uint64_t seed,
                                      const std::string& out_dir, const std::string& stem);

struct ImageRecord {
  std::size_t index = 0;
  std::string name;
  double nll = 0.0;
  double kl = 0.0;
  double mse = 0.0;
};

struct EvalReport {
  std::string likelihood;
  std::size_t samples = 0;  // K
  std::uint64_t seed = 0;
  std::vector<ImageRecord> images;
  MeanStd nll, mse;
  double kl = 0.0;
};

struct EvalOptions {
  std::size_t samples = kDefaultImportanceSamples;
  std::uint64_t seed = 1;
};

/// NLL bound per image uses seed mix_seed(options.seed, index).
EvalReport evaluate(const model::VaeModel& model, const data::Dataset& dataset,
                    const std::vector<std::size_t>& indices, const EvalOptions& options);
/// Recomputes the aggregates from the per-image records.
void finalize(EvalReport& report);

void write_table(std::ostream& out, const EvalReport& report);
/// One JSON object per image, then one summary object with "summary": true.
void write_jsonl(const std::string& path, const EvalReport& report);

}  // namespace svae::eval
