#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "svae/structured/pattern.hpp"

namespace svae::structured {

/// Non-zero coefficients of a sparse lower-triangular factor L, laid out
/// like the pattern's row lists. Entries on the diagonal hold log(L_pp), so
/// the materialized diagonal is positive by construction.
class PackedCholesky {
 public:
  /// Throws ConfigError on a size mismatch and NumericFault when a
  /// materialized diagonal is not a finite positive number.
  PackedCholesky(std::shared_ptr<const SparsityPattern> pattern, std::vector<double> coeffs);

  static PackedCholesky identity(std::shared_ptr<const SparsityPattern> pattern);
  /// `field` is slot-major, field[s * n_p + p]; slot 0 carries log(L_pp).
  /// Values of slots that fall outside the image are ignored.
  static PackedCholesky from_slot_field(std::shared_ptr<const SparsityPattern> pattern,
                                        std::span<const double> field);
  /// Inverse of from_slot_field; dropped slots read as 0.
  std::vector<double> to_slot_field() const;

  const SparsityPattern& pattern() const { return *pattern_; }
  const std::shared_ptr<const SparsityPattern>& pattern_ptr() const { return pattern_; }
  std::size_t pixel_count() const { return pattern_->pixel_count(); }

  /// Stored coefficients (log on the diagonal).
  std::span<const double> coeffs() const { return coeffs_; }
  /// Materialized value of stored entry k.
  double value(std::size_t k) const;
  double diagonal(std::size_t p) const;
  double log_diagonal(std::size_t p) const;

  /// y = L^T v, a scatter over the row lists.
  std::vector<double> multiply_transpose(std::span<const double> v) const;
  /// y = L v.
  std::vector<double> multiply(std::span<const double> v) const;
  /// Solves L^T e = v by back-substitution in reverse raster order.
  std::vector<double> solve_transpose(std::span<const double> v) const;

 private:
  std::shared_ptr<const SparsityPattern> pattern_;
  std::vector<double> coeffs_;
};

/// B of L = s(B W): rows follow the slot order (row 0 feeds the diagonal),
/// one column per basis vector. Row-major.
struct BasisMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  static BasisMatrix identity(std::size_t n);
};

/// W of L = s(B W): one weight column per pixel, row-major n_b x n_p.
struct WeightField {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// L = s(B W) with the exponential positivity map on row 0 of B W.
/// Throws ConfigError on shape mismatch, NumericFault (naming the pixel)
/// when a materialized diagonal is not finite and positive.
PackedCholesky expand_basis(const BasisMatrix& basis, const WeightField& weights,
                            std::shared_ptr<const SparsityPattern> pattern);

/// log|Lambda| = 2 sum_p log L_pp.
double log_det_precision(const PackedCholesky& factor);
/// log|Sigma| = -log|Lambda|, from the same diagonal.
double log_det_covariance(const PackedCholesky& factor);

/// r^T Lambda r = ||L^T r||^2. Throws UsageError on a length mismatch.
double quad_form(const PackedCholesky& factor, std::span<const double> residual);

/// Same quadratic form evaluated without materializing L: the residual is
/// weighted by each row of W, convolved with the matching basis kernel and
/// summed; the diagonal contributes exp((B W)_0) r pointwise.
double quad_form_basis(const BasisMatrix& basis, const WeightField& weights,
                       const SparsityPattern& pattern, std::span<const double> residual);

/// Gaussian log density with precision L L^T:
///   0.5 log|Lambda| - 0.5 (x-mu)^T Lambda (x-mu) - (n/2) log(2 pi).
double log_prob(const PackedCholesky& factor, std::span<const double> mean,
                std::span<const double> x);

/// Draws mean + e with L^T e = nu, nu ~ N(0, I).
std::vector<double> sample(const PackedCholesky& factor, std::span<const double> mean,
                           std::mt19937_64& rng);
std::vector<double> sample(const PackedCholesky& factor, std::span<const double> mean,
                           std::uint64_t seed);

/// Versioned little-endian block: geometry, coefficient payload, CRC-32.
std::vector<std::uint8_t> serialize(const PackedCholesky& factor);
PackedCholesky deserialize_packed_cholesky(std::span<const std::uint8_t> bytes);

namespace testing {
/// Fault injection for the oracle suites: negates log_det_precision.
void set_logdet_sign_fault(bool enabled);
}  // namespace testing

}  // namespace svae::structured
