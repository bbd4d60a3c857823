#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "svae/structured/gaussian.hpp"

namespace svae::structured {

/// Square row-major matrix for the dense oracle.
struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  explicit DenseMatrix(std::size_t size = 0) : n(size), data(size * size, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * n + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * n + c]; }
  static DenseMatrix identity(std::size_t size);
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

/// Dense Cholesky A = C C^T; returns false when A is not positive definite.
bool dense_cholesky(const DenseMatrix& a, DenseMatrix& lower);

/// Dense Gaussian pieces of a packed factor. Only for small images.
struct DenseGaussian {
  DenseMatrix factor;      // L
  DenseMatrix precision;   // Lambda = L L^T
  DenseMatrix covariance;  // Sigma = Lambda^-1
};

inline constexpr std::size_t kDensePixelLimit = 4096;

/// Throws UsageError above kDensePixelLimit pixels. Sigma comes from two
/// triangular solves against the identity: L X = I, then Sigma = X^T X.
DenseGaussian to_dense(const PackedCholesky& factor);

/// log|A| via a fresh dense Cholesky of A (NumericFault if A is not SPD).
double dense_log_det(const DenseMatrix& a);
double dense_quad_form(const DenseMatrix& a, std::span<const double> r);
/// Multivariate normal log density with the given covariance, evaluated
/// through a dense Cholesky of the covariance.
double dense_log_prob_covariance(const DenseMatrix& covariance, std::span<const double> mean,
                                 std::span<const double> x);

}  // namespace svae::structured
