#include "svae/structured/dense.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "svae/errors.hpp"

namespace svae::structured {

DenseMatrix DenseMatrix::identity(std::size_t size) {
  DenseMatrix m(size);
  for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.n != b.n) throw UsageError("dense matmul size mismatch");
  DenseMatrix c(a.n);
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t k = 0; k < a.n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < a.n; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.n);
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < a.n; ++j) t(j, i) = a(i, j);
  }
  return t;
}

bool dense_cholesky(const DenseMatrix& a, DenseMatrix& lower) {
  const auto n = a.n;
  lower = DenseMatrix(n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

DenseGaussian to_dense(const PackedCholesky& factor) {
  const auto n = factor.pixel_count();
  if (n > kDensePixelLimit) {
    throw UsageError("to_dense refuses " + std::to_string(n) + " pixels (limit " +
                     std::to_string(kDensePixelLimit) + ")");
  }
  const auto& pat = factor.pattern();
  const auto cols = pat.all_columns();
  DenseMatrix l(n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t k = pat.row_begin(p); k < pat.row_end(p); ++k) l(p, cols[k]) = factor.value(k);
  }

  // Forward substitution L X = I column by column; X = L^-1 is lower.
  DenseMatrix inv(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = c; i < n; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (std::size_t k = c; k < i; ++k) s -= l(i, k) * inv(k, c);
      inv(i, c) = s / l(i, i);
    }
  }
  DenseGaussian g{l, matmul(l, transpose(l)), matmul(transpose(inv), inv)};
  return g;
}

double dense_log_det(const DenseMatrix& a) {
  DenseMatrix c;
  if (!dense_cholesky(a, c)) throw NumericFault("dense_log_det: matrix is not positive definite");
  double s = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) s += std::log(c(i, i));
  return 2.0 * s;
}

double dense_quad_form(const DenseMatrix& a, std::span<const double> r) {
  if (r.size() != a.n) throw UsageError("dense_quad_form length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < a.n; ++j) s += r[i] * a(i, j) * r[j];
  }
  return s;
}

double dense_log_prob_covariance(const DenseMatrix& covariance, std::span<const double> mean,
                                 std::span<const double> x) {
  const auto n = covariance.n;
  if (mean.size() != n || x.size() != n) throw UsageError("dense_log_prob length mismatch");
  DenseMatrix c;
  if (!dense_cholesky(covariance, c)) {
    throw NumericFault("dense_log_prob: covariance is not positive definite");
  }
  // Solve C u = (x - mu); quad = |u|^2.
  std::vector<double> u(n);
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i] - mean[i];
    for (std::size_t k = 0; k < i; ++k) s -= c(i, k) * u[k];
    u[i] = s / c(i, i);
    logdet += 2.0 * std::log(c(i, i));
  }
  double quad = 0.0;
  for (double v : u) quad += v * v;
  return -0.5 * logdet - 0.5 * quad - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

}  // namespace svae::structured
