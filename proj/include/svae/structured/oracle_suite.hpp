#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "svae/structured/gaussian.hpp"

namespace svae::structured {

/// Random factor with log-diagonal in [-diag_spread, diag_spread] and
/// off-diagonal entries scaled by offdiag_scale / sqrt(slot count).
PackedCholesky random_factor(std::shared_ptr<const SparsityPattern> pattern, std::mt19937_64& rng,
                             double diag_spread = 0.3, double offdiag_scale = 0.5);

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  /// One line per failing case, carrying the seed that reproduces it.
  std::vector<std::string> failing;
  bool pass() const { return failures == 0 && cases > 0; }
};

/// Random instances over sizes {2,3,4,8}^2, n_f in {3,5}, dilation in {1,2};
/// log_prob, quad_form and log_det_precision against the dense oracle.
SuiteResult run_equivalence_suite(std::size_t instances, std::uint64_t seed,
                                  double tolerance = 1e-8);

/// Empirical covariance of `samples` draws on a random 3x3 instance against
/// the dense Sigma, as a relative Frobenius error.
SuiteResult run_sampling_suite(std::size_t samples, std::uint64_t seed, double tolerance = 0.05);

/// Gradient checks of the differentiable structured log density with
/// respect to the mean, the direct coefficients, the basis and the weights.
SuiteResult run_gradient_suite(std::uint64_t seed, double tolerance = 1e-4);

struct OracleReport {
  std::vector<SuiteResult> suites;
  bool pass() const;
};

OracleReport run_oracle_suites(std::uint64_t seed);

}  // namespace svae::structured
