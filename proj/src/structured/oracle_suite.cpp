#include "svae/structured/oracle_suite.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "svae/ad/gradient_check.hpp"
#include "svae/ad/ops.hpp"
#include "svae/ad/param_store.hpp"
#include "svae/structured/ad_ops.hpp"
#include "svae/structured/dense.hpp"

namespace svae::structured {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_error(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

PackedCholesky random_factor(std::shared_ptr<const SparsityPattern> pattern, std::mt19937_64& rng,
                             double diag_spread, double offdiag_scale) {
  const double off = offdiag_scale / std::sqrt(static_cast<double>(pattern->slot_count()));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> coeffs(pattern->nonzero_count());
  const auto slots = pattern->all_slots();
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    coeffs[k] = (slots[k] == 0 ? diag_spread : off) * u(rng);
  }
  return PackedCholesky(std::move(pattern), std::move(coeffs));
}

SuiteResult run_equivalence_suite(std::size_t instances, std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  SuiteResult res;
  res.name = "dense-equivalence";
  res.tolerance = tolerance;
  constexpr std::size_t sizes[] = {2, 3, 4, 8};
  constexpr std::size_t patches[] = {3, 5};
  constexpr std::size_t dilations[] = {1, 2};
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t case_seed = seed + i;
    std::mt19937_64 rng(case_seed);
    const auto h = sizes[rng() % 4], w = sizes[rng() % 4];
    const auto nf = patches[rng() % 2], dil = dilations[rng() % 2];
    auto pattern = std::make_shared<const SparsityPattern>(SparsityPattern::build(h, w, nf, dil));
    const auto factor = random_factor(pattern, rng);
    const auto mean = uniform(rng, pattern->pixel_count(), -1.0, 1.0);
    const auto x = uniform(rng, pattern->pixel_count(), -1.0, 1.0);
    std::vector<double> r(x.size());
    for (std::size_t p = 0; p < r.size(); ++p) r[p] = x[p] - mean[p];

    const auto dense = to_dense(factor);
    const double e_det = rel_error(log_det_precision(factor), dense_log_det(dense.precision));
    const double e_quad = rel_error(quad_form(factor, r), dense_quad_form(dense.precision, r));
    const double e_lp =
        rel_error(log_prob(factor, mean, x), dense_log_prob_covariance(dense.covariance, mean, x));
    const double worst = std::max({e_det, e_quad, e_lp});
    res.max_error = std::max(res.max_error, worst);
    ++res.cases;
    if (!(worst <= tolerance)) {
      ++res.failures;
      std::ostringstream os;
      os << "seed " << case_seed << " (" << h << "x" << w << ", n_f " << nf << ", dilation " << dil
         << "): log_det " << e_det << ", quad_form " << e_quad << ", log_prob " << e_lp;
      res.failing.push_back(os.str());
    }
  }
  res.seconds = seconds_since(t0);
  return res;
}

SuiteResult run_sampling_suite(std::size_t samples, std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  SuiteResult res;
  res.name = "sampling-covariance";
  res.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  auto pattern = std::make_shared<const SparsityPattern>(SparsityPattern::build(3, 3, 3, 1));
  const auto factor = random_factor(pattern, rng, 0.3, 1.0);
  const auto n = pattern->pixel_count();
  const auto mean = uniform(rng, n, -1.0, 1.0);

  std::vector<double> sum(n, 0.0), outer(n * n, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    const auto v = sample(factor, mean, rng);
    for (std::size_t i = 0; i < n; ++i) {
      sum[i] += v[i];
      for (std::size_t j = 0; j < n; ++j) outer[i * n + j] += v[i] * v[j];
    }
  }
  const auto dense = to_dense(factor);
  double diff = 0.0, norm = 0.0;
  const double m = static_cast<double>(samples);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double cov = (outer[i * n + j] - sum[i] * sum[j] / m) / (m - 1.0);
      diff += (cov - dense.covariance(i, j)) * (cov - dense.covariance(i, j));
      norm += dense.covariance(i, j) * dense.covariance(i, j);
    }
  }
  res.cases = 1;
  res.max_error = std::sqrt(diff / norm);
  if (!(res.max_error < tolerance)) {
    res.failures = 1;
    res.failing.push_back("seed " + std::to_string(seed) + ": Frobenius relative error " +
                          std::to_string(res.max_error));
  }
  res.seconds = seconds_since(t0);
  return res;
}

SuiteResult run_gradient_suite(std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  SuiteResult res;
  res.name = "log-prob-gradients";
  res.tolerance = tolerance;
  ad::GradientCheckOptions opts;
  opts.tolerance = tolerance;

  for (std::size_t trial = 0; trial < 4; ++trial) {
    const std::uint64_t case_seed = seed + trial;
    std::mt19937_64 rng(case_seed);
    const std::size_t nf = trial % 2 == 0 ? 3 : 5;
    const auto pattern = SparsityPattern::build(4, 4, nf, 1 + trial / 2);
    const auto k = pattern.slot_count(), np = pattern.pixel_count();
    const std::size_t nb = 3;

    ad::ParamStore direct;
    direct.add("field", ad::Tensor::parameter({2, k, 4, 4}, uniform(rng, 2 * k * np, -0.4, 0.4)));
    direct.add("mu", ad::Tensor::parameter({2, 1, 4, 4}, uniform(rng, 2 * np, -1.0, 1.0)));
    const auto x = ad::Tensor::constant({2, 1, 4, 4}, uniform(rng, 2 * np, -1.0, 1.0));
    auto direct_report = ad::gradient_check(
        [&](ad::ParamStore& ps) {
          return ad::sum(structured_log_prob(pattern, ps.at("field"), ps.at("mu"), x));
        },
        direct, opts);

    ad::ParamStore basis;
    basis.add("B", ad::Tensor::parameter({k, nb}, uniform(rng, k * nb, -0.5, 0.5)));
    basis.add("W", ad::Tensor::parameter({2, nb, 4, 4}, uniform(rng, 2 * nb * np, -0.5, 0.5)));
    basis.add("mu", ad::Tensor::parameter({2, 1, 4, 4}, uniform(rng, 2 * np, -1.0, 1.0)));
    auto basis_report = ad::gradient_check(
        [&](ad::ParamStore& ps) {
          auto field = basis_expand(ps.at("B"), ps.at("W"));
          return ad::sum(structured_log_prob(pattern, field, ps.at("mu"), x));
        },
        basis, opts);

    for (const auto* report : {&direct_report, &basis_report}) {
      for (const auto& p : report->params) {
        ++res.cases;
        res.max_error = std::max(res.max_error, p.max_rel_error);
        if (!p.pass) {
          ++res.failures;
          res.failing.push_back("seed " + std::to_string(case_seed) + ": parameter " + p.name +
                                " relative error " + std::to_string(p.max_rel_error));
        }
      }
    }
  }
  res.seconds = seconds_since(t0);
  return res;
}

bool OracleReport::pass() const {
  for (const auto& s : suites) {
    if (!s.pass()) return false;
  }
  return !suites.empty();
}

OracleReport run_oracle_suites(std::uint64_t seed) {
  OracleReport report;
  report.suites.push_back(run_equivalence_suite(200, seed));
  report.suites.push_back(run_sampling_suite(100000, seed + 1000));
  report.suites.push_back(run_gradient_suite(seed + 2000));
  return report;
}

}  // namespace svae::structured
