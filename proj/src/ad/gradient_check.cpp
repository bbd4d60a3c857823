#include "svae/ad/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "svae/errors.hpp"

namespace svae::ad {

namespace {

double evaluate(const std::function<Tensor(ParamStore&)>& f, ParamStore& params) {
  NoGradGuard guard;
  const double v = f(params).item();
  if (!std::isfinite(v)) throw NumericFault("gradient_check: objective is non-finite at a probe point");
  return v;
}

}  // namespace

GradientCheckReport gradient_check(const std::function<Tensor(ParamStore&)>& f,
                                   ParamStore& params, const GradientCheckOptions& options) {
  params.zero_grad();
  Tensor loss = f(params);
  if (!std::isfinite(loss.item())) throw NumericFault("gradient_check: objective is non-finite");
  backward(loss);

  GradientCheckReport report;
  std::mt19937_64 rng(options.sample_seed);
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    if (options.filter && !options.filter(name)) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());

    std::vector<std::size_t> indices(t.numel());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_elements_per_param && indices.size() > options.max_elements_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_param);
      std::sort(indices.begin(), indices.end());
    }

    ParamGradientCheck check;
    check.name = name;
    auto values = t.mutable_values();
    for (std::size_t idx : indices) {
      const double saved = values[idx];
      values[idx] = saved + options.step;
      const double up = evaluate(f, params);
      values[idx] = saved - options.step;
      const double down = evaluate(f, params);
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), options.abs_floor});
      const double rel = std::fabs(a - numeric) / denom;
      if (++check.checked == 1 || rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = idx;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    check.pass = check.max_rel_error <= options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.pass = report.pass && check.pass;
    report.params.push_back(std::move(check));
  }
  params.zero_grad();
  return report;
}

}  // namespace svae::ad
