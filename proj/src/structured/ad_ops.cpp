#include "svae/structured/ad_ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "svae/ad/ops.hpp"
#include "svae/errors.hpp"

namespace svae::structured {

namespace {

void require_field(const char* op, const SparsityPattern& pattern, const ad::Tensor& field) {
  const auto& s = field.shape();
  if (s.size() != 4 || s[1] != pattern.slot_count() || s[2] != pattern.height() ||
      s[3] != pattern.width()) {
    throw ConfigError(std::string(op) + ": field shape " + ad::shape_string(s) + " does not fit a " +
                      std::to_string(pattern.height()) + "x" + std::to_string(pattern.width()) +
                      " pattern with " + std::to_string(pattern.slot_count()) + " slots");
  }
}

void require_plane(const char* op, const SparsityPattern& pattern, const ad::Tensor& t,
                   std::size_t batch) {
  const ad::Shape want{batch, 1, pattern.height(), pattern.width()};
  if (t.shape() != want) {
    throw ConfigError(std::string(op) + ": expected " + ad::shape_string(want) + ", got " +
                      ad::shape_string(t.shape()));
  }
}

}  // namespace

ad::Tensor structured_log_prob(const SparsityPattern& pattern, const ad::Tensor& field,
                               const ad::Tensor& mu, const ad::Tensor& x) {
  require_field("structured_log_prob", pattern, field);
  const auto batch = field.dim(0);
  require_plane("structured_log_prob", pattern, mu, batch);
  require_plane("structured_log_prob", pattern, x, batch);

  const auto np = pattern.pixel_count();
  const auto cols = pattern.all_columns();
  const auto slots = pattern.all_slots();
  const auto fv = field.values(), mv = mu.values(), xv = x.values();
  const double log_norm = 0.5 * static_cast<double>(np) * std::log(2.0 * std::numbers::pi);

  // Keep residuals and y = L^T r for the backward pass.
  auto resid = std::make_shared<std::vector<double>>(batch * np);
  auto proj = std::make_shared<std::vector<double>>(batch * np, 0.0);
  std::vector<double> out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* f = fv.data() + n * pattern.slot_count() * np;
    double* r = resid->data() + n * np;
    double* y = proj->data() + n * np;
    double half_logdet = 0.0;
    for (std::size_t p = 0; p < np; ++p) r[p] = xv[n * np + p] - mv[n * np + p];
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t k = pattern.row_begin(p); k + 1 < pattern.row_end(p); ++k) {
        y[cols[k]] += f[slots[k] * np + p] * r[p];
      }
      const double raw = f[p];
      half_logdet += raw;
      y[p] += std::exp(raw) * r[p];
    }
    double quad = 0.0;
    for (std::size_t p = 0; p < np; ++p) quad += y[p] * y[p];
    out[n] = half_logdet - 0.5 * quad - log_norm;
  }

  const auto slot_count = pattern.slot_count();
  auto pat = std::make_shared<SparsityPattern>(pattern);
  return ad::make_result(
      "structured_log_prob", {batch}, std::move(out), {field, mu, x},
      [pat, resid, proj, np, slot_count](ad::detail::Node& self) {
        double* gf = ad::grad_target(self, 0);
        double* gm = ad::grad_target(self, 1);
        double* gx = ad::grad_target(self, 2);
        const auto& fv = self.parents[0]->value;
        const auto cols = pat->all_columns();
        const auto slots = pat->all_slots();
        std::vector<double> ly(np);
        for (std::size_t n = 0; n < self.value.size(); ++n) {
          const double g = self.grad[n];
          const double* f = fv.data() + n * slot_count * np;
          const double* r = resid->data() + n * np;
          const double* y = proj->data() + n * np;
          // d/dL_pq of -0.5 |L^T r|^2 is -y_q r_p; the diagonal adds the
          // log-det term and the exp chain factor.
          std::fill(ly.begin(), ly.end(), 0.0);
          for (std::size_t p = 0; p < np; ++p) {
            const double lpp = std::exp(f[p]);
            double acc = lpp * y[p];
            for (std::size_t k = pat->row_begin(p); k + 1 < pat->row_end(p); ++k) {
              const std::size_t idx = n * slot_count * np + slots[k] * np + p;
              acc += f[slots[k] * np + p] * y[cols[k]];
              if (gf) gf[idx] -= g * y[cols[k]] * r[p];
            }
            if (gf) gf[n * slot_count * np + p] += g * (1.0 - y[p] * r[p] * lpp);
            ly[p] = acc;
          }
          for (std::size_t p = 0; p < np; ++p) {
            if (gm) gm[n * np + p] += g * ly[p];
            if (gx) gx[n * np + p] -= g * ly[p];
          }
        }
      });
}

ad::Tensor offdiag_abs_sum(const SparsityPattern& pattern, const ad::Tensor& field) {
  require_field("offdiag_abs_sum", pattern, field);
  const auto batch = field.dim(0);
  const auto np = pattern.pixel_count();
  const auto slot_count = pattern.slot_count();
  const auto slots = pattern.all_slots();
  const auto fv = field.values();
  std::vector<double> out(batch, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t k = pattern.row_begin(p); k + 1 < pattern.row_end(p); ++k) {
        out[n] += std::abs(fv[n * slot_count * np + slots[k] * np + p]);
      }
    }
  }
  auto pat = std::make_shared<SparsityPattern>(pattern);
  return ad::make_result("offdiag_abs_sum", {batch}, std::move(out), {field},
                         [pat, np, slot_count](ad::detail::Node& self) {
                           double* gf = ad::grad_target(self, 0);
                           if (!gf) return;
                           const auto& fv = self.parents[0]->value;
                           const auto slots = pat->all_slots();
                           for (std::size_t n = 0; n < self.value.size(); ++n) {
                             for (std::size_t p = 0; p < np; ++p) {
                               for (std::size_t k = pat->row_begin(p); k + 1 < pat->row_end(p); ++k) {
                                 const std::size_t idx = n * slot_count * np + slots[k] * np + p;
                                 const double v = fv[idx];
                                 if (v > 0.0) gf[idx] += self.grad[n];
                                 if (v < 0.0) gf[idx] -= self.grad[n];
                               }
                             }
                           }
                         });
}

ad::Tensor basis_expand(const ad::Tensor& basis, const ad::Tensor& weights) {
  if (basis.rank() != 2 || weights.rank() != 4 || weights.dim(1) != basis.dim(1)) {
    throw ConfigError("basis_expand: basis " + ad::shape_string(basis.shape()) +
                      " does not match weights " + ad::shape_string(weights.shape()));
  }
  // A 1x1 convolution with the basis as kernel bank is exactly B W per pixel.
  auto kernel = ad::reshape(basis, {basis.dim(0), basis.dim(1), 1, 1});
  return ad::conv2d(weights, kernel, ad::Tensor(), 1, 0);
}

}  // namespace svae::structured
