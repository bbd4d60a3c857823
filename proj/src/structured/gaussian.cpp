#include "svae/structured/gaussian.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

#include "svae/binary_io.hpp"
#include "svae/errors.hpp"

namespace svae::structured {

namespace {

std::atomic<bool> g_logdet_sign_fault{false};

constexpr std::uint32_t kPackedMagic = 0x43505653;  // "SVPC"
constexpr std::uint32_t kPackedVersion = 1;

void require_length(const char* op, std::size_t got, std::size_t want) {
  if (got != want) {
    throw UsageError(std::string(op) + ": vector length " + std::to_string(got) +
                     " does not match pixel count " + std::to_string(want));
  }
}

void check_diagonal(double log_diag, std::size_t p) {
  const double d = std::exp(log_diag);
  if (!std::isfinite(log_diag) || !(d > 0.0) || !std::isfinite(d)) {
    throw NumericFault("factor diagonal at pixel " + std::to_string(p) +
                       " is not a finite positive number (log value " + std::to_string(log_diag) + ")");
  }
}

}  // namespace

PackedCholesky::PackedCholesky(std::shared_ptr<const SparsityPattern> pattern,
                               std::vector<double> coeffs)
    : pattern_(std::move(pattern)), coeffs_(std::move(coeffs)) {
  if (!pattern_) throw ConfigError("PackedCholesky needs a sparsity pattern");
  if (coeffs_.size() != pattern_->nonzero_count()) {
    throw ConfigError("PackedCholesky: " + std::to_string(coeffs_.size()) +
                      " coefficients for a pattern with " +
                      std::to_string(pattern_->nonzero_count()) + " non-zeros");
  }
  for (std::size_t p = 0; p < pattern_->pixel_count(); ++p) {
    check_diagonal(coeffs_[pattern_->row_end(p) - 1], p);
    for (std::size_t k = pattern_->row_begin(p); k + 1 < pattern_->row_end(p); ++k) {
      if (!std::isfinite(coeffs_[k])) {
        throw NumericFault("non-finite factor coefficient in row " + std::to_string(p));
      }
    }
  }
}

PackedCholesky PackedCholesky::identity(std::shared_ptr<const SparsityPattern> pattern) {
  const auto nnz = pattern->nonzero_count();
  return PackedCholesky(std::move(pattern), std::vector<double>(nnz, 0.0));
}

PackedCholesky PackedCholesky::from_slot_field(std::shared_ptr<const SparsityPattern> pattern,
                                               std::span<const double> field) {
  const auto np = pattern->pixel_count();
  if (field.size() != pattern->slot_count() * np) {
    throw ConfigError("slot field has " + std::to_string(field.size()) + " values, expected " +
                      std::to_string(pattern->slot_count() * np));
  }
  std::vector<double> coeffs(pattern->nonzero_count());
  const auto slots = pattern->all_slots();
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t k = pattern->row_begin(p); k < pattern->row_end(p); ++k) {
      coeffs[k] = field[slots[k] * np + p];
    }
  }
  return PackedCholesky(std::move(pattern), std::move(coeffs));
}

std::vector<double> PackedCholesky::to_slot_field() const {
  const auto np = pattern_->pixel_count();
  std::vector<double> field(pattern_->slot_count() * np, 0.0);
  const auto slots = pattern_->all_slots();
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t k = pattern_->row_begin(p); k < pattern_->row_end(p); ++k) {
      field[slots[k] * np + p] = coeffs_[k];
    }
  }
  return field;
}

double PackedCholesky::value(std::size_t k) const {
  return pattern_->all_slots()[k] == 0 ? std::exp(coeffs_[k]) : coeffs_[k];
}

double PackedCholesky::log_diagonal(std::size_t p) const { return coeffs_[pattern_->row_end(p) - 1]; }
double PackedCholesky::diagonal(std::size_t p) const { return std::exp(log_diagonal(p)); }

std::vector<double> PackedCholesky::multiply_transpose(std::span<const double> v) const {
  const auto np = pattern_->pixel_count();
  require_length("multiply_transpose", v.size(), np);
  const auto cols = pattern_->all_columns();
  std::vector<double> y(np, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t k = pattern_->row_begin(p); k < pattern_->row_end(p); ++k) {
      y[cols[k]] += value(k) * v[p];
    }
  }
  return y;
}

std::vector<double> PackedCholesky::multiply(std::span<const double> v) const {
  const auto np = pattern_->pixel_count();
  require_length("multiply", v.size(), np);
  const auto cols = pattern_->all_columns();
  std::vector<double> y(np, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    double s = 0.0;
    for (std::size_t k = pattern_->row_begin(p); k < pattern_->row_end(p); ++k) {
      s += value(k) * v[cols[k]];
    }
    y[p] = s;
  }
  return y;
}

std::vector<double> PackedCholesky::solve_transpose(std::span<const double> v) const {
  const auto np = pattern_->pixel_count();
  require_length("solve_transpose", v.size(), np);
  const auto cols = pattern_->all_columns();
  // (L^T e)_q = L_qq e_q + sum_{p > q} L_pq e_p. Going backwards, every e_p
  // with p > q is known before q is reached; its row scatters into `acc`.
  std::vector<double> acc(np, 0.0), e(np, 0.0);
  for (std::size_t q = np; q-- > 0;) {
    const double d = diagonal(q);
    if (!(d > 0.0)) throw NumericFault("zero factor diagonal at pixel " + std::to_string(q));
    e[q] = (v[q] - acc[q]) / d;
    for (std::size_t k = pattern_->row_begin(q); k + 1 < pattern_->row_end(q); ++k) {
      acc[cols[k]] += coeffs_[k] * e[q];
    }
  }
  return e;
}

BasisMatrix BasisMatrix::identity(std::size_t n) {
  BasisMatrix b{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) b.data[i * n + i] = 1.0;
  return b;
}

PackedCholesky expand_basis(const BasisMatrix& basis, const WeightField& weights,
                            std::shared_ptr<const SparsityPattern> pattern) {
  const auto np = pattern->pixel_count();
  const auto slots = pattern->slot_count();
  if (basis.rows != slots || basis.data.size() != basis.rows * basis.cols) {
    throw ConfigError("basis must have " + std::to_string(slots) + " rows");
  }
  if (weights.rows != basis.cols || weights.cols != np ||
      weights.data.size() != weights.rows * weights.cols) {
    throw ConfigError("weight field must be " + std::to_string(basis.cols) + " x " +
                      std::to_string(np));
  }
  std::vector<double> field(slots * np, 0.0);
  for (std::size_t s = 0; s < slots; ++s) {
    for (std::size_t b = 0; b < basis.cols; ++b) {
      const double coef = basis.at(s, b);
      if (coef == 0.0) continue;
      for (std::size_t p = 0; p < np; ++p) field[s * np + p] += coef * weights.at(b, p);
    }
  }
  return PackedCholesky::from_slot_field(std::move(pattern), field);
}

double log_det_precision(const PackedCholesky& factor) {
  double s = 0.0;
  for (std::size_t p = 0; p < factor.pixel_count(); ++p) s += factor.log_diagonal(p);
  const double logdet = 2.0 * s;
  return g_logdet_sign_fault.load() ? -logdet : logdet;
}

double log_det_covariance(const PackedCholesky& factor) { return -log_det_precision(factor); }

double quad_form(const PackedCholesky& factor, std::span<const double> residual) {
  require_length("quad_form", residual.size(), factor.pixel_count());
  const auto y = factor.multiply_transpose(residual);
  double s = 0.0;
  for (double v : y) s += v * v;
  return s;
}

double quad_form_basis(const BasisMatrix& basis, const WeightField& weights,
                       const SparsityPattern& pattern, std::span<const double> residual) {
  const auto np = pattern.pixel_count();
  require_length("quad_form_basis", residual.size(), np);
  if (basis.rows != pattern.slot_count() || weights.rows != basis.cols || weights.cols != np) {
    throw ConfigError("quad_form_basis: basis/weight shapes do not fit the pattern");
  }
  const auto h = static_cast<long>(pattern.height()), w = static_cast<long>(pattern.width());
  const auto offsets = pattern.slot_offsets();
  std::vector<double> y(np, 0.0);

  // Diagonal: exp((B W)_0) r, pointwise.
  for (std::size_t p = 0; p < np; ++p) {
    double raw = 0.0;
    for (std::size_t b = 0; b < basis.cols; ++b) raw += basis.at(0, b) * weights.at(b, p);
    y[p] += std::exp(raw) * residual[p];
  }
  // Off-diagonal: y += K_b * (W_b . r) with K_b holding B[s, b] at offset o_s.
  std::vector<double> weighted(np);
  for (std::size_t b = 0; b < basis.cols; ++b) {
    for (std::size_t p = 0; p < np; ++p) weighted[p] = weights.at(b, p) * residual[p];
    for (std::size_t s = 1; s < offsets.size(); ++s) {
      const double k = basis.at(s, b);
      if (k == 0.0) continue;
      for (long qy = 0; qy < h; ++qy) {
        const long py = qy - offsets[s].dy;
        if (py < 0 || py >= h) continue;
        for (long qx = 0; qx < w; ++qx) {
          const long px = qx - offsets[s].dx;
          if (px < 0 || px >= w) continue;
          y[static_cast<std::size_t>(qy * w + qx)] += k * weighted[static_cast<std::size_t>(py * w + px)];
        }
      }
    }
  }
  double s = 0.0;
  for (double v : y) s += v * v;
  return s;
}

double log_prob(const PackedCholesky& factor, std::span<const double> mean,
                std::span<const double> x) {
  const auto np = factor.pixel_count();
  require_length("log_prob", mean.size(), np);
  require_length("log_prob", x.size(), np);
  std::vector<double> r(np);
  for (std::size_t i = 0; i < np; ++i) r[i] = x[i] - mean[i];
  const double lp = 0.5 * log_det_precision(factor) - 0.5 * quad_form(factor, r) -
                    0.5 * static_cast<double>(np) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(lp)) throw NumericFault("log_prob is non-finite");
  return lp;
}

std::vector<double> sample(const PackedCholesky& factor, std::span<const double> mean,
                           std::mt19937_64& rng) {
  const auto np = factor.pixel_count();
  require_length("sample", mean.size(), np);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> nu(np);
  for (auto& v : nu) v = normal(rng);
  auto e = factor.solve_transpose(nu);
  for (std::size_t i = 0; i < np; ++i) e[i] += mean[i];
  return e;
}

std::vector<double> sample(const PackedCholesky& factor, std::span<const double> mean,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample(factor, mean, rng);
}

std::vector<std::uint8_t> serialize(const PackedCholesky& factor) {
  io::ByteWriter body;
  const auto& pat = factor.pattern();
  body.u64(pat.height());
  body.u64(pat.width());
  body.u64(pat.patch_size());
  body.u64(pat.dilation());
  body.u64(factor.coeffs().size());
  body.f64s(factor.coeffs());

  io::ByteWriter out;
  out.u32(kPackedMagic);
  out.u32(kPackedVersion);
  out.u64(body.bytes().size());
  out.raw(body.bytes());
  out.u32(io::crc32(body.bytes()));
  return out.take();
}

PackedCholesky deserialize_packed_cholesky(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  if (in.u32() != kPackedMagic) throw FormatError("not a packed Cholesky block");
  const auto version = in.u32();
  if (version != kPackedVersion) {
    throw FormatError("unsupported packed Cholesky version " + std::to_string(version));
  }
  const auto size = in.u64();
  if (size > in.remaining()) throw FormatError("truncated packed Cholesky block");
  auto body_bytes = in.raw(size);
  if (in.u32() != io::crc32(body_bytes)) throw FormatError("packed Cholesky checksum mismatch");

  io::ByteReader body(body_bytes);
  const auto h = body.u64(), w = body.u64(), nf = body.u64(), dil = body.u64();
  auto pattern = std::make_shared<const SparsityPattern>(SparsityPattern::build(h, w, nf, dil));
  const auto count = body.u64();
  auto coeffs = body.f64s(count);
  return PackedCholesky(std::move(pattern), std::move(coeffs));
}

namespace testing {
void set_logdet_sign_fault(bool enabled) { g_logdet_sign_fault.store(enabled); }
}  // namespace testing

}  // namespace svae::structured
