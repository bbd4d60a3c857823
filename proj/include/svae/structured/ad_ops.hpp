#pragma once

#include "svae/ad/tensor.hpp"
#include "svae/structured/pattern.hpp"

namespace svae::structured {

/// Differentiable structured log density, one value per batch element.
///
/// `field` is [N, K, H, W] in slot order (slot 0 holds log L_pp; slots that
/// fall outside the image are ignored and receive zero gradient), `mu` and
/// `x` are [N, 1, H, W]. Returns [N].
ad::Tensor structured_log_prob(const SparsityPattern& pattern, const ad::Tensor& field,
                               const ad::Tensor& mu, const ad::Tensor& x);

/// Sum of |L_pq| over the in-image off-diagonal entries, per batch element.
/// Returns [N].
ad::Tensor offdiag_abs_sum(const SparsityPattern& pattern, const ad::Tensor& field);

/// Slot field of L = s(B W): basis [K, n_b], weights [N, n_b, H, W] ->
/// [N, K, H, W].
ad::Tensor basis_expand(const ad::Tensor& basis, const ad::Tensor& weights);

}  // namespace svae::structured
