#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "svae/ad/param_store.hpp"

namespace svae::ad {

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

struct AdamState {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update of every parameter that currently requires
/// grad, followed by zeroing those gradients. Frozen parameters keep their
/// values and moments. Throws UsageError if a trainable parameter has no
/// gradient buffer.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace svae::ad
