#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fp/nd/array.hpp"

namespace fp::nd {

/// Named parameter collection. std::map keeps canonical (sorted) name order,
/// which serialization and deterministic iteration both rely on.
using ParamMap = std::map<std::string, Array>;

struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  ParamMap m;  // first moments, keyed like params
  ParamMap v;  // second moments
};

/// One bias-corrected Adam update over all params. Grads are looked up by
/// name; a missing entry counts as zero gradient (moments decay, no movement
/// from zero moments). Non-finite gradients abort naming the parameter.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state);

}  // namespace fp::nd
