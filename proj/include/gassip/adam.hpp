#pragma once

#include "gassip/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace gassip {

struct AdamState {
  Matrix m;
  Matrix v;
  std::int64_t step_count = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const Param& p, double lr);

/// One bias-corrected Adam update of `param` from its current grad; the grad
/// is zeroed afterwards.
void adam_step(Param& param, AdamState& state);

/// Adam over a fixed, ordered set of parameters.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param*> params, double lr);

  void zero_grad();
  void step();
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  std::vector<AdamState> states_;
};

}  // namespace gassip
