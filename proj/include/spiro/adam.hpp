#pragma once

#include <string>
#include <vector>

#include "spiro/autograd.hpp"

namespace spiro::tc {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const std::vector<Var>& params);

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Throws (before touching any parameter) if a gradient is not finite;
/// `names`, when given, labels the offending tensor in the message.
void adam_step(std::vector<Var>& params, AdamState& state, double lr,
               const std::vector<std::string>& names = {});

void zero_grads(std::vector<Var>& params);

}  // namespace spiro::tc
