#include "spiro/adam.hpp"

#include <cmath>

#include "spiro/errors.hpp"

namespace spiro::tc {

AdamState make_adam_state(const std::vector<Var>& params) {
  AdamState s;
  for (const Var& p : params) {
    s.first_moment.emplace_back(p.shape(), 0.0);
    s.second_moment.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Var>& params, AdamState& state, double lr,
               const std::vector<std::string>& names) {
  require(state.first_moment.size() == params.size() &&
              state.second_moment.size() == params.size(),
          ErrorKind::shape, "Adam state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(state.first_moment[i].shape() == params[i].shape(), ErrorKind::shape,
            "Adam moment shape mismatch for parameter " + std::to_string(i));
    const Node& n = params[i].node();
    if (n.grad.size() != n.value.size()) continue;
    for (std::size_t j = 0; j < n.grad.size(); ++j) {
      if (!std::isfinite(n.grad[j])) {
        const std::string label = i < names.size() ? names[i] : "#" + std::to_string(i);
        fail(ErrorKind::numeric, "non-finite gradient in parameter " + label + " at element " +
                                     std::to_string(j) + " (value " + std::to_string(n.grad[j]) +
                                     ") at step " + std::to_string(state.step_count + 1));
      }
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Node& n = params[i].node();
    if (n.grad.size() != n.value.size()) continue;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < n.value.size(); ++j) {
      const double g = n.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      n.value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void zero_grads(std::vector<Var>& params) {
  for (Var& p : params) p.zero_grad();
}

}  // namespace spiro::tc
