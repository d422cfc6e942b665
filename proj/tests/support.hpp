#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "spiro/autograd.hpp"
#include "spiro/ops.hpp"
#include "spiro/rng.hpp"

namespace spiro::testing {

inline tc::Tensor random_tensor(const tc::Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  tc::Tensor t(shape);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

// |a - n| / max(|a| + |n|, floor). The floor keeps near-zero gradients from
// turning round-off into large ratios.
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
}

// Central differences over every element of every parameter. `loss` must
// rebuild the graph from the current parameter values on each call.
inline double max_grad_error(std::vector<tc::Var> params, const std::function<tc::Var()>& loss,
                             double h = 1e-5) {
  for (tc::Var& p : params) p.zero_grad();
  tc::backward(loss());
  std::vector<tc::Tensor> analytic;
  for (const tc::Var& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    tc::Tensor& v = params[i].mutable_value();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double keep = v[j];
      v[j] = keep + h;
      const double up = loss().value().item();
      v[j] = keep - h;
      const double down = loss().value().item();
      v[j] = keep;
      worst = std::max(worst, rel_error(analytic[i][j], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace spiro::testing
