#pragma once

#include <span>
#include <vector>

#include "mtl/balance.hpp"

namespace mtl::balance {

struct MgdaResult {
  std::vector<double> alphas;        // convex weights over tasks
  std::vector<double> direction;     // sum alpha_i * g_i
  double norm = 0.0;                 // 0 signals a Pareto-stationary point
  std::vector<double> norm_history;  // norm after each line-search step
};

// Minimum-norm point in the convex hull of the task gradients: away-step
// Frank-Wolfe on the Gram matrix with the exact two-point line search in
// closed form, uniform initialization, stopping once the duality gap is
// negligible so every task satisfies d.g_i >= |d|^2 up to roundoff.
MgdaResult mgda_min_norm(std::span<const std::vector<double>> grads);
MgdaResult mgda_min_norm(const GradSnapshot& grads);

}  // namespace mtl::balance
