#include "mtl/mgda.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "mtl/error.hpp"

namespace mtl::balance {

namespace {

// The away-step variant converges linearly here, so the cap is generous; it
// only guards against inputs whose scale drowns the gap test in roundoff.
constexpr std::size_t kMaxIterations = 400000;

// Frank-Wolfe gap at which the direction is declared optimal. Well under the
// 1e-6 slack promised for d.g_i >= |d|^2, with room for accumulated roundoff.
constexpr double kGapTolerance = 1e-9;

}  // namespace

MgdaResult mgda_min_norm(std::span<const std::vector<double>> grads) {
  std::size_t n = grads.size();
  if (n == 0) throw DimensionError("no gradients");
  std::size_t dim = grads[0].size();
  if (dim == 0) throw DimensionError("empty gradient vectors");
  for (const auto& g : grads) {
    if (g.size() != dim) throw DimensionError("gradient lengths differ");
    for (double v : g) {
      if (!std::isfinite(v)) throw DomainError("non-finite gradient");
    }
  }

  // Gram matrix; everything after this runs in task space.
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += grads[i][d] * grads[j][d];
      gram[i * n + j] = dot;
      gram[j * n + i] = dot;
    }
  }

  MgdaResult result;
  result.alphas.assign(n, 1.0 / static_cast<double>(n));
  std::vector<double> ga(n);

  for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
    // ga and vv from scratch each round so roundoff cannot accumulate.
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gram[i * n + j] * result.alphas[j];
      ga[i] = s;
    }
    double vv = 0.0;
    for (std::size_t i = 0; i < n; ++i) vv += result.alphas[i] * ga[i];

    // Toward-vertex candidate: the task the direction supports least.
    std::size_t t = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (ga[i] < ga[t]) t = i;
    }
    double toward_gap = vv - ga[t];
    if (toward_gap <= kGapTolerance) break;

    // Away candidate: the heaviest-supported task still carrying weight.
    std::size_t u = t;
    bool have_u = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (result.alphas[i] > 0.0 && (!have_u || ga[i] > ga[u])) {
        u = i;
        have_u = true;
      }
    }
    double away_gap = ga[u] - vv;

    double new_vv;
    if (toward_gap >= away_gap) {
      // Exact minimizer of |(1-gamma) v + gamma g_t|^2 over [0, 1].
      double denom = vv - 2.0 * ga[t] + gram[t * n + t];
      double gamma = denom > 0.0 ? std::clamp(toward_gap / denom, 0.0, 1.0) : 0.0;
      for (double& a : result.alphas) a *= 1.0 - gamma;
      result.alphas[t] += gamma;
      new_vv = (1.0 - gamma) * (1.0 - gamma) * vv + 2.0 * gamma * (1.0 - gamma) * ga[t] +
               gamma * gamma * gram[t * n + t];
    } else {
      // Shift weight off task u: minimize |(1+gamma) v - gamma g_u|^2 while
      // alpha_u stays non-negative.
      double cap = result.alphas[u] / (1.0 - result.alphas[u]);
      double denom = vv - 2.0 * ga[u] + gram[u * n + u];
      double gamma = denom > 0.0 ? std::min(away_gap / denom, cap) : cap;
      gamma = std::max(gamma, 0.0);
      for (double& a : result.alphas) a *= 1.0 + gamma;
      result.alphas[u] -= gamma;
      if (gamma == cap || result.alphas[u] < 0.0) result.alphas[u] = 0.0;
      new_vv = (1.0 + gamma) * (1.0 + gamma) * vv - 2.0 * gamma * (1.0 + gamma) * ga[u] +
               gamma * gamma * gram[u * n + u];
    }
    result.norm_history.push_back(std::sqrt(std::max(0.0, new_vv)));
    // Exact line search cannot move uphill; a flat step means the gap is
    // below what the arithmetic resolves.
    if (new_vv >= vv) break;
  }

  result.direction.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      result.direction[d] += result.alphas[i] * grads[i][d];
    }
  }
  double nn = 0.0;
  for (double v : result.direction) nn += v * v;
  result.norm = std::sqrt(nn);
  return result;
}

MgdaResult mgda_min_norm(const GradSnapshot& grads) {
  grads.validate();
  if (grads.vectors.empty()) {
    throw DimensionError("min-norm solver needs full gradient vectors");
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(grads.vectors.size());
  for (const Tensor& t : grads.vectors) rows.push_back(t.data);
  return mgda_min_norm(rows);
}

}  // namespace mtl::balance
