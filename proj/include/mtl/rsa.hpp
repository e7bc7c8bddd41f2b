#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::rsa {

// K x K matrix of pairwise response dissimilarities 1 - pearson(row_i, row_j).
struct Rdm {
  std::size_t K = 0;
  std::vector<double> values;  // row-major K*K

  double at(std::size_t i, std::size_t j) const { return values[i * K + j]; }
  // Strict upper triangle in row-major visit order; length K*(K-1)/2.
  std::vector<double> upper_triangle() const;
};

// Task-affinity values per network location: values[d][i][j], each slice
// symmetric with unit diagonal.
struct AffinityTensor {
  std::size_t D = 0;
  std::size_t N = 0;
  std::vector<double> values;  // D*N*N
  std::vector<std::string> tasks;
  std::vector<std::string> locations;

  double at(std::size_t d, std::size_t i, std::size_t j) const {
    return values[(d * N + i) * N + j];
  }
  double& at(std::size_t d, std::size_t i, std::size_t j) {
    return values[(d * N + i) * N + j];
  }

  Tensor to_tensor() const;  // shape [D, N, N], f64
  static AffinityTensor from_tensor(const Tensor& t, std::vector<std::string> tasks = {},
                                    std::vector<std::string> locations = {});
  // Throws unless every slice is symmetric with unit diagonal, entries in [-1, 1].
  void validate() const;
};

// Plain two-pass Pearson correlation; sequential summation order is fixed so
// results never depend on threading. Throws DomainError on zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Ranks with ties averaged, 1-based; the Spearman building block.
std::vector<double> average_ranks(std::span<const double> v);

// features: tensor whose first axis indexes the K probe images; remaining
// axes are flattened raw (no per-channel normalization) into feature rows.
Rdm rdm_from_features(const Tensor& features);

// Spearman rank correlation of the two strict upper triangles. K >= 3.
double spearman_upper(const Rdm& a, const Rdm& b);

// features[task][location] -> A[d][i][j] = spearman_upper(RDM of task i,
// RDM of task j) at location d. threads > 1 parallelizes over locations;
// per-entry summation order is fixed, so results are identical either way.
AffinityTensor task_affinity(const std::vector<std::vector<Tensor>>& features,
                             std::vector<std::string> tasks,
                             std::vector<std::string> locations, int threads = 1);

}  // namespace mtl::rsa
