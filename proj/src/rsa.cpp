#include "mtl/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "mtl/error.hpp"

namespace mtl::rsa {

namespace {

double clamp_correlation(double r) { return std::min(1.0, std::max(-1.0, r)); }

}  // namespace

std::vector<double> Rdm::upper_triangle() const {
  std::vector<double> tri;
  tri.reserve(K * (K - 1) / 2);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i + 1; j < K; ++j) tri.push_back(at(i, j));
  }
  return tri;
}

Tensor AffinityTensor::to_tensor() const {
  return Tensor::from_values({D, N, N}, values, DType::f64);
}

AffinityTensor AffinityTensor::from_tensor(const Tensor& t, std::vector<std::string> tasks,
                                           std::vector<std::string> locations) {
  validate_tensor(t);
  if (t.shape.size() != 3 || t.shape[1] != t.shape[2]) {
    throw DimensionError("affinity tensor must have shape [D, N, N]");
  }
  AffinityTensor a;
  a.D = static_cast<std::size_t>(t.shape[0]);
  a.N = static_cast<std::size_t>(t.shape[1]);
  a.values = t.data;
  if (tasks.empty()) {
    for (std::size_t i = 0; i < a.N; ++i) tasks.push_back("task" + std::to_string(i));
  }
  if (locations.empty()) {
    for (std::size_t d = 0; d < a.D; ++d) locations.push_back("loc" + std::to_string(d));
  }
  if (tasks.size() != a.N) throw DimensionError("task name count does not match N");
  if (locations.size() != a.D) throw DimensionError("location label count does not match D");
  a.tasks = std::move(tasks);
  a.locations = std::move(locations);
  a.validate();
  return a;
}

void AffinityTensor::validate() const {
  if (values.size() != D * N * N) throw DimensionError("affinity value count mismatch");
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t i = 0; i < N; ++i) {
      if (at(d, i, i) != 1.0) throw DomainError("affinity diagonal must be 1");
      for (std::size_t j = 0; j < N; ++j) {
        double v = at(d, i, j);
        if (!(v >= -1.0 && v <= 1.0)) throw DomainError("affinity entry outside [-1, 1]");
        if (at(d, j, i) != v) throw DomainError("affinity slice not symmetric");
      }
    }
  }
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  std::size_t n = x.size();
  if (n < 2) throw DimensionError("pearson: need at least 2 samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: zero-variance input");
  return clamp_correlation(sxy / std::sqrt(sxx * syy));
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    // positions i..j (0-based) share the averaged 1-based rank
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

Rdm rdm_from_features(const Tensor& features) {
  validate_tensor(features);
  if (features.shape.empty()) throw DimensionError("feature tensor must have a leading image axis");
  auto K = static_cast<std::size_t>(features.shape[0]);
  if (K < 2) throw DimensionError("need at least 2 probe images");
  std::size_t row = features.data.size() / K;
  if (row < 2) throw DimensionError("each feature row needs at least 2 elements");

  std::span<const double> all(features.data);
  for (std::size_t i = 0; i < K; ++i) {
    auto r = all.subspan(i * row, row);
    double m = 0.0;
    for (double v : r) m += v;
    m /= static_cast<double>(row);
    double s = 0.0;
    for (double v : r) s += (v - m) * (v - m);
    if (s == 0.0) throw DomainError("zero-variance feature row " + std::to_string(i));
  }

  Rdm rdm;
  rdm.K = K;
  rdm.values.assign(K * K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i + 1; j < K; ++j) {
      double d = 1.0 - pearson(all.subspan(i * row, row), all.subspan(j * row, row));
      rdm.values[i * K + j] = d;
      rdm.values[j * K + i] = d;
    }
  }
  return rdm;
}

double spearman_upper(const Rdm& a, const Rdm& b) {
  if (a.K != b.K) throw DimensionError("spearman_upper: RDM sizes differ");
  if (a.K < 3) throw DimensionError("spearman_upper: need K >= 3");
  std::vector<double> ta = a.upper_triangle();
  std::vector<double> tb = b.upper_triangle();
  auto constant = [](const std::vector<double>& v) {
    for (double x : v) {
      if (x != v[0]) return false;
    }
    return true;
  };
  if (constant(ta) || constant(tb)) throw DomainError("degenerate ranking");
  std::vector<double> ra = average_ranks(ta);
  std::vector<double> rb = average_ranks(tb);
  return pearson(ra, rb);
}

AffinityTensor task_affinity(const std::vector<std::vector<Tensor>>& features,
                             std::vector<std::string> tasks,
                             std::vector<std::string> locations, int threads) {
  std::size_t N = features.size();
  if (N == 0) throw DimensionError("no tasks");
  std::size_t D = features[0].size();
  if (D == 0) throw DimensionError("no locations");
  for (const auto& per_task : features) {
    if (per_task.size() != D) throw DimensionError("location count differs across tasks");
  }
  for (std::size_t d = 0; d < D; ++d) {
    std::uint64_t K = features[0][d].shape.empty() ? 0 : features[0][d].shape[0];
    for (std::size_t t = 0; t < N; ++t) {
      if (features[t][d].shape.empty() || features[t][d].shape[0] != K) {
        throw DimensionError("probe image count differs across tasks at location " +
                             std::to_string(d));
      }
    }
  }
  if (tasks.empty()) {
    for (std::size_t i = 0; i < N; ++i) tasks.push_back("task" + std::to_string(i));
  }
  if (locations.empty()) {
    for (std::size_t d = 0; d < D; ++d) locations.push_back("loc" + std::to_string(d));
  }
  if (tasks.size() != N || locations.size() != D) {
    throw DimensionError("name counts do not match feature collection");
  }

  AffinityTensor a;
  a.D = D;
  a.N = N;
  a.tasks = std::move(tasks);
  a.locations = std::move(locations);
  a.values.assign(D * N * N, 0.0);

  // Each location is independent; entries are filled by index so thread
  // scheduling cannot change any summation order.
  auto fill_location = [&](std::size_t d) {
    std::vector<Rdm> rdms;
    rdms.reserve(N);
    for (std::size_t t = 0; t < N; ++t) rdms.push_back(rdm_from_features(features[t][d]));
    for (std::size_t i = 0; i < N; ++i) {
      a.at(d, i, i) = 1.0;
      for (std::size_t j = i + 1; j < N; ++j) {
        double s = spearman_upper(rdms[i], rdms[j]);
        a.at(d, i, j) = s;
        a.at(d, j, i) = s;
      }
    }
  };

  int workers = std::max(1, threads);
  if (workers == 1 || D == 1) {
    for (std::size_t d = 0; d < D; ++d) fill_location(d);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(D);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t d = static_cast<std::size_t>(w); d < D;
             d += static_cast<std::size_t>(workers)) {
          try {
            fill_location(d);
          } catch (...) {
            errors[d] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return a;
}

}  // namespace mtl::rsa
