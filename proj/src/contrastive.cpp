#include "mtl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mtl/error.hpp"

namespace mtl::ssl {

namespace {

void check_unit_norm(std::span<const double> v, const char* what) {
  double s = 0.0;
  for (double x : v) s += x * x;
  if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
    throw DomainError(std::string(what) + " is not unit norm");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<double> l2_normalize(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  double n = std::sqrt(s);
  if (!(n > 0) || !std::isfinite(n)) throw DomainError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

ContrastiveGrads contrastive_loss(std::span<const double> anchor,
                                  std::span<const std::vector<double>> positives,
                                  std::span<const std::vector<double>> negatives,
                                  double temperature) {
  if (positives.empty()) throw DomainError("no positives for the anchor");
  if (!(temperature > 0)) throw DomainError("temperature must be positive");
  std::size_t dim = anchor.size();
  if (dim == 0) throw DimensionError("empty anchor");
  for (const auto& p : positives) {
    if (p.size() != dim) throw DimensionError("positive dimension mismatch");
  }
  for (const auto& nvec : negatives) {
    if (nvec.size() != dim) throw DimensionError("negative dimension mismatch");
  }

  ContrastiveGrads out;
  out.anchor.assign(dim, 0.0);
  out.positives.assign(positives.size(), std::vector<double>(dim, 0.0));
  out.negatives.assign(negatives.size(), std::vector<double>(dim, 0.0));

  std::vector<double> neg_logits(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    neg_logits[j] = dot(anchor, negatives[j]) / temperature;
  }

  // One softmax per positive: slot 0 is the positive, the rest the negatives.
  std::vector<double> z(1 + negatives.size());
  for (std::size_t pi = 0; pi < positives.size(); ++pi) {
    z[0] = dot(anchor, positives[pi]) / temperature;
    std::copy(neg_logits.begin(), neg_logits.end(), z.begin() + 1);
    double top = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double& v : z) {
      v = std::exp(v - top);
      denom += v;
    }
    out.loss += std::log(denom) + top - (dot(anchor, positives[pi]) / temperature);

    double s0 = z[0] / denom;
    for (std::size_t d = 0; d < dim; ++d) {
      out.positives[pi][d] += (s0 - 1.0) * anchor[d] / temperature;
      out.anchor[d] += (s0 - 1.0) * positives[pi][d] / temperature;
    }
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      double sj = z[1 + j] / denom;
      for (std::size_t d = 0; d < dim; ++d) {
        out.negatives[j][d] += sj * anchor[d] / temperature;
        out.anchor[d] += sj * negatives[j][d] / temperature;
      }
    }
  }
  return out;
}

Tensor momentum_update(const Tensor& slow, const Tensor& fast, double m) {
  if (!same_shape(slow, fast)) throw DimensionError("parameter shapes differ");
  if (!(m >= 0.0) || !(m <= 1.0)) throw DomainError("momentum must lie in [0, 1]");
  Tensor out = slow;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = m * slow.data[i] + (1.0 - m) * fast.data[i];
  }
  return out;
}

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, std::size_t head_dim)
    : capacity_(capacity), head_dim_(head_dim), backbone_dim_(0), dual_(false) {
  if (capacity == 0) throw DomainError("queue capacity must be positive");
  if (head_dim == 0) throw DimensionError("head dimension must be positive");
}

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, std::size_t head_dim,
                               std::size_t backbone_dim)
    : capacity_(capacity), head_dim_(head_dim), backbone_dim_(backbone_dim), dual_(true) {
  if (capacity == 0) throw DomainError("queue capacity must be positive");
  if (head_dim == 0 || backbone_dim == 0) {
    throw DimensionError("embedding dimensions must be positive");
  }
}

void EmbeddingQueue::push(std::span<const std::vector<double>> head_batch,
                          std::span<const std::vector<double>> backbone_batch) {
  if (dual_) {
    if (backbone_batch.size() != head_batch.size()) {
      throw DimensionError("dual queue takes matched head and backbone batches");
    }
  } else if (!backbone_batch.empty()) {
    throw DimensionError("backbone batch on a head-only queue");
  }
  for (const auto& v : head_batch) {
    if (v.size() != head_dim_) throw DimensionError("head dimension mismatch");
    check_unit_norm(v, "head embedding");
  }
  for (const auto& v : backbone_batch) {
    if (v.size() != backbone_dim_) throw DimensionError("backbone dimension mismatch");
    check_unit_norm(v, "backbone embedding");
  }
  for (std::size_t i = 0; i < head_batch.size(); ++i) {
    head_.push_back(head_batch[i]);
    if (dual_) backbone_.push_back(backbone_batch[i]);
  }
  while (head_.size() > capacity_) {
    head_.pop_front();
    if (dual_) backbone_.pop_front();
  }
}

std::vector<std::size_t> mine_neighbors(std::span<const double> query_backbone,
                                        const EmbeddingQueue& q, std::size_t k) {
  if (!q.dual()) throw DomainError("neighbor mining needs a dual queue");
  if (k == 0) throw DomainError("k must be positive");
  if (k > q.size()) throw CapacityError("queue holds fewer entries than k");
  if (query_backbone.size() != q.backbone_dim()) {
    throw DimensionError("query dimension mismatch");
  }
  check_unit_norm(query_backbone, "query");

  std::vector<double> sims(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    sims[i] = dot(query_backbone, q.backbone(i));
  }
  std::vector<std::size_t> order(q.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  order.resize(k);
  return order;
}

double knn_loss_from_logits(std::span<const double> logits,
                            std::span<const std::size_t> neighbor_indices,
                            double temperature) {
  if (!(temperature > 0)) throw DomainError("temperature must be positive");
  if (neighbor_indices.empty()) throw DomainError("no neighbor indices");
  if (logits.empty()) throw DimensionError("no logits");
  for (std::size_t j : neighbor_indices) {
    if (j >= logits.size()) throw DimensionError("neighbor index out of range");
  }
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) z[i] = logits[i] / temperature;
  double top = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double v : z) denom += std::exp(v - top);
  double lse = std::log(denom) + top;
  double loss = 0.0;
  for (std::size_t j : neighbor_indices) loss += lse - z[j];
  return loss / static_cast<double>(neighbor_indices.size());
}

KnnGrads knn_loss(std::span<const double> positive_head, const EmbeddingQueue& q,
                  std::span<const std::size_t> neighbor_indices, double temperature) {
  if (q.size() == 0) throw CapacityError("queue is empty");
  if (positive_head.size() != q.head_dim()) {
    throw DimensionError("positive dimension mismatch");
  }
  std::vector<double> logits(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    logits[i] = dot(positive_head, q.head(i));
  }
  KnnGrads out;
  out.loss = knn_loss_from_logits(logits, neighbor_indices, temperature);

  double kinv = 1.0 / static_cast<double>(neighbor_indices.size());
  std::vector<double> z(logits);
  for (double& v : z) v /= temperature;
  double top = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    denom += v;
  }
  std::vector<double> dz(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) dz[i] = z[i] / denom;
  for (std::size_t j : neighbor_indices) dz[j] -= kinv;

  std::size_t dim = q.head_dim();
  out.positive_head.assign(dim, 0.0);
  out.entries.assign(q.size(), std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      out.positive_head[d] += dz[i] * q.head(i)[d] / temperature;
      out.entries[i][d] = dz[i] * positive_head[d] / temperature;
    }
  }
  return out;
}

double total_ssl_loss(double inst, double nn, double aux_weight) {
  if (!(aux_weight >= 0)) throw DomainError("aux weight must be >= 0");
  return inst + aux_weight * nn;
}

}  // namespace mtl::ssl
