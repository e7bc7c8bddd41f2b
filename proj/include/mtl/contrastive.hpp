#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::ssl {

// Numeric defaults of the training setup these ops model.
struct ContrastiveConfig {
  double temperature = 0.2;
  double momentum = 0.999;        // 0.995 when multi-crop augmentation is on
  std::size_t neighbors = 20;     // k
  double aux_weight = 0.4;        // lambda on the neighbor loss
};

std::vector<double> l2_normalize(std::span<const double> v);

struct ContrastiveGrads {
  double loss = 0.0;
  std::vector<double> anchor;
  std::vector<std::vector<double>> positives;
  std::vector<std::vector<double>> negatives;
};

// loss = -sum over positives p of log( exp(a.p/t) / (exp(a.p/t) +
// sum_n exp(a.n/t)) ), log-sum-exp with max-subtraction. Gradients are taken
// w.r.t. the embedding vectors as free variables.
ContrastiveGrads contrastive_loss(std::span<const double> anchor,
                                  std::span<const std::vector<double>> positives,
                                  std::span<const std::vector<double>> negatives,
                                  double temperature);

// m * slow + (1 - m) * fast, elementwise.
Tensor momentum_update(const Tensor& slow, const Tensor& fast, double m);

// Fixed-capacity FIFO of unit-norm embeddings; optionally dual, keeping a
// backbone-space entry aligned with every head-space entry. Index 0 is the
// oldest entry. Single writer; copies serve as read snapshots.
class EmbeddingQueue {
 public:
  EmbeddingQueue(std::size_t capacity, std::size_t head_dim);
  EmbeddingQueue(std::size_t capacity, std::size_t head_dim, std::size_t backbone_dim);

  // Appends the batch and evicts from the front down to capacity; dual
  // queues evict in lockstep. Vectors must be unit norm within 1e-6.
  void push(std::span<const std::vector<double>> head_batch,
            std::span<const std::vector<double>> backbone_batch = {});

  std::size_t size() const { return head_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool dual() const { return dual_; }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t backbone_dim() const { return backbone_dim_; }
  const std::vector<double>& head(std::size_t i) const { return head_[i]; }
  const std::vector<double>& backbone(std::size_t i) const { return backbone_[i]; }

 private:
  std::size_t capacity_;
  std::size_t head_dim_;
  std::size_t backbone_dim_;
  bool dual_;
  std::deque<std::vector<double>> head_;
  std::deque<std::vector<double>> backbone_;
};

// Indices of the k largest backbone-space cosine similarities, descending,
// ties to the lower index. Queue must be dual and hold at least k entries.
std::vector<std::size_t> mine_neighbors(std::span<const double> query_backbone,
                                        const EmbeddingQueue& q, std::size_t k);

struct KnnGrads {
  double loss = 0.0;
  std::vector<double> positive_head;
  std::vector<std::vector<double>> entries;  // one per queue slot
};

// Cross-entropy against the head-space softmax over the whole queue:
// loss = (1/k) sum over neighbor indices j of -log softmax(l/t)_j where
// l_j = positive_head . head_entry_j.
KnnGrads knn_loss(std::span<const double> positive_head, const EmbeddingQueue& q,
                  std::span<const std::size_t> neighbor_indices, double temperature);

// Same loss on precomputed pre-temperature logits; the vector form above
// builds its logits and defers here.
double knn_loss_from_logits(std::span<const double> logits,
                            std::span<const std::size_t> neighbor_indices, double temperature);

// inst + aux_weight * nn.
double total_ssl_loss(double inst, double nn, double aux_weight);

}  // namespace mtl::ssl
