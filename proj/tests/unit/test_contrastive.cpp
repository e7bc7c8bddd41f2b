#include <doctest.h>

#include <cmath>
#include <vector>

#include "mtl/contrastive.hpp"
#include "mtl/error.hpp"
#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"
#include "support/oracles.hpp"

using namespace mtl::ssl;

namespace {

std::vector<double> random_unit(std::size_t dim, mtl::Rng& rng) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return l2_normalize(v);
}

double loss_of(std::span<const double> anchor, const std::vector<std::vector<double>>& pos,
               const std::vector<std::vector<double>>& neg, double tau) {
  return contrastive_loss(anchor, pos, neg, tau).loss;
}

}  // namespace

TEST_CASE("l2 normalize") {
  std::vector<double> v{3.0, 4.0};
  CHECK(l2_normalize(v) == std::vector<double>{0.6, 0.8});
  std::vector<double> u{1.0, 0.0, 0.0};
  CHECK(l2_normalize(u) == u);
  std::vector<double> scaled{30.0, 40.0};
  CHECK(l2_normalize(scaled) == l2_normalize(v));
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{0.0, 0.0}), mtl::DomainError);
}

TEST_CASE("contrastive loss fixtures") {
  std::vector<double> anchor{1.0, 0.0};
  std::vector<std::vector<double>> pos{{1.0, 0.0}};
  std::vector<std::vector<double>> neg{{0.0, 1.0}};

  ContrastiveGrads g1 = contrastive_loss(anchor, pos, neg, 1.0);
  CHECK(g1.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(g1.loss == doctest::Approx(0.3133).epsilon(1e-4));

  ContrastiveGrads g02 = contrastive_loss(anchor, pos, neg, 0.2);
  CHECK(g02.loss == doctest::Approx(std::log(1.0 + std::exp(-5.0))).epsilon(1e-12));
  CHECK(g02.loss == doctest::Approx(0.00672).epsilon(1e-2));

  CHECK_THROWS_AS(contrastive_loss(anchor, {}, neg, 1.0), mtl::DomainError);
  CHECK_THROWS_AS(contrastive_loss(anchor, pos, neg, 0.0), mtl::DomainError);
  std::vector<std::vector<double>> bad{{1.0, 0.0, 0.0}};
  CHECK_THROWS_AS(contrastive_loss(anchor, bad, neg, 1.0), mtl::DimensionError);
}

TEST_CASE("contrastive loss drops as the positive aligns") {
  std::vector<double> anchor{1.0, 0.0};
  std::vector<std::vector<double>> neg{{0.0, 1.0}};
  double prev = 1e300;
  for (double t = 1.2; t >= -0.05; t -= 0.1) {
    std::vector<std::vector<double>> pos{{std::cos(t), std::sin(t)}};
    double l = loss_of(anchor, pos, neg, 0.5);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("contrastive loss is rotation invariant") {
  mtl::Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> anchor = random_unit(2, rng);
    std::vector<std::vector<double>> pos{random_unit(2, rng), random_unit(2, rng)};
    std::vector<std::vector<double>> neg{random_unit(2, rng), random_unit(2, rng),
                                         random_unit(2, rng)};
    double base = loss_of(anchor, pos, neg, 0.2);

    double th = rng.uniform(0.0, 6.28);
    double c = std::cos(th), s = std::sin(th);
    auto rot = [&](const std::vector<double>& v) {
      return std::vector<double>{c * v[0] - s * v[1], s * v[0] + c * v[1]};
    };
    std::vector<std::vector<double>> rpos, rneg;
    for (const auto& p : pos) rpos.push_back(rot(p));
    for (const auto& n : neg) rneg.push_back(rot(n));
    double rotated = loss_of(rot(anchor), rpos, rneg, 0.2);
    CHECK(rotated == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("contrastive gradients match central differences") {
  mtl::Rng rng(62);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t dim = 8;
    std::size_t np = 1 + rng.below(3);
    std::size_t nn = 1 + rng.below(4);
    double tau = rng.uniform(0.15, 1.0);
    std::vector<double> anchor = random_unit(dim, rng);
    std::vector<std::vector<double>> pos, neg;
    for (std::size_t i = 0; i < np; ++i) pos.push_back(random_unit(dim, rng));
    for (std::size_t i = 0; i < nn; ++i) neg.push_back(random_unit(dim, rng));

    ContrastiveGrads g = contrastive_loss(anchor, pos, neg, tau);

    for (std::size_t d = 0; d < dim; ++d) {
      double fd = oracle::central_diff(
          [&](std::span<const double> a) { return loss_of(a, pos, neg, tau); }, anchor, d);
      CHECK(oracle::rel_err(g.anchor[d], fd) <= 1e-4);
    }
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t d = 0; d < dim; ++d) {
        double fd = oracle::central_diff(
            [&](std::span<const double> v) {
              auto mod = pos;
              mod[p].assign(v.begin(), v.end());
              return loss_of(anchor, mod, neg, tau);
            },
            pos[p], d);
        CHECK(oracle::rel_err(g.positives[p][d], fd) <= 1e-4);
      }
    }
    for (std::size_t n = 0; n < nn; ++n) {
      for (std::size_t d = 0; d < dim; ++d) {
        double fd = oracle::central_diff(
            [&](std::span<const double> v) {
              auto mod = neg;
              mod[n].assign(v.begin(), v.end());
              return loss_of(anchor, pos, mod, tau);
            },
            neg[n], d);
        CHECK(oracle::rel_err(g.negatives[n][d], fd) <= 1e-4);
      }
    }
  }
}

TEST_CASE("momentum update") {
  mtl::Tensor slow = mtl::Tensor::from_values({2}, {1.0, -2.0});
  mtl::Tensor fast = mtl::Tensor::from_values({2}, {3.0, 4.0});
  CHECK(momentum_update(slow, fast, 1.0).data == slow.data);
  CHECK(momentum_update(slow, fast, 0.0).data == fast.data);
  CHECK(momentum_update(fast, fast, 0.37).data == fast.data);

  mtl::Tensor mixed = momentum_update(slow, fast, 0.999);
  CHECK(mixed.data[0] == doctest::Approx(0.999 * 1.0 + 0.001 * 3.0).epsilon(1e-15));

  // Iterating the update contracts toward fast at rate m.
  mtl::Tensor state = slow;
  for (int i = 0; i < 200; ++i) state = momentum_update(state, fast, 0.9);
  double gap = std::abs(state.data[0] - fast.data[0]);
  CHECK(gap <= std::abs(slow.data[0] - fast.data[0]) * std::pow(0.9, 200) + 1e-12);

  CHECK_THROWS_AS(momentum_update(slow, mtl::Tensor::from_values({3}, {1, 2, 3}), 0.5),
                  mtl::DimensionError);
  CHECK_THROWS_AS(momentum_update(slow, fast, 1.5), mtl::DomainError);
}

TEST_CASE("queue is a bounded fifo") {
  EmbeddingQueue q(2, 2);
  CHECK(q.capacity() == 2);
  CHECK(!q.dual());
  std::vector<double> a{1.0, 0.0}, b{0.0, 1.0}, c{-1.0, 0.0};
  q.push(std::vector<std::vector<double>>{a});
  q.push(std::vector<std::vector<double>>{b});
  q.push(std::vector<std::vector<double>>{c});
  REQUIRE(q.size() == 2);
  CHECK(q.head(0) == b);  // oldest surviving entry first
  CHECK(q.head(1) == c);

  // A batch of exactly K replaces everything.
  q.push(std::vector<std::vector<double>>{a, b});
  CHECK(q.size() == 2);
  CHECK(q.head(0) == a);
  CHECK(q.head(1) == b);

  CHECK_THROWS_WITH_AS(q.push(std::vector<std::vector<double>>{{0.5, 0.5}}),
                       doctest::Contains("unit norm"), mtl::DomainError);
  CHECK_THROWS_AS(q.push(std::vector<std::vector<double>>{{1.0, 0.0, 0.0}}),
                  mtl::DimensionError);
  CHECK_THROWS_AS(EmbeddingQueue(0, 2), mtl::DomainError);
}

TEST_CASE("dual queue stays aligned") {
  mtl::Rng rng(63);
  EmbeddingQueue q(5, 2, 3);
  CHECK(q.dual());
  std::vector<std::vector<double>> heads, backs;
  for (int i = 0; i < 12; ++i) {
    heads.push_back(random_unit(2, rng));
    backs.push_back(random_unit(3, rng));
  }
  for (int i = 0; i < 12; i += 3) {
    std::vector<std::vector<double>> hb(heads.begin() + i, heads.begin() + i + 3);
    std::vector<std::vector<double>> bb(backs.begin() + i, backs.begin() + i + 3);
    q.push(hb, bb);
  }
  REQUIRE(q.size() == 5);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(q.head(i) == heads[7 + i]);
    CHECK(q.backbone(i) == backs[7 + i]);
  }

  CHECK_THROWS_AS(q.push(std::vector<std::vector<double>>{random_unit(2, rng)}),
                  mtl::DimensionError);

  EmbeddingQueue single(3, 2);
  CHECK_THROWS_AS(single.push(std::vector<std::vector<double>>{random_unit(2, rng)},
                              std::vector<std::vector<double>>{random_unit(3, rng)}),
                  mtl::DimensionError);
}

TEST_CASE("neighbor mining") {
  mtl::Rng rng(64);
  EmbeddingQueue q(6, 2, 4);
  std::vector<std::vector<double>> heads, backs;
  for (int i = 0; i < 6; ++i) {
    heads.push_back(random_unit(2, rng));
    backs.push_back(random_unit(4, rng));
  }
  q.push(heads, backs);

  // The query itself ranks first.
  auto top = mine_neighbors(backs[3], q, 1);
  CHECK(top == std::vector<std::size_t>{3});

  // k == size gives a full ordering matching a brute-force sort.
  auto all = mine_neighbors(backs[3], q, 6);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < 4; ++d) s += backs[3][d] * q.backbone(i)[d];
    sims.push_back({-s, i});
  }
  std::stable_sort(sims.begin(), sims.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < 6; ++i) CHECK(all[i] == sims[i].second);

  // Exact ties resolve to the lower index.
  EmbeddingQueue tied(3, 2, 2);
  std::vector<double> e{1.0, 0.0};
  tied.push(std::vector<std::vector<double>>{e, e, e}, std::vector<std::vector<double>>{e, e, e});
  CHECK(mine_neighbors(e, tied, 2) == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(mine_neighbors(backs[0], q, 7), mtl::CapacityError);
  CHECK_THROWS_AS(mine_neighbors(backs[0], q, 0), mtl::DomainError);
  EmbeddingQueue head_only(4, 2);
  head_only.push(std::vector<std::vector<double>>{heads[0]});
  CHECK_THROWS_AS(mine_neighbors(backs[0], head_only, 1), mtl::DomainError);
}

TEST_CASE("knn loss fixtures") {
  EmbeddingQueue q(2, 2);
  q.push(std::vector<std::vector<double>>{{1.0, 0.0}, {0.0, 1.0}});
  std::vector<double> h{1.0, 0.0};  // logits (1, 0)
  std::vector<std::size_t> idx{0};
  KnnGrads g = knn_loss(h, q, idx, 1.0);
  CHECK(g.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));

  // All entries identical and all neighbors: uniform softmax, loss = log K.
  EmbeddingQueue same(4, 2);
  std::vector<double> e{1.0, 0.0};
  same.push(std::vector<std::vector<double>>{e, e, e, e});
  std::vector<std::size_t> everyone{0, 1, 2, 3};
  CHECK(knn_loss(e, same, everyone, 1.0).loss ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));

  CHECK_THROWS_AS(knn_loss(h, q, {}, 1.0), mtl::DomainError);
  std::vector<std::size_t> oob{5};
  CHECK_THROWS_AS(knn_loss(h, q, oob, 1.0), mtl::DimensionError);
  CHECK_THROWS_AS(knn_loss(h, q, idx, 0.0), mtl::DomainError);
}

TEST_CASE("knn loss is stable under logit translation") {
  mtl::Rng rng(65);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t m = 3 + rng.below(6);
    std::vector<double> logits;
    for (std::size_t i = 0; i < m; ++i) logits.push_back(rng.uniform(-2.0, 2.0));
    std::vector<std::size_t> idx{0, 1 + rng.below(m - 1)};
    double tau = rng.uniform(0.1, 1.0);
    double base = knn_loss_from_logits(logits, idx, tau);
    double shift = rng.uniform(-40.0, 40.0);
    std::vector<double> shifted = logits;
    for (double& v : shifted) v += shift;
    CHECK(std::abs(knn_loss_from_logits(shifted, idx, tau) - base) <= 1e-10);
  }
}

TEST_CASE("knn gradients match central differences") {
  mtl::Rng rng(66);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t dim = 2 + rng.below(4);
    std::size_t entries = 3 + rng.below(4);
    double tau = rng.uniform(0.15, 1.0);
    EmbeddingQueue q(entries, dim);
    std::vector<std::vector<double>> batch;
    for (std::size_t i = 0; i < entries; ++i) batch.push_back(random_unit(dim, rng));
    q.push(batch);
    std::vector<double> h = random_unit(dim, rng);
    std::vector<std::size_t> idx{rng.below(entries), rng.below(entries)};

    KnnGrads g = knn_loss(h, q, idx, tau);

    // Versus the head vector through the full op.
    for (std::size_t d = 0; d < dim; ++d) {
      double fd = oracle::central_diff(
          [&](std::span<const double> hh) {
            std::vector<double> logits(entries);
            for (std::size_t i = 0; i < entries; ++i) {
              double s = 0.0;
              for (std::size_t k = 0; k < dim; ++k) s += hh[k] * batch[i][k];
              logits[i] = s;
            }
            return knn_loss_from_logits(logits, idx, tau);
          },
          h, d);
      CHECK(oracle::rel_err(g.positive_head[d], fd) <= 1e-4);
    }

    // Versus each queue entry, composed through the logits form so the
    // perturbed vector never has to re-enter the unit-norm queue.
    for (std::size_t e = 0; e < entries; ++e) {
      for (std::size_t d = 0; d < dim; ++d) {
        double fd = oracle::central_diff(
            [&](std::span<const double> ev) {
              std::vector<double> logits(entries);
              for (std::size_t i = 0; i < entries; ++i) {
                const auto& src = i == e ? ev : std::span<const double>(batch[i]);
                double s = 0.0;
                for (std::size_t k = 0; k < dim; ++k) s += h[k] * src[k];
                logits[i] = s;
              }
              return knn_loss_from_logits(logits, idx, tau);
            },
            batch[e], d);
        CHECK(oracle::rel_err(g.entries[e][d], fd) <= 1e-4);
      }
    }
  }
}

TEST_CASE("total loss and defaults") {
  CHECK(total_ssl_loss(1.0, 0.5, 0.4) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(total_ssl_loss(1.0, 0.5, 0.0) == 1.0);
  CHECK(total_ssl_loss(1.0, 0.0, 0.7) == 1.0);
  CHECK_THROWS_AS(total_ssl_loss(1.0, 0.5, -0.1), mtl::DomainError);

  ContrastiveConfig c;
  CHECK(c.temperature == 0.2);
  CHECK(c.momentum == 0.999);
  CHECK(c.neighbors == 20);
  CHECK(c.aux_weight == 0.4);
}
