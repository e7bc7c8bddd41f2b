#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtl/label_map.hpp"

namespace mtl::pixaff {

enum class RuleKind { categorical_equality, relative_threshold };

// Pairwise pixel-similarity rule over a dilated square window.
struct AffinityRule {
  RuleKind kind = RuleKind::categorical_equality;
  double threshold = 0.05;  // relative-difference cutoff, continuous maps only
  int radius = 1;           // window radius r: (2r+1)^2 - 1 neighbors
  int dilation = 1;         // stride between ring samples
};

struct AffinitySample {
  std::int64_t p = 0;  // raster index, p < q
  std::int64_t q = 0;
  bool similar = false;
};

// Every unordered in-bounds pixel pair of the dilated neighborhood, raster
// order, with its similar flag. Pairs leaving the image are clipped, never
// padded.
std::vector<AffinitySample> label_affinity_pairs(const LabelMap& map, const AffinityRule& rule);

// Closed-form count of the pairs label_affinity_pairs emits for a geometry.
std::uint64_t dilated_pair_count(std::size_t height, std::size_t width, int radius, int dilation);

// Fraction of pairs whose similar flags agree; both sequences must cover the
// identical pair set in the same order.
double cross_task_correspondence(std::span<const AffinitySample> a,
                                 std::span<const AffinitySample> b);

struct SweepRow {
  int dilation = 1;
  std::size_t task_a = 0;
  std::size_t task_b = 0;
  double correspondence = 0.0;
};

// Correspondence per dilation and unordered task pair (a < b), dilations in
// the order given. All rules must share the window radius so pair sets match.
std::vector<SweepRow> dilation_sweep(std::span<const LabelMap> maps,
                                     std::span<const AffinityRule> rules,
                                     std::span<const int> dilations);

}  // namespace mtl::pixaff
