#include "mtl/pixel_affinity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "mtl/error.hpp"

namespace mtl::pixaff {

namespace {

struct Offset {
  int dx;
  int dy;
};

// Half the neighborhood: (dy, dx) with dy > 0, or dy == 0 and dx > 0. Each
// unordered pair is visited once, from its raster-earlier endpoint.
std::vector<Offset> half_window(int radius, int dilation) {
  if (radius < 1) throw DomainError("radius must be >= 1");
  if (dilation < 1) throw DomainError("dilation must be >= 1");
  std::vector<Offset> out;
  for (int dy = 0; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy == 0 && dx <= 0) continue;
      out.push_back({dx * dilation, dy * dilation});
    }
  }
  return out;
}

bool values_similar(const LabelMap& map, double a, double b, const AffinityRule& rule) {
  if (rule.kind == RuleKind::categorical_equality) {
    if (map.kind != LabelKind::categorical) {
      throw DomainError("categorical rule applied to a continuous map");
    }
    return a == b;
  }
  if (map.kind != LabelKind::continuous) {
    throw DomainError("relative-threshold rule applied to a categorical map");
  }
  double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale <= rule.threshold;
}

}  // namespace

std::vector<AffinitySample> label_affinity_pairs(const LabelMap& map, const AffinityRule& rule) {
  if (rule.kind == RuleKind::relative_threshold && !(rule.threshold >= 0)) {
    throw DomainError("threshold must be >= 0");
  }
  auto offsets = half_window(rule.radius, rule.dilation);
  auto h = static_cast<std::int64_t>(map.height);
  auto w = static_cast<std::int64_t>(map.width);
  std::vector<AffinitySample> out;
  out.reserve(dilated_pair_count(map.height, map.width, rule.radius, rule.dilation));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (const Offset& o : offsets) {
        std::int64_t qx = x + o.dx;
        std::int64_t qy = y + o.dy;
        if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
        AffinitySample s;
        s.p = y * w + x;
        s.q = qy * w + qx;
        s.similar = values_similar(map, map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)),
                                   map.at(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx)), rule);
        out.push_back(s);
      }
    }
  }
  return out;
}

std::uint64_t dilated_pair_count(std::size_t height, std::size_t width, int radius, int dilation) {
  auto offsets = half_window(radius, dilation);
  auto h = static_cast<std::int64_t>(height);
  auto w = static_cast<std::int64_t>(width);
  std::uint64_t total = 0;
  for (const Offset& o : offsets) {
    std::int64_t nx = w - std::abs(std::int64_t{o.dx});
    std::int64_t ny = h - std::int64_t{o.dy};
    if (nx > 0 && ny > 0) {
      total += static_cast<std::uint64_t>(nx) * static_cast<std::uint64_t>(ny);
    }
  }
  return total;
}

double cross_task_correspondence(std::span<const AffinitySample> a,
                                 std::span<const AffinitySample> b) {
  if (a.size() != b.size()) throw DimensionError("pair sequences differ in length");
  if (a.empty()) throw DomainError("no pairs to compare");
  std::uint64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].p != b[i].p || a[i].q != b[i].q) {
      throw DomainError("pair sets diverge at index " + std::to_string(i));
    }
    if (a[i].similar == b[i].similar) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

std::vector<SweepRow> dilation_sweep(std::span<const LabelMap> maps,
                                     std::span<const AffinityRule> rules,
                                     std::span<const int> dilations) {
  if (maps.size() != rules.size()) throw DimensionError("map and rule counts differ");
  if (maps.size() < 2) throw DimensionError("sweep needs at least two tasks");
  if (dilations.empty()) throw DimensionError("no dilations");
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].height != maps[0].height || maps[i].width != maps[0].width) {
      throw DimensionError("maps must share height and width");
    }
    if (rules[i].radius != rules[0].radius) {
      throw DomainError("rules must share the window radius");
    }
  }
  std::vector<SweepRow> rows;
  for (int d : dilations) {
    std::vector<std::vector<AffinitySample>> pairs(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      AffinityRule r = rules[i];
      r.dilation = d;
      pairs[i] = label_affinity_pairs(maps[i], r);
    }
    for (std::size_t a = 0; a < maps.size(); ++a) {
      for (std::size_t b = a + 1; b < maps.size(); ++b) {
        SweepRow row;
        row.dilation = d;
        row.task_a = a;
        row.task_b = b;
        row.correspondence = cross_task_correspondence(pairs[a], pairs[b]);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

}  // namespace mtl::pixaff
