#include "mtl/crops.hpp"

#include <algorithm>
#include <cmath>

#include "mtl/error.hpp"

namespace mtl::ssl {

namespace {

double intersection_area(const CropRect& a, const CropRect& b) {
  double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

bool contained_in(const CropRect& inner, const CropRect& outer) {
  return inner.x >= outer.x && inner.y >= outer.y &&
         inner.x + inner.w <= outer.x + outer.w &&
         inner.y + inner.h <= outer.y + outer.h;
}

void check_ranges(ScaleRange scale, ScaleRange aspect) {
  if (!(scale.first > 0) || !(scale.first <= scale.second) || !(scale.second <= 1.0)) {
    throw DomainError("scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(aspect.first > 0) || !(aspect.first <= aspect.second)) {
    throw DomainError("aspect range must satisfy 0 < lo <= hi");
  }
}

}  // namespace

bool CropRect::valid() const {
  if (!(source_w > 0) || !(source_h > 0)) return false;
  double ex = 1e-9 * std::max(1.0, source_w);
  double ey = 1e-9 * std::max(1.0, source_h);
  return w >= 1.0 - ex && h >= 1.0 - ey && x >= -ex && y >= -ey &&
         x + w <= source_w + ex && y + h <= source_h + ey;
}

double rect_iou(const CropRect& a, const CropRect& b) {
  double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

CropRect sample_resized_crop(double source_w, double source_h, ScaleRange scale,
                             ScaleRange aspect, Rng& rng) {
  if (!(source_w >= 1.0) || !(source_h >= 1.0)) {
    throw GeometryError("source smaller than one pixel");
  }
  check_ranges(scale, aspect);
  double full = source_w * source_h;
  CropRect r;
  r.source_w = source_w;
  r.source_h = source_h;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double area = rng.uniform(scale.first, scale.second) * full;
    double ratio = rng.log_uniform(aspect.first, aspect.second);
    double w = std::sqrt(area * ratio);
    double h = std::sqrt(area / ratio);
    if (w >= 1.0 && w <= source_w && h >= 1.0 && h <= source_h) {
      r.w = w;
      r.h = h;
      r.x = rng.uniform(0.0, source_w - w);
      r.y = rng.uniform(0.0, source_h - h);
      return r;
    }
  }
  // Centered fallback at the nearest representable aspect.
  double in_ratio = source_w / source_h;
  if (in_ratio < aspect.first) {
    r.w = source_w;
    r.h = source_w / aspect.first;
  } else if (in_ratio > aspect.second) {
    r.h = source_h;
    r.w = source_h * aspect.second;
  } else {
    r.w = source_w;
    r.h = source_h;
  }
  r.x = (source_w - r.w) / 2.0;
  r.y = (source_h - r.h) / 2.0;
  if (!r.valid()) throw GeometryError("no crop fits the requested geometry");
  return r;
}

CropRect sample_resized_crop(double source_w, double source_h, ScaleRange scale,
                             ScaleRange aspect, std::uint64_t seed) {
  Rng rng(seed);
  return sample_resized_crop(source_w, source_h, scale, aspect, rng);
}

std::vector<CropRect> constrained_multicrop(const CropRect& anchor, std::size_t n,
                                            ScaleRange small_scale, std::uint64_t seed,
                                            bool strict_containment, ScaleRange aspect) {
  if (!anchor.valid()) throw GeometryError("anchor is not a valid crop");
  if (n == 0) throw DomainError("need at least one crop");
  Rng rng(seed);
  std::vector<CropRect> out;
  out.reserve(n);
  std::size_t consecutive = 0;
  while (out.size() < n) {
    CropRect c = sample_resized_crop(anchor.source_w, anchor.source_h, small_scale, aspect, rng);
    bool ok = strict_containment ? contained_in(c, anchor)
                                 : intersection_area(anchor, c) > 0.0;
    if (ok) {
      out.push_back(c);
      consecutive = 0;
    } else if (++consecutive >= 1000) {
      throw GeometryError("1000 consecutive rejections; the anchor leaves no room for a crop");
    }
  }
  return out;
}

IouStats iou_pair_stats(double source_w, double source_h, ScaleRange scale,
                        std::optional<double> threshold, std::size_t samples,
                        std::uint64_t seed, ScaleRange aspect) {
  if (samples == 0) throw DomainError("samples must be >= 1");
  if (threshold && !(*threshold > 0.0)) {
    throw GeometryError("threshold must be positive; overlap cannot go below zero");
  }
  constexpr std::uint64_t kPairCap = 100000;
  Rng rng(seed);
  IouStats st;
  for (std::size_t i = 0; i < samples; ++i) {
    std::uint64_t pair_attempts = 0;
    for (;;) {
      ++st.attempts;
      ++pair_attempts;
      CropRect a = sample_resized_crop(source_w, source_h, scale, aspect, rng);
      CropRect b = sample_resized_crop(source_w, source_h, scale, aspect, rng);
      double iou = rect_iou(a, b);
      if (!threshold || iou < *threshold) {
        auto bin = static_cast<std::size_t>(iou * 20.0);
        ++st.histogram[std::min<std::size_t>(19, bin)];
        ++st.samples;
        break;
      }
      if (pair_attempts >= kPairCap) {
        throw GeometryError("could not draw a crop pair under the overlap threshold");
      }
    }
  }
  st.acceptance_rate = static_cast<double>(st.samples) / static_cast<double>(st.attempts);
  return st;
}

}  // namespace mtl::ssl
