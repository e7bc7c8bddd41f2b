#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mtl/rng.hpp"

namespace mtl::ssl {

// Axis-aligned crop in continuous pixel coordinates. Keeping the geometry
// continuous makes sampled areas exact (integer rounding would push drawn
// area fractions outside the requested scale range).
struct CropRect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double source_w = 0.0;
  double source_h = 0.0;

  double area() const { return w * h; }
  bool valid() const;  // inside the source, w and h >= 1, fp slack 1e-9
};

using ScaleRange = std::pair<double, double>;

inline constexpr ScaleRange kTwoCropScale{0.2, 1.0};
inline constexpr ScaleRange kAnchorScale{0.20, 1.00};
inline constexpr ScaleRange kSmallCropScale{0.05, 0.14};
inline constexpr ScaleRange kDefaultAspect{3.0 / 4.0, 4.0 / 3.0};

// Intersection over union; 0 when disjoint, both rects over the same source.
double rect_iou(const CropRect& a, const CropRect& b);

// Area-and-aspect crop sampling: target area uniform in scale*W*H, aspect
// log-uniform; up to 10 attempts for a fitting crop, then the centered crop
// of the aspect-clamped size. Deterministic per seed.
CropRect sample_resized_crop(double source_w, double source_h, ScaleRange scale,
                             ScaleRange aspect, Rng& rng);
CropRect sample_resized_crop(double source_w, double source_h, ScaleRange scale,
                             ScaleRange aspect, std::uint64_t seed);

// n small crops from the anchor's source, rejection-sampled until each
// overlaps the anchor (intersection > 0), or lies fully inside it in strict
// mode. Throws GeometryError after 1000 consecutive rejections.
std::vector<CropRect> constrained_multicrop(const CropRect& anchor, std::size_t n,
                                            ScaleRange small_scale, std::uint64_t seed,
                                            bool strict_containment = false,
                                            ScaleRange aspect = kDefaultAspect);

struct IouStats {
  std::array<std::uint64_t, 20> histogram{};  // bins over [0,1], top edge inclusive
  std::uint64_t samples = 0;                  // accepted pairs, equals histogram sum
  std::uint64_t attempts = 0;                 // drawn pairs including rejections
  double acceptance_rate = 1.0;               // samples / attempts
};

// IoU distribution of independently sampled crop pairs; when threshold is
// set, pairs are rejection-sampled until IoU < threshold.
IouStats iou_pair_stats(double source_w, double source_h, ScaleRange scale,
                        std::optional<double> threshold, std::size_t samples,
                        std::uint64_t seed, ScaleRange aspect = kDefaultAspect);

}  // namespace mtl::ssl
