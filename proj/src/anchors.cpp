#include "cfmr/anchors.hpp"

#include <algorithm>
#include <cmath>

#include "cfmr/errors.hpp"

namespace cfmr {

namespace {
constexpr double kSqrt2Pi = 2.506628274631000502415765284811;
}

Vec density(const GaussianAnchor& anchor, int l_v, double gamma) {
  if (l_v < 1) throw ValidationError("density: l_v must be >= 1");
  if (gamma <= 0.0) throw ValidationError("density: gamma must be positive");
  if (anchor.width <= 0.0) throw ValidationError("density: anchor width must be positive");
  const double sigma = anchor.width / gamma;
  const double norm = 1.0 / (kSqrt2Pi * sigma);
  Vec p(l_v);
  for (int i = 1; i <= l_v; ++i) {
    const double d = static_cast<double>(i) / static_cast<double>(l_v) - anchor.center;
    p(i - 1) = norm * std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  return p;
}

AnchorSet training_anchor_set(double point, double v_max, int n_scales) {
  if (point < 0.0 || point > 1.0)
    throw ValidationError("training_anchor_set: point outside [0, 1]");
  if (n_scales < 1) throw ValidationError("training_anchor_set: need at least one scale");
  if (v_max <= 0.0) throw ValidationError("training_anchor_set: v_max must be positive");

  AnchorSet set;
  for (int n = 1; n <= n_scales; ++n) {
    set.positives.push_back(
        {point, v_max * static_cast<double>(n) / static_cast<double>(n_scales), n});
  }

  // One Gaussian negative per complement segment, centered on the segment
  // midpoint with width equal to its length. Near-boundary slivers are dropped.
  const double left_end = point - v_max / 2.0;
  if (left_end >= kMinNegativeSegment)
    set.negatives.push_back({left_end / 2.0, left_end, 0});
  const double right_start = point + v_max / 2.0;
  const double right_len = 1.0 - right_start;
  if (right_len >= kMinNegativeSegment)
    set.negatives.push_back({right_start + right_len / 2.0, right_len, 0});
  return set;
}

std::vector<GaussianAnchor> inference_anchor_grid(int centers, double v_max, int n_scales) {
  if (centers < 1) throw ValidationError("inference_anchor_grid: need at least one center");
  if (n_scales < 1) throw ValidationError("inference_anchor_grid: need at least one scale");
  std::vector<GaussianAnchor> grid;
  grid.reserve(static_cast<size_t>(centers) * n_scales);
  for (int k = 0; k < centers; ++k) {
    const double e = (static_cast<double>(k) + 0.5) / static_cast<double>(centers);
    for (int n = 1; n <= n_scales; ++n) {
      grid.push_back({e, v_max * static_cast<double>(n) / static_cast<double>(n_scales), n});
    }
  }
  return grid;
}

std::pair<double, double> anchor_to_interval(const GaussianAnchor& anchor, double duration) {
  if (duration <= 0.0) throw ValidationError("anchor_to_interval: duration must be positive");
  const double t_s = std::max(0.0, anchor.center - anchor.width / 2.0) * duration;
  const double t_e = std::min(1.0, anchor.center + anchor.width / 2.0) * duration;
  return {t_s, t_e};
}

}  // namespace cfmr
