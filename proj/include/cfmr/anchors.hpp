#pragma once

#include <utility>
#include <vector>

#include "cfmr/types.hpp"

namespace cfmr {

// A candidate moment: a Gaussian over normalized time with the given center
// and width. scale is the 1-based multi-scale index (width = v_max * scale / N).
struct GaussianAnchor {
  double center = 0.5;
  double width = 1.0;
  int scale = 0;
};

// Complement segments shorter than this are not turned into negative anchors.
inline constexpr double kMinNegativeSegment = 0.05;

// Widths below 2/l_v collapse to a single grid cell; encoding clamps them.
inline double effective_width(double width, int l_v) {
  const double floor = 2.0 / static_cast<double>(l_v);
  return width < floor ? floor : width;
}

// Gaussian density sampled at grid positions i / l_v for i = 1..l_v, with the
// width shrunk by the sharpness factor gamma.
Vec density(const GaussianAnchor& anchor, int l_v, double gamma);

struct AnchorSet {
  std::vector<GaussianAnchor> positives;  // shared center, increasing width
  std::vector<GaussianAnchor> negatives;  // complement segments (0, 1, or 2)
};

// Point-guided anchors for one training sample: N positives centered on the
// annotated point plus Gaussian negatives over the complement segments. The
// whole-video view is not an anchor here; it is encoded with uniform weights.
AnchorSet training_anchor_set(double point, double v_max, int n_scales);

// Evenly spaced inference grid: centers at (k + 0.5) / count, N widths each.
std::vector<GaussianAnchor> inference_anchor_grid(int centers, double v_max, int n_scales);

// (t_start, t_end) in seconds, clipped to the video.
std::pair<double, double> anchor_to_interval(const GaussianAnchor& anchor, double duration);

}  // namespace cfmr
