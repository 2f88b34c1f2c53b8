#pragma once

#include <cstdint>

#include "cfmr/model.hpp"
#include "cfmr/training.hpp"

namespace cfmr {

// Analytical multiply-add accounting (1 multiply-add = 2 FLOPs, projections
// counted as 2*t*m*n; activations and normalizations at 1 FLOP per element).
// The offline side is the per-video cost of filling the concept index: one
// video-encoder pass per grid anchor. The online side is one text-encoder
// pass plus concept projection plus cosine scoring over the grid, and never
// depends on the video length.
struct FlopsReport {
  uint64_t offline_flops = 0;
  uint64_t online_flops = 0;
  int64_t parameter_count = 0;
};

FlopsReport flops_report(const EncoderConfig& cfg, const AnchorParams& grid, int l_v);

}  // namespace cfmr
