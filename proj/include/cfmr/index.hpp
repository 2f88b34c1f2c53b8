#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfmr/anchors.hpp"
#include "cfmr/model.hpp"
#include "cfmr/training.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

// One anchor's concepts, stored at 32-bit precision: cosine ranking is
// insensitive to the narrowing and the file halves in size.
struct IndexEntry {
  GaussianAnchor anchor;
  MatF concepts;  // l_c x d_h
};

struct VideoRecord {
  std::string id;
  double duration = 0.0;
  std::vector<IndexEntry> entries;  // same grid geometry for every video
};

struct ConceptIndex {
  uint32_t d_h = 0;
  uint32_t l_c = 0;
  uint32_t centers = 0;
  uint32_t scales = 0;
  float v_max = 0.0f;
  float gamma = 0.0f;
  uint64_t fingerprint = 0;
  std::vector<VideoRecord> videos;

  const VideoRecord* find(const std::string& video_id) const;
};

// Encode every video under every grid anchor with the trained video encoder.
// Videos are processed concurrently (forward-only); output order and content
// are deterministic.
ConceptIndex build_index(const VideoMap& videos, const AnchorParams& grid,
                         const CfmrModel& model, int threads = 0);

void save_index(const ConceptIndex& index, const std::string& path);
ConceptIndex load_index(const std::string& path);

struct RankedMoment {
  std::string video_id;
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
  double score = 0.0;    // in [-1, 1]
};

// Online path: encode the query text once, rank the designated video's anchor
// concepts by similarity, suppress overlaps, return the top k. An empty
// video_id searches the whole corpus (experimental). nms_iou >= 1 disables
// suppression.
std::vector<RankedMoment> query_index(const ConceptIndex& index, const CfmrModel& model,
                                      const QueryTokens& query, const std::string& video_id,
                                      int k, double nms_iou,
                                      SimMode mode = SimMode::kRowMean);

// Greedy non-maximum suppression over score-sorted moments.
std::vector<RankedMoment> greedy_nms(std::vector<RankedMoment> moments, double iou_threshold);

}  // namespace cfmr
