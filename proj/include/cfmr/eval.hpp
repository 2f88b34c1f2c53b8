#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cfmr/index.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

// Temporal intersection over union; disjoint intervals score 0.
double iou(const Interval& a, const Interval& b);

// Fraction of samples whose top-k predictions contain a moment with
// IoU >= threshold against the truth. Short prediction lists are used as-is.
double recall_at(const std::vector<std::vector<RankedMoment>>& predictions,
                 const std::vector<Interval>& truths, int k, double iou_threshold);

struct EvalResult {
  // (k, iou threshold) -> recall
  std::map<std::pair<int, double>, double> recall;
  size_t sample_count = 0;
};

// Full metric table; verifies the structural monotonicity of the table
// (recall non-decreasing in k, non-increasing in the threshold).
EvalResult evaluate(const std::vector<std::vector<RankedMoment>>& predictions,
                    const std::vector<Interval>& truths, const std::vector<int>& ks,
                    const std::vector<double>& iou_thresholds);

// One CSV row per concept vector: modality, source id, concept number, then
// the d_h component values.
void export_concepts(const ConceptIndex& index,
                     const std::vector<std::pair<std::string, Mat>>& query_concepts,
                     const std::string& path);

}  // namespace cfmr
