#include "cfmr/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "cfmr/errors.hpp"

namespace cfmr {

double iou(const Interval& a, const Interval& b) {
  if (a.start >= a.end || b.start >= b.end)
    throw ValidationError("iou: degenerate interval");
  const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return inter / uni;
}

double recall_at(const std::vector<std::vector<RankedMoment>>& predictions,
                 const std::vector<Interval>& truths, int k, double iou_threshold) {
  if (predictions.size() != truths.size())
    throw ValidationError("recall_at: need one prediction list per truth");
  if (k < 1) throw ValidationError("recall_at: k must be >= 1");
  if (predictions.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& list = predictions[i];
    const size_t limit = std::min(list.size(), static_cast<size_t>(k));
    for (size_t j = 0; j < limit; ++j) {
      if (iou({list[j].t_start, list[j].t_end}, truths[i]) >= iou_threshold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

EvalResult evaluate(const std::vector<std::vector<RankedMoment>>& predictions,
                    const std::vector<Interval>& truths, const std::vector<int>& ks,
                    const std::vector<double>& iou_thresholds) {
  EvalResult result;
  result.sample_count = truths.size();
  for (int k : ks)
    for (double m : iou_thresholds) result.recall[{k, m}] = recall_at(predictions, truths, k, m);

  // Structural sanity: recall grows with k and shrinks with the threshold.
  for (size_t a = 0; a + 1 < ks.size(); ++a) {
    for (double m : iou_thresholds) {
      const auto [lo_k, hi_k] = std::minmax(ks[a], ks[a + 1]);
      if (result.recall[{lo_k, m}] > result.recall[{hi_k, m}] + 1e-12)
        throw NumericError("evaluate: recall not monotone in k");
    }
  }
  for (int k : ks) {
    for (size_t a = 0; a + 1 < iou_thresholds.size(); ++a) {
      const auto [lo_m, hi_m] = std::minmax(iou_thresholds[a], iou_thresholds[a + 1]);
      if (result.recall[{k, hi_m}] > result.recall[{k, lo_m}] + 1e-12)
        throw NumericError("evaluate: recall not monotone in iou threshold");
    }
  }
  return result;
}

void export_concepts(const ConceptIndex& index,
                     const std::vector<std::pair<std::string, Mat>>& query_concepts,
                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open concept export file: " + path);
  os << "modality,source,concept";
  for (uint32_t d = 0; d < index.d_h; ++d) os << ",c" << d;
  os << "\n";

  char buf[64];
  const auto write_row = [&](const char* modality, const std::string& source, int concept_no,
                             const auto& row) {
    os << modality << "," << source << "," << concept_no;
    for (Eigen::Index d = 0; d < row.size(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row(d)));
      os << "," << buf;
    }
    os << "\n";
  };

  for (const VideoRecord& v : index.videos) {
    for (size_t e = 0; e < v.entries.size(); ++e) {
      const MatF& c = v.entries[e].concepts;
      for (Eigen::Index r = 0; r < c.rows(); ++r)
        write_row("video", v.id + "#" + std::to_string(e), static_cast<int>(r), c.row(r));
    }
  }
  for (const auto& [id, c] : query_concepts) {
    if (static_cast<uint32_t>(c.cols()) != index.d_h)
      throw ValidationError("export_concepts: query concept dim mismatch");
    for (Eigen::Index r = 0; r < c.rows(); ++r)
      write_row("text", id, static_cast<int>(r), c.row(r));
  }
  if (!os) throw FormatError("failed writing concept export: " + path);
}

}  // namespace cfmr
