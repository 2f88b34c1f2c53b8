#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cfmr/autodiff.hpp"
#include "cfmr/model.hpp"
#include "cfmr/reconstructor.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

enum class SimMode { kRowMean, kFlat };

// Concept-set similarity: mean over rows of cosine (default), or the cosine
// of the flattened matrices. All-zero vectors contribute similarity 0.
double sim(const Mat& a, const Mat& b, SimMode mode = SimMode::kRowMean);
ad::Var sim(ad::Tape& tape, ad::Var a, ad::Var b, SimMode mode = SimMode::kRowMean);

// Two similarity hinges plus the MSE pulling the optimal anchor's concepts
// onto the query's. The negative-anchor similarity is averaged; an empty
// negative list drops the first hinge.
double cma_loss(const Mat& c_optimal, const std::vector<Mat>& c_negatives,
                const Mat& c_whole, const Mat& c_query, double alpha3, double alpha4,
                SimMode mode = SimMode::kRowMean);
ad::Var cma_loss(ad::Tape& tape, ad::Var c_optimal, const std::vector<ad::Var>& c_negatives,
                 ad::Var c_whole, ad::Var c_query, double alpha3, double alpha4,
                 SimMode mode = SimMode::kRowMean);

double total_loss(double conc, double cma, double rec, double pcl, double beta1,
                  double beta2);
ad::Var total_loss(ad::Tape& tape, ad::Var conc, ad::Var cma, ad::Var rec, ad::Var pcl,
                   double beta1, double beta2);

struct AnchorParams {
  double gamma = 9.0;
  double v_max = 0.55;
  int scales = 3;   // N
  int centers = 8;  // inference grid centers
};

struct TrainConfig {
  uint64_t seed = 7;
  int epochs = 30;
  int patience = 5;  // early stopping on held-out R@1 (ignored without held-out data)
  int batch_size = 32;
  double learning_rate = 4e-4;
  double mask_ratio = 1.0 / 3.0;
  double alpha1 = 0.2, alpha2 = 0.1;  // reconstruction-loss margins, alpha1 > alpha2
  double alpha3 = 0.1, alpha4 = 0.2;  // similarity margins, alpha3 <= alpha4
  double beta1 = 1.0, beta2 = 1.0;
  bool use_conc = true, use_rec = true, use_pcl = true, use_cma = true;
  double nms_iou = 0.7;
  SimMode sim_mode = SimMode::kRowMean;
  AnchorParams anchors;
  EncoderConfig encoder;

  void validate() const;
};

struct SampleLossParts {
  double conc = 0.0, rec = 0.0, pcl = 0.0, cma = 0.0, total = 0.0;
  int optimal_anchor = 0;
};

// Full per-sample objective on one tape: anchor generation from the point,
// both encoders, reconstruction under every anchor view, optimal-anchor
// selection, and the assembled weighted loss. Exposed for gradient checks.
ad::Var sample_total_loss(ad::Tape& tape, const CfmrModel& model,
                          const FeatureSequence& video, const PointSample& sample,
                          const MaskedQuery& masked, const TrainConfig& cfg,
                          SampleLossParts* parts = nullptr);

struct EpochLog {
  int epoch = 0;
  double conc = 0.0, rec = 0.0, pcl = 0.0, cma = 0.0, total = 0.0;
  std::optional<double> heldout_r1;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;          // epoch whose parameters were kept (-1: final)
  double best_r1 = 0.0;
};

// Mini-batch training over point-annotated samples. When heldout is
// non-empty, R@1 (IoU 0.5) on it is logged each epoch, drives early stopping,
// and the best parameters are restored at the end. log_stream, when given,
// receives one JSON object per epoch.
TrainResult train(CfmrModel& model, const VideoMap& videos,
                  const std::vector<PointSample>& samples,
                  const std::vector<EvalSample>& heldout, const TrainConfig& cfg,
                  std::ostream* log_stream = nullptr);

}  // namespace cfmr
