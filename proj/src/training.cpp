#include "cfmr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfmr/encoders.hpp"
#include "cfmr/errors.hpp"
#include "cfmr/eval.hpp"
#include "cfmr/index.hpp"

namespace cfmr {

using ad::Tape;
using ad::Var;

double sim(const Mat& a, const Mat& b, SimMode mode) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("sim: concept sets must have equal shapes");
  if (mode == SimMode::kFlat) {
    const double na = a.norm();
    const double nb = b.norm();
    return (na > 0.0 && nb > 0.0) ? a.cwiseProduct(b).sum() / (na * nb) : 0.0;
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double na = a.row(i).norm();
    const double nb = b.row(i).norm();
    if (na > 0.0 && nb > 0.0) acc += a.row(i).dot(b.row(i)) / (na * nb);
  }
  return acc / static_cast<double>(a.rows());
}

Var sim(Tape& t, Var a, Var b, SimMode mode) {
  return mode == SimMode::kFlat ? t.flat_cosine(a, b) : t.row_cosine_mean(a, b);
}

double cma_loss(const Mat& c_optimal, const std::vector<Mat>& c_negatives,
                const Mat& c_whole, const Mat& c_query, double alpha3, double alpha4,
                SimMode mode) {
  if (alpha3 < 0.0 || alpha4 < 0.0)
    throw ValidationError("cma_loss: margins must be non-negative");
  const double sim_o = sim(c_optimal, c_query, mode);
  double loss = std::max(sim(c_whole, c_query, mode) - sim_o + alpha4, 0.0);
  if (!c_negatives.empty()) {
    double sim_n = 0.0;
    for (const Mat& c : c_negatives) sim_n += sim(c, c_query, mode);
    sim_n /= static_cast<double>(c_negatives.size());
    loss += std::max(sim_n - sim_o + alpha3, 0.0);
  }
  const Mat diff = c_optimal - c_query;
  loss += diff.squaredNorm() / static_cast<double>(diff.size());
  return loss;
}

Var cma_loss(Tape& t, Var c_optimal, const std::vector<Var>& c_negatives, Var c_whole,
             Var c_query, double alpha3, double alpha4, SimMode mode) {
  if (alpha3 < 0.0 || alpha4 < 0.0)
    throw ValidationError("cma_loss: margins must be non-negative");
  Var sim_o = sim(t, c_optimal, c_query, mode);
  Var loss = t.relu(t.add_scalar(t.sub(sim(t, c_whole, c_query, mode), sim_o), alpha4));
  if (!c_negatives.empty()) {
    Var sim_n = sim(t, c_negatives[0], c_query, mode);
    for (size_t i = 1; i < c_negatives.size(); ++i)
      sim_n = t.add(sim_n, sim(t, c_negatives[i], c_query, mode));
    sim_n = t.scale(sim_n, 1.0 / static_cast<double>(c_negatives.size()));
    loss = t.add(loss, t.relu(t.add_scalar(t.sub(sim_n, sim_o), alpha3)));
  }
  const double n = static_cast<double>(t.value(c_optimal).size());
  Var mse = t.scale(t.frobenius_sq(t.sub(c_optimal, c_query)), 1.0 / n);
  return t.add(loss, mse);
}

double total_loss(double conc, double cma, double rec, double pcl, double beta1,
                  double beta2) {
  return conc + cma + beta1 * rec + beta2 * pcl;
}

Var total_loss(Tape& t, Var conc, Var cma, Var rec, Var pcl, double beta1, double beta2) {
  return t.add(t.add(conc, cma), t.add(t.scale(rec, beta1), t.scale(pcl, beta2)));
}

void TrainConfig::validate() const {
  encoder.validate();
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (patience < 0) throw ValidationError("train config: patience must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ValidationError("train config: learning_rate must be > 0");
  if (mask_ratio <= 0.0 || mask_ratio > 1.0)
    throw ValidationError("train config: mask_ratio must be in (0, 1]");
  if (alpha1 < 0.0 || alpha2 < 0.0 || alpha3 < 0.0 || alpha4 < 0.0)
    throw ValidationError("train config: margins must be non-negative");
  if (alpha1 <= alpha2)
    throw ValidationError("train config: alpha1 must exceed alpha2");
  if (alpha3 > alpha4)
    throw ValidationError("train config: alpha3 must not exceed alpha4");
  if (nms_iou <= 0.0) throw ValidationError("train config: nms_iou must be positive");
  if (anchors.gamma <= 0.0 || anchors.v_max <= 0.0 || anchors.v_max > 1.0)
    throw ValidationError("train config: anchor gamma/v_max out of range");
  if (anchors.scales < 1 || anchors.centers < 1)
    throw ValidationError("train config: anchor scales/centers must be >= 1");
}

Var sample_total_loss(Tape& t, const CfmrModel& model, const FeatureSequence& video,
                      const PointSample& sample, const MaskedQuery& masked,
                      const TrainConfig& cfg, SampleLossParts* parts) {
  const int l_v = static_cast<int>(video.features.rows());
  const AnchorSet anchors =
      training_anchor_set(sample.point, cfg.anchors.v_max, cfg.anchors.scales);

  TextEncoding text = encode_text(t, model, sample.query);

  std::vector<Var> pos_concepts, pos_nll;
  std::vector<double> pos_losses;
  for (const GaussianAnchor& anchor : anchors.positives) {
    const Vec dens = anchor_density(anchor, l_v, cfg.anchors.gamma);
    Var c = encode_video(t, model, video.features, &dens);
    Var nll = reconstruction_nll(t, reconstruct(t, model, c, masked), masked);
    pos_concepts.push_back(c);
    pos_nll.push_back(nll);
    pos_losses.push_back(t.scalar_value(nll));
  }
  const int optimal = select_optimal_anchor(anchors.positives, pos_losses);

  std::vector<Var> neg_concepts, neg_nll;
  for (const GaussianAnchor& anchor : anchors.negatives) {
    const Vec dens = anchor_density(anchor, l_v, cfg.anchors.gamma);
    Var c = encode_video(t, model, video.features, &dens);
    neg_concepts.push_back(c);
    neg_nll.push_back(reconstruction_nll(t, reconstruct(t, model, c, masked), masked));
  }

  Var c_whole = encode_video(t, model, video.features, nullptr);
  Var nll_whole = reconstruction_nll(t, reconstruct(t, model, c_whole, masked), masked);
  Var nll_query =
      reconstruction_nll(t, reconstruct(t, model, text.concepts, masked), masked);

  Var conc = t.add(diversity_loss(t, pos_concepts[optimal]),
                   diversity_loss(t, text.concepts));
  Var rec = t.add(pos_nll[optimal], nll_query);

  std::optional<Var> neg_mean;
  if (!neg_nll.empty()) {
    Var s = neg_nll[0];
    for (size_t i = 1; i < neg_nll.size(); ++i) s = t.add(s, neg_nll[i]);
    neg_mean = t.scale(s, 1.0 / static_cast<double>(neg_nll.size()));
  }
  Var pcl = pcl_loss(t, pos_nll[optimal], neg_mean, nll_whole, cfg.alpha1, cfg.alpha2);
  Var cma = cma_loss(t, pos_concepts[optimal], neg_concepts, c_whole, text.concepts,
                     cfg.alpha3, cfg.alpha4, cfg.sim_mode);

  const Var zero = t.scalar(0.0);
  Var conc_used = cfg.use_conc ? conc : zero;
  Var cma_used = cfg.use_cma ? cma : zero;
  Var rec_used = cfg.use_rec ? rec : zero;
  Var pcl_used = cfg.use_pcl ? pcl : zero;
  Var total = total_loss(t, conc_used, cma_used, rec_used, pcl_used, cfg.beta1, cfg.beta2);

  if (parts) {
    parts->conc = t.scalar_value(conc_used);
    parts->rec = t.scalar_value(rec_used);
    parts->pcl = t.scalar_value(pcl_used);
    parts->cma = t.scalar_value(cma_used);
    parts->total = t.scalar_value(total);
    parts->optimal_anchor = optimal;
  }
  return total;
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1) + 0xBF58476D1CE4E5B9ULL * (c + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

double heldout_recall_at_1(const CfmrModel& model, const VideoMap& videos,
                           const std::vector<EvalSample>& heldout, const TrainConfig& cfg) {
  VideoMap used;
  for (const EvalSample& s : heldout) {
    auto it = videos.find(s.video_id);
    if (it == videos.end())
      throw ValidationError("held-out sample references unknown video " + s.video_id);
    used.insert(*it);
  }
  const ConceptIndex index = build_index(used, cfg.anchors, model);
  std::vector<std::vector<RankedMoment>> predictions;
  std::vector<Interval> truths;
  predictions.reserve(heldout.size());
  for (const EvalSample& s : heldout) {
    predictions.push_back(
        query_index(index, model, s.query, s.video_id, 1, cfg.nms_iou, cfg.sim_mode));
    truths.push_back({s.t_start, s.t_end});
  }
  return recall_at(predictions, truths, 1, 0.5);
}

nlohmann::json epoch_json(const EpochLog& log) {
  nlohmann::json j{{"epoch", log.epoch}, {"l_conc", log.conc},   {"l_rec", log.rec},
                   {"l_pcl", log.pcl},   {"l_cma", log.cma},     {"l_total", log.total}};
  if (log.heldout_r1)
    j["heldout_r1"] = *log.heldout_r1;
  else
    j["heldout_r1"] = nullptr;
  return j;
}

}  // namespace

TrainResult train(CfmrModel& model, const VideoMap& videos,
                  const std::vector<PointSample>& samples,
                  const std::vector<EvalSample>& heldout, const TrainConfig& cfg,
                  std::ostream* log_stream) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("train: empty corpus");
  for (const PointSample& s : samples) {
    if (videos.find(s.video_id) == videos.end())
      throw ValidationError("train: sample references unknown video " + s.video_id);
    if (s.point < 0.0 || s.point > 1.0)
      throw ValidationError("train: annotation point outside [0, 1]");
  }

  Adam adam(model.parameters(), {cfg.learning_rate});
  Rng rng(cfg.seed);
  TrainResult result;

  std::vector<Mat> best_values;
  double best_r1 = -1.0;
  int best_epoch = -1;
  int epochs_since_best = 0;

  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog log;
    log.epoch = epoch;

    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const size_t batch_end = std::min(order.size(), at + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - at);
      for (size_t b = at; b < batch_end; ++b) {
        const PointSample& sample = samples[order[b]];
        const FeatureSequence& video = videos.at(sample.video_id);
        const MaskedQuery masked = mask_query(
            sample.query, cfg.mask_ratio,
            mix_seed(cfg.seed, static_cast<uint64_t>(epoch), order[b]));

        Tape tape;
        SampleLossParts parts;
        Var loss = sample_total_loss(tape, model, video, sample, masked, cfg, &parts);
        if (!std::isfinite(parts.total)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", sample " << order[b]
             << " (video " << sample.video_id << ", point " << sample.point
             << "): conc=" << parts.conc << " rec=" << parts.rec << " pcl=" << parts.pcl
             << " cma=" << parts.cma;
          throw NumericError(os.str());
        }
        tape.backward(tape.scale(loss, inv_batch));

        log.conc += parts.conc;
        log.rec += parts.rec;
        log.pcl += parts.pcl;
        log.cma += parts.cma;
        log.total += parts.total;
      }
      adam.step();
    }

    const double inv_n = 1.0 / static_cast<double>(samples.size());
    log.conc *= inv_n;
    log.rec *= inv_n;
    log.pcl *= inv_n;
    log.cma *= inv_n;
    log.total *= inv_n;

    if (!heldout.empty()) {
      log.heldout_r1 = heldout_recall_at_1(model, videos, heldout, cfg);
      if (*log.heldout_r1 > best_r1) {
        best_r1 = *log.heldout_r1;
        best_epoch = epoch;
        epochs_since_best = 0;
        best_values.clear();
        for (const Param* p : std::as_const(model).parameters())
          best_values.push_back(p->value);
      } else {
        ++epochs_since_best;
      }
    }

    result.log.push_back(log);
    if (log_stream) (*log_stream) << epoch_json(log).dump() << "\n";

    if (!heldout.empty() && cfg.patience > 0 && epochs_since_best >= cfg.patience) break;
  }

  if (best_epoch >= 0 && !best_values.empty()) {
    auto params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    result.best_epoch = best_epoch;
    result.best_r1 = best_r1;
  }
  return result;
}

}  // namespace cfmr
