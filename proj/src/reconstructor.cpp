#include "cfmr/reconstructor.hpp"

#include <algorithm>
#include <cmath>

#include "cfmr/errors.hpp"

namespace cfmr {

using ad::Tape;
using ad::Var;

int MaskedQuery::masked_count() const {
  int n = 0;
  for (uint8_t m : masked) n += m;
  return n;
}

MaskedQuery mask_query(const QueryTokens& query, double ratio, uint64_t seed) {
  if (ratio <= 0.0 || ratio > 1.0)
    throw ValidationError("mask_query: ratio must be in (0, 1]");
  if (query.ids.size() != query.content.size())
    throw ValidationError("mask_query: content flags do not match token count");
  std::vector<int> content_positions;
  for (size_t i = 0; i < query.ids.size(); ++i)
    if (query.content[i]) content_positions.push_back(static_cast<int>(i));
  if (content_positions.empty())
    throw ValidationError("mask_query: query has no content tokens");

  const int n_mask = static_cast<int>(
      std::ceil(ratio * static_cast<double>(content_positions.size())));
  Rng rng(seed);
  rng.shuffle(content_positions);
  content_positions.resize(n_mask);

  MaskedQuery out;
  out.ids = query.ids;
  out.original = query.ids;
  out.masked.assign(query.ids.size(), 0);
  for (int pos : content_positions) out.masked[pos] = 1;
  return out;
}

namespace {

Var linear(Tape& t, Var x, const Param& w, const Param& b) {
  return t.add_rowvec(t.matmul(x, t.use(w)), t.use(b));
}

Var attention(Tape& t, Var q, Var k, Var v, int heads) {
  const int d = static_cast<int>(t.value(q).cols());
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> outputs;
  for (int h = 0; h < heads; ++h) {
    Var qh = t.cols(q, h * dk, dk);
    Var kh = t.cols(k, h * dk, dk);
    Var vh = t.cols(v, h * dk, dk);
    Var probs = t.softmax_rows(t.scale(t.matmul(qh, t.transpose(kh)), scale));
    outputs.push_back(t.matmul(probs, vh));
  }
  return t.concat_cols(outputs);
}

}  // namespace

Var reconstruct(Tape& t, const CfmrModel& model, Var concepts, const MaskedQuery& masked) {
  const EncoderConfig& cfg = model.cfg;
  if (t.value(concepts).cols() != cfg.d_h)
    throw ValidationError("reconstruct: concept dim mismatch");
  const int len = static_cast<int>(masked.ids.size());
  if (len < 1 || len > cfg.l_q)
    throw ValidationError("reconstruct: masked query length out of range");

  // Mask-token ids index the extra embedding row; keep real ids in range too.
  for (int id : masked.ids)
    if (id < 0 || id > cfg.mask_token())
      throw ValidationError("reconstruct: token id outside vocabulary");

  Var emb = t.gather_rows(t.use(model.token_embedding), masked.ids);
  Var h = linear(t, emb, model.dec_proj_w, model.dec_proj_b);
  h = t.add(h, t.rows(t.use(model.pos_dec), 0, len));

  for (const auto& layer : model.dec_layers) {
    Var a = t.layer_norm_rows(h, t.use(layer.ln1_gamma), t.use(layer.ln1_beta));
    Var self_att =
        attention(t, linear(t, a, layer.self_wq, layer.self_bq),
                  linear(t, a, layer.self_wk, layer.self_bk),
                  linear(t, a, layer.self_wv, layer.self_bv), cfg.heads);
    h = t.add(h, linear(t, self_att, layer.self_wo, layer.self_bo));

    // Cross-attention keys come straight from the concept rows: no positional
    // signal, so concept order cannot matter.
    Var b = t.layer_norm_rows(h, t.use(layer.ln2_gamma), t.use(layer.ln2_beta));
    Var cross_att =
        attention(t, linear(t, b, layer.cross_wq, layer.cross_bq),
                  linear(t, concepts, layer.cross_wk, layer.cross_bk),
                  linear(t, concepts, layer.cross_wv, layer.cross_bv), cfg.heads);
    h = t.add(h, linear(t, cross_att, layer.cross_wo, layer.cross_bo));

    Var c = t.layer_norm_rows(h, t.use(layer.ln3_gamma), t.use(layer.ln3_beta));
    Var inner = t.relu(linear(t, c, layer.ff1_w, layer.ff1_b));
    h = t.add(h, linear(t, inner, layer.ff2_w, layer.ff2_b));
  }

  return t.softmax_rows(linear(t, h, model.out_proj_w, model.out_proj_b));
}

namespace {

std::vector<std::pair<int, int>> masked_entries(const MaskedQuery& masked,
                                                Eigen::Index vocab) {
  std::vector<std::pair<int, int>> entries;
  for (size_t i = 0; i < masked.masked.size(); ++i) {
    if (!masked.masked[i]) continue;
    const int truth = masked.original[i];
    if (truth < 0 || truth >= vocab)
      throw ValidationError("reconstruction loss: true token outside vocabulary");
    entries.emplace_back(static_cast<int>(i), truth);
  }
  if (entries.empty())
    throw ValidationError("reconstruction loss: no masked positions");
  return entries;
}

}  // namespace

Var reconstruction_nll(Tape& t, Var probs, const MaskedQuery& masked) {
  auto entries = masked_entries(masked, t.value(probs).cols());
  const double inv = -1.0 / static_cast<double>(entries.size());
  Var picked = t.pick_entries(probs, std::move(entries));
  return t.scale(t.sum(t.log_elem(picked)), inv);
}

double reconstruction_nll(const Mat& probs, const MaskedQuery& masked) {
  auto entries = masked_entries(masked, probs.cols());
  double acc = 0.0;
  for (const auto& [r, c] : entries) acc -= std::log(std::max(probs(r, c), 1e-300));
  return acc / static_cast<double>(entries.size());
}

Var reconstruction_loss(Tape& t, Var p_v, Var p_q, const MaskedQuery& masked) {
  return t.add(reconstruction_nll(t, p_v, masked), reconstruction_nll(t, p_q, masked));
}

double reconstruction_loss(const Mat& p_v, const Mat& p_q, const MaskedQuery& masked) {
  return reconstruction_nll(p_v, masked) + reconstruction_nll(p_q, masked);
}

int select_optimal_anchor(const std::vector<GaussianAnchor>& positives,
                          const std::vector<double>& losses) {
  if (positives.empty() || positives.size() != losses.size())
    throw ValidationError("select_optimal_anchor: need one loss per positive anchor");
  int best = 0;
  for (size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] < losses[best] ||
        (losses[i] == losses[best] && positives[i].width < positives[best].width))
      best = static_cast<int>(i);
  }
  return best;
}

double pcl_loss(const ReconLossTriple& triple, double alpha1, double alpha2) {
  if (alpha1 < 0.0 || alpha2 < 0.0)
    throw ValidationError("pcl_loss: margins must be non-negative");
  double loss = std::max(triple.optimal - triple.whole + alpha2, 0.0);
  if (triple.negatives)
    loss += std::max(triple.optimal - *triple.negatives + alpha1, 0.0);
  return loss;
}

Var pcl_loss(Tape& t, Var optimal, std::optional<Var> negatives, Var whole, double alpha1,
             double alpha2) {
  if (alpha1 < 0.0 || alpha2 < 0.0)
    throw ValidationError("pcl_loss: margins must be non-negative");
  Var loss = t.relu(t.add_scalar(t.sub(optimal, whole), alpha2));
  if (negatives)
    loss = t.add(loss, t.relu(t.add_scalar(t.sub(optimal, *negatives), alpha1)));
  return loss;
}

}  // namespace cfmr
