#include "cfmr/encoders.hpp"

#include <cmath>

#include "cfmr/errors.hpp"

namespace cfmr {

using ad::Tape;
using ad::Var;

namespace {

Var linear(Tape& t, Var x, const Param& w, const Param& b) {
  return t.add_rowvec(t.matmul(x, t.use(w)), t.use(b));
}

// Scaled dot-product attention over already-projected q/k/v. key_weights,
// when present, re-weights each post-softmax row (one weight per key) and
// renormalizes it.
Var attention(Tape& t, Var q, Var k, Var v, int heads, const Vec* key_weights,
              std::vector<Mat>* attention_out) {
  const int d = static_cast<int>(t.value(q).cols());
  if (heads < 1 || d % heads != 0)
    throw ValidationError("attention: model dim not divisible by head count");
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> outputs;
  Mat probs_dump;
  for (int h = 0; h < heads; ++h) {
    Var qh = t.cols(q, h * dk, dk);
    Var kh = t.cols(k, h * dk, dk);
    Var vh = t.cols(v, h * dk, dk);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), scale);
    Var probs = t.softmax_rows(scores);
    if (key_weights) {
      probs = t.normalize_rows_sum(t.mul_cols(probs, *key_weights));
    }
    if (attention_out) {
      const Mat& pv = t.value(probs);
      if (h == 0) probs_dump.resize(pv.rows() * heads, pv.cols());
      probs_dump.middleRows(h * pv.rows(), pv.rows()) = pv;
    }
    outputs.push_back(t.matmul(probs, vh));
  }
  if (attention_out) attention_out->push_back(std::move(probs_dump));
  return t.concat_cols(outputs);
}

Var encoder_layer(Tape& t, Var x, const EncoderLayerParams& l, int heads,
                  const Vec* key_weights, std::vector<Mat>* attention_out) {
  Var a = t.layer_norm_rows(x, t.use(l.ln1_gamma), t.use(l.ln1_beta));
  Var att = attention(t, linear(t, a, l.wq, l.bq), linear(t, a, l.wk, l.bk),
                      linear(t, a, l.wv, l.bv), heads, key_weights, attention_out);
  x = t.add(x, linear(t, att, l.wo, l.bo));
  Var f = t.layer_norm_rows(x, t.use(l.ln2_gamma), t.use(l.ln2_beta));
  Var inner = t.relu(linear(t, f, l.ff1_w, l.ff1_b));
  return t.add(x, linear(t, inner, l.ff2_w, l.ff2_b));
}

void validate_tokens(const QueryTokens& query, const EncoderConfig& cfg) {
  if (query.ids.empty()) throw ValidationError("query has no tokens");
  if (static_cast<int>(query.ids.size()) > cfg.l_q)
    throw ValidationError("query length " + std::to_string(query.ids.size()) +
                          " exceeds l_q " + std::to_string(cfg.l_q));
  if (query.content.size() != query.ids.size())
    throw ValidationError("query content flags do not match token count");
  for (int id : query.ids)
    if (id < 0 || id > cfg.vocab)
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
}

// Positional rows 0..len-1 plus the dedicated final row for CLS, so the CLS
// position does not drift with input length.
Var positions_with_cls(Tape& t, const Param& pos, int len, int cls_row) {
  Var p = t.use(pos);
  return t.concat_rows({t.rows(p, 0, len), t.rows(p, cls_row, 1)});
}

}  // namespace

Vec anchor_density(const GaussianAnchor& anchor, int l_v, double gamma) {
  GaussianAnchor clamped = anchor;
  clamped.width = effective_width(anchor.width, l_v);
  return density(clamped, l_v, gamma);
}

TextEncoding encode_text(Tape& t, const CfmrModel& model, const QueryTokens& query) {
  const EncoderConfig& cfg = model.cfg;
  validate_tokens(query, cfg);
  const int len = static_cast<int>(query.ids.size());

  Var emb = t.gather_rows(t.use(model.token_embedding), query.ids);
  Var seq = t.concat_rows({emb, t.use(model.cls_text)});
  Var h = linear(t, seq, model.text_proj_w, model.text_proj_b);
  h = t.add(h, positions_with_cls(t, model.pos_text, len, cfg.l_q));
  for (const auto& layer : model.text_layers)
    h = encoder_layer(t, h, layer, cfg.heads, nullptr, nullptr);

  TextEncoding out;
  out.hidden = h;
  out.cls = t.rows(h, len, 1);
  out.concepts = make_concepts(t, out.cls, model.mlp_text, cfg.l_c);
  return out;
}

Var encode_video(Tape& t, const CfmrModel& model, const Mat& features, const Vec* density,
                 std::vector<Mat>* attention_out) {
  const EncoderConfig& cfg = model.cfg;
  if (features.rows() < 1) throw ValidationError("video has no frames");
  if (features.rows() > cfg.l_v)
    throw ValidationError("video length " + std::to_string(features.rows()) +
                          " exceeds l_v " + std::to_string(cfg.l_v));
  if (features.cols() != cfg.d_v)
    throw ValidationError("video feature dim " + std::to_string(features.cols()) +
                          " != configured d_v " + std::to_string(cfg.d_v));
  const int len = static_cast<int>(features.rows());

  Vec key_weights;
  if (density) {
    if (density->size() != len)
      throw ValidationError("density length does not match video length");
    key_weights.resize(len + 1);
    key_weights.head(len) = *density;
    key_weights(len) = 1.0;  // the CLS key is never suppressed
  }

  Var seq = t.concat_rows({t.leaf(features), t.use(model.cls_video)});
  Var h = linear(t, seq, model.video_proj_w, model.video_proj_b);
  h = t.add(h, positions_with_cls(t, model.pos_video, len, cfg.l_v));
  for (const auto& layer : model.video_layers)
    h = encoder_layer(t, h, layer, cfg.heads, density ? &key_weights : nullptr,
                      attention_out);

  Var cls = t.rows(h, len, 1);
  return make_concepts(t, cls, model.mlp_video, cfg.l_c);
}

Var make_concepts(Tape& t, Var cls_state, const MlpParams& mlp, int l_c) {
  if (l_c < 1) throw ValidationError("make_concepts: l_c must be positive");
  Var hidden = t.relu(linear(t, cls_state, mlp.w1, mlp.b1));
  Var flat = linear(t, hidden, mlp.w2, mlp.b2);
  const auto total = t.value(flat).size();
  if (total % l_c != 0)
    throw ValidationError("make_concepts: output dim " + std::to_string(total) +
                          " not divisible by l_c " + std::to_string(l_c));
  return t.reshape(flat, l_c, static_cast<int>(total / l_c));
}

Var diversity_loss(Tape& t, Var concepts) {
  const auto n = t.value(concepts).rows();
  Var gram = t.matmul(concepts, t.transpose(concepts));
  return t.frobenius_sq(t.sub(gram, t.leaf(Mat::Identity(n, n))));
}

double diversity_loss(const Mat& concepts) {
  const Mat gram = concepts * concepts.transpose();
  return (gram - Mat::Identity(gram.rows(), gram.cols())).squaredNorm();
}

Mat text_concepts(const CfmrModel& model, const QueryTokens& query) {
  Tape t;
  return t.value(encode_text(t, model, query).concepts);
}

Mat video_concepts(const CfmrModel& model, const Mat& features, const Vec* density) {
  Tape t;
  return t.value(encode_video(t, model, features, density));
}

}  // namespace cfmr
