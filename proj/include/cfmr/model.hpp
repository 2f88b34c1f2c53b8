#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfmr/optim.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

struct EncoderConfig {
  int d_h = 32;       // hidden dim
  int layers = 2;     // encoder layers (text and video alike)
  int dec_layers = 2; // reconstruction decoder layers
  int heads = 4;
  int ff_dim = 64;    // feed-forward inner dim
  int l_v = 48;       // max video length
  int l_q = 20;       // max query length
  int l_c = 4;        // concepts per modality
  int d_v = 8;        // video feature dim
  int d_q = 16;       // token embedding dim
  int vocab = 40;     // word dictionary size l_W (mask token is one extra row)

  int mask_token() const { return vocab; }
  void validate() const;
};

struct EncoderLayerParams {
  Param ln1_gamma, ln1_beta;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln2_gamma, ln2_beta;
  Param ff1_w, ff1_b, ff2_w, ff2_b;
};

struct DecoderLayerParams {
  Param ln1_gamma, ln1_beta;                    // before self-attention
  Param self_wq, self_bq, self_wk, self_bk, self_wv, self_bv, self_wo, self_bo;
  Param ln2_gamma, ln2_beta;                    // before cross-attention
  Param cross_wq, cross_bq, cross_wk, cross_bk, cross_wv, cross_bv, cross_wo, cross_bo;
  Param ln3_gamma, ln3_beta;                    // before feed-forward
  Param ff1_w, ff1_b, ff2_w, ff2_b;
};

struct MlpParams {
  Param w1, b1, w2, b2;
};

// Every trainable matrix in the model. The text and video encoders share the
// architecture but not parameters; the video encoder is applied once per
// anchor weighting.
struct CfmrModel {
  EncoderConfig cfg;

  Param token_embedding;  // (vocab + 1) x d_q, last row is the mask token
  Param cls_text;         // 1 x d_q
  Param cls_video;        // 1 x d_v
  Param text_proj_w, text_proj_b;    // d_q -> d_h
  Param video_proj_w, video_proj_b;  // d_v -> d_h
  Param dec_proj_w, dec_proj_b;      // d_q -> d_h (decoder input)
  Param pos_text;   // (l_q + 1) x d_h
  Param pos_video;  // (l_v + 1) x d_h
  Param pos_dec;    // l_q x d_h
  std::vector<EncoderLayerParams> text_layers;
  std::vector<EncoderLayerParams> video_layers;
  std::vector<DecoderLayerParams> dec_layers;
  MlpParams mlp_text;   // d_h -> d_h -> l_c * d_h
  MlpParams mlp_video;
  Param out_proj_w, out_proj_b;  // d_h -> vocab

  static CfmrModel init(const EncoderConfig& cfg, uint64_t seed);

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  int64_t parameter_count() const;
  void zero_grads();

  // FNV-1a over the serialized parameter bytes; persisted indexes carry it so
  // stale models are rejected at query time.
  uint64_t fingerprint() const;

  void save(const std::string& path) const;
  static CfmrModel load(const std::string& path);
};

}  // namespace cfmr
