#pragma once

#include <vector>

#include "cfmr/anchors.hpp"
#include "cfmr/autodiff.hpp"
#include "cfmr/model.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

// A concept set is l_c x d_h; one row per concept.

struct TextEncoding {
  ad::Var concepts;
  ad::Var hidden;  // (len + 1) x d_h final states, CLS last
  ad::Var cls;     // 1 x d_h
};

// Text concept encoder: token embeddings + CLS appended at the end, input
// projection, positional embeddings, stacked self-attention layers, concepts
// from the CLS state.
TextEncoding encode_text(ad::Tape& tape, const CfmrModel& model, const QueryTokens& query);

// Video concept encoder. density points into normalized time like the video
// rows; null means the whole-video view, which skips re-weighting entirely so
// it is exactly the unweighted encoder. When density is present every
// attention row in every layer is multiplied post-softmax by it (the CLS key
// keeps weight 1) and renormalized. attention_out, when non-null, receives
// the per-layer attention probabilities (heads stacked row-wise).
ad::Var encode_video(ad::Tape& tape, const CfmrModel& model, const Mat& features,
                     const Vec* density, std::vector<Mat>* attention_out = nullptr);

// Split the MLP image of a CLS state into l_c equal concept rows.
ad::Var make_concepts(ad::Tape& tape, ad::Var cls_state, const MlpParams& mlp, int l_c);

// || C C^T - I ||_F^2
ad::Var diversity_loss(ad::Tape& tape, ad::Var concepts);
double diversity_loss(const Mat& concepts);

// Forward-only conveniences (safe to call concurrently on a shared model).
Mat text_concepts(const CfmrModel& model, const QueryTokens& query);
Mat video_concepts(const CfmrModel& model, const Mat& features, const Vec* density);

// Density re-weighting vector for an anchor over an l_v-frame video, with the
// degenerate-width floor applied.
Vec anchor_density(const GaussianAnchor& anchor, int l_v, double gamma);

}  // namespace cfmr
