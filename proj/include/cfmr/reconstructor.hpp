#pragma once

#include <optional>
#include <vector>

#include "cfmr/anchors.hpp"
#include "cfmr/autodiff.hpp"
#include "cfmr/model.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

struct MaskedQuery {
  std::vector<int> ids;         // masked positions replaced by the mask token
  std::vector<uint8_t> masked;  // 1 where masked
  std::vector<int> original;    // the unmasked token ids

  int masked_count() const;
};

// Mask ceil(ratio * content-token count) content positions, chosen uniformly
// by seed. Function tokens are never masked.
MaskedQuery mask_query(const QueryTokens& query, double ratio, uint64_t seed);

// Decoder pass: self-attention over the masked query, cross-attention onto
// the concept rows, projection to the vocabulary, row softmax. Returns the
// word probability matrix (query length x vocab). Training-only; inference
// never calls this.
ad::Var reconstruct(ad::Tape& tape, const CfmrModel& model, ad::Var concepts,
                    const MaskedQuery& masked);

// Mean negative log-likelihood of the true tokens over masked positions.
ad::Var reconstruction_nll(ad::Tape& tape, ad::Var probs, const MaskedQuery& masked);
double reconstruction_nll(const Mat& probs, const MaskedQuery& masked);

// Video- plus text-conditioned reconstruction objective.
ad::Var reconstruction_loss(ad::Tape& tape, ad::Var p_v, ad::Var p_q,
                            const MaskedQuery& masked);
double reconstruction_loss(const Mat& p_v, const Mat& p_q, const MaskedQuery& masked);

// Index of the positive anchor with the smallest reconstruction loss; ties
// break toward the smallest width.
int select_optimal_anchor(const std::vector<GaussianAnchor>& positives,
                          const std::vector<double>& losses);

struct ReconLossTriple {
  double optimal = 0.0;
  std::optional<double> negatives;  // mean over negative anchors; absent if none
  double whole = 0.0;
};

// Hinge pair pushing the optimal anchor's reconstruction loss below the
// negatives' (margin alpha1) and the whole video's (margin alpha2). A missing
// negative term drops the first hinge.
double pcl_loss(const ReconLossTriple& triple, double alpha1, double alpha2);
ad::Var pcl_loss(ad::Tape& tape, ad::Var optimal, std::optional<ad::Var> negatives,
                 ad::Var whole, double alpha1, double alpha2);

}  // namespace cfmr
