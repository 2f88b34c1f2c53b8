#pragma once

#include <cmath>
#include <optional>

#include "cfmr/errors.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

// y = x * W + b with b broadcast over rows.
template <typename Scalar>
MatT<Scalar> linear_forward(const MatT<Scalar>& x, const MatT<Scalar>& weights,
                            const MatT<Scalar>& bias) {
  if (x.cols() != weights.rows())
    throw ValidationError("linear_forward: input cols " + std::to_string(x.cols()) +
                          " != weight rows " + std::to_string(weights.rows()));
  if (bias.size() != weights.cols())
    throw ValidationError("linear_forward: bias size does not match output dim");
  MatT<Scalar> y = x * weights;
  y.rowwise() += Eigen::Map<const Eigen::RowVector<Scalar, Eigen::Dynamic>>(bias.data(),
                                                                            bias.size());
  return y;
}

// Row-wise softmax with max subtraction.
template <typename Scalar>
MatT<Scalar> softmax_rows(const MatT<Scalar>& x) {
  MatT<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <typename Scalar>
MatT<Scalar> layer_norm_rows(const MatT<Scalar>& x, const MatT<Scalar>& gamma,
                             const MatT<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  MatT<Scalar> y(x.rows(), x.cols());
  const Scalar n = static_cast<Scalar>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mean).square().sum() / n;
    y.row(i) = (((x.row(i).array() - mean) / std::sqrt(var + eps)) *
                    Eigen::Map<const Eigen::Array<Scalar, 1, Eigen::Dynamic>>(
                        gamma.data(), gamma.size()) +
                Eigen::Map<const Eigen::Array<Scalar, 1, Eigen::Dynamic>>(beta.data(),
                                                                          beta.size()))
                   .matrix();
  }
  return y;
}

// Scaled dot-product attention over pre-projected q/k/v, split into `heads`
// equal column groups. When row_weights is present each post-softmax
// attention row is multiplied element-wise by it (one weight per key) and
// renormalized to sum 1.
template <typename Scalar>
MatT<Scalar> multihead_attention(const MatT<Scalar>& q, const MatT<Scalar>& k,
                                 const MatT<Scalar>& v, int heads,
                                 const Eigen::Vector<Scalar, Eigen::Dynamic>* row_weights =
                                     nullptr) {
  if (heads < 1 || q.cols() % heads != 0)
    throw ValidationError("multihead_attention: model dim " + std::to_string(q.cols()) +
                          " not divisible by heads " + std::to_string(heads));
  if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows())
    throw ValidationError("multihead_attention: q/k/v shape mismatch");
  if (row_weights && row_weights->size() != k.rows())
    throw ValidationError("multihead_attention: row_weights length != key count");

  const Eigen::Index dk = q.cols() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  MatT<Scalar> out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dk, dk);
    const auto kh = k.middleCols(h * dk, dk);
    const auto vh = v.middleCols(h * dk, dk);
    MatT<Scalar> probs = softmax_rows<Scalar>((qh * kh.transpose()) * scale);
    if (row_weights) {
      probs.array().rowwise() *= row_weights->transpose().array();
      for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i) /= probs.row(i).sum();
    }
    out.middleCols(h * dk, dk) = probs * vh;
  }
  return out;
}

}  // namespace cfmr
