#pragma once

#include <string>
#include <vector>

#include "cfmr/errors.hpp"
#include "cfmr/types.hpp"

namespace cfmr {

// A trainable matrix with its gradient accumulator. Biases and layer-norm
// gains are stored as 1 x n.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

struct AdamConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard Adam with bias correction. step() consumes and clears gradients.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {});

  void step();
  int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Mat m;
    Mat v;
  };
  std::vector<Param*> params_;
  std::vector<Moments> moments_;
  AdamConfig cfg_;
  int64_t step_count_ = 0;
};

}  // namespace cfmr
