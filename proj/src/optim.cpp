#include "cfmr/optim.hpp"

#include <cmath>

namespace cfmr {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (const Param* p : params_) {
    moments_.push_back({Mat::Zero(p->value.rows(), p->value.cols()),
                        Mat::Zero(p->value.rows(), p->value.cols())});
  }
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Moments& mo = moments_[i];
    mo.m = cfg_.beta1 * mo.m + (1.0 - cfg_.beta1) * p.grad;
    mo.v = (cfg_.beta2 * mo.v.array() + (1.0 - cfg_.beta2) * p.grad.array().square()).matrix();
    const Mat m_hat = mo.m / bc1;
    const Mat v_hat = mo.v / bc2;
    p.value.array() -=
        cfg_.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg_.epsilon);
    p.zero_grad();
  }
}

}  // namespace cfmr
