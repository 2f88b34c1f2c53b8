#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace cfmr {

template <typename Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = MatT<double>;
using MatF = MatT<float>;
using Vec = Eigen::VectorXd;

// Deterministic RNG built directly on mt19937_64 output. std::*_distribution
// streams differ between standard libraries; these do not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (second sample cached)
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // uniform index in [0, n)
  size_t index(size_t n) { return static_cast<size_t>(engine_() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  Mat matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }

  Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * normal();
    return m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

struct QueryTokens {
  std::vector<int> ids;
  std::vector<uint8_t> content;  // 1 = content token (maskable), 0 = function token

  size_t size() const { return ids.size(); }
};

struct FeatureSequence {
  Mat features;     // l_v x d_v
  double duration;  // seconds
};

using VideoMap = std::map<std::string, FeatureSequence>;

struct PointSample {
  std::string video_id;
  QueryTokens query;
  double point;  // normalized time in [0, 1]
};

struct EvalSample {
  std::string video_id;
  QueryTokens query;
  double t_start;  // seconds
  double t_end;
};

}  // namespace cfmr
