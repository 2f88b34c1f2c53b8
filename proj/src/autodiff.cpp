#include "cfmr/autodiff.hpp"

#include <cmath>

#include "cfmr/errors.hpp"

namespace cfmr::ad {

namespace {
constexpr double kLogFloor = 1e-300;
constexpr double kLayerNormEps = 1e-5;
}  // namespace

int Tape::push(Mat value, std::vector<int> parents,
               std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::leaf(Mat value) { return {push(std::move(value), {}, nullptr)}; }

Var Tape::scalar(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return leaf(std::move(m));
}

Var Tape::use(const Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {it->second};
  Param* target = const_cast<Param*>(&p);
  int id = push(p.value, {},
                [target](Tape& t, int self) { target->grad += t.nodes_[self].grad; });
  param_nodes_.emplace(&p, id);
  return {id};
}

Var Tape::matmul(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.cols() != bv.rows()) throw ValidationError("matmul: inner dims differ");
  return {push(av * bv, {a.id, b.id}, [a, b](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id).noalias() += g * t.value(b).transpose();
    t.grad_ref(b.id).noalias() += t.value(a).transpose() * g;
  })};
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ValidationError("add: shape mismatch");
  return {push(value(a) + value(b), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id) += g;
    t.grad_ref(b.id) += g;
  })};
}

Var Tape::sub(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ValidationError("sub: shape mismatch");
  return {push(value(a) - value(b), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id) += g;
    t.grad_ref(b.id) -= g;
  })};
}

Var Tape::mul_elem(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ValidationError("mul_elem: shape mismatch");
  return {push(value(a).cwiseProduct(value(b)), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id) += g.cwiseProduct(t.value(b));
    t.grad_ref(b.id) += g.cwiseProduct(t.value(a));
  })};
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != value(a).cols())
    throw ValidationError("add_rowvec: row must be 1 x cols(a)");
  Mat out = value(a);
  out.rowwise() += rv.row(0);
  return {push(std::move(out), {a.id, row.id}, [a, row](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id) += g;
    t.grad_ref(row.id).row(0) += g.colwise().sum();
  })};
}

Var Tape::scale(Var a, double s) {
  return {push(value(a) * s, {a.id}, [a, s](Tape& t, int self) {
    t.grad_ref(a.id) += t.nodes_[self].grad * s;
  })};
}

Var Tape::add_scalar(Var a, double s) {
  return {push((value(a).array() + s).matrix(), {a.id}, [a](Tape& t, int self) {
    t.grad_ref(a.id) += t.nodes_[self].grad;
  })};
}

Var Tape::transpose(Var a) {
  return {push(value(a).transpose(), {a.id}, [a](Tape& t, int self) {
    t.grad_ref(a.id) += t.nodes_[self].grad.transpose();
  })};
}

Var Tape::rows(Var a, int start, int count) {
  return {push(value(a).middleRows(start, count), {a.id},
               [a, start, count](Tape& t, int self) {
                 t.grad_ref(a.id).middleRows(start, count) += t.nodes_[self].grad;
               })};
}

Var Tape::cols(Var a, int start, int count) {
  return {push(value(a).middleCols(start, count), {a.id},
               [a, start, count](Tape& t, int self) {
                 t.grad_ref(a.id).middleCols(start, count) += t.nodes_[self].grad;
               })};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_rows: empty");
  Eigen::Index total = 0;
  std::vector<int> parents;
  for (Var p : parts) {
    total += value(p).rows();
    parents.push_back(p.id);
  }
  Mat out(total, value(parts[0]).cols());
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  std::vector<Var> copy = parts;
  return {push(std::move(out), std::move(parents), [copy](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    Eigen::Index at = 0;
    for (Var p : copy) {
      const Eigen::Index r = t.value(p).rows();
      t.grad_ref(p.id) += g.middleRows(at, r);
      at += r;
    }
  })};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: empty");
  Eigen::Index total = 0;
  std::vector<int> parents;
  for (Var p : parts) {
    total += value(p).cols();
    parents.push_back(p.id);
  }
  Mat out(value(parts[0]).rows(), total);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  std::vector<Var> copy = parts;
  return {push(std::move(out), std::move(parents), [copy](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    Eigen::Index at = 0;
    for (Var p : copy) {
      const Eigen::Index c = t.value(p).cols();
      t.grad_ref(p.id) += g.middleCols(at, c);
      at += c;
    }
  })};
}

Var Tape::reshape(Var a, int r, int c) {
  const Mat& av = value(a);
  if (av.size() != static_cast<Eigen::Index>(r) * c)
    throw ValidationError("reshape: element count mismatch");
  Mat out = Eigen::Map<const Mat>(av.data(), r, c);
  return {push(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    Mat& ag = t.grad_ref(a.id);
    ag += Eigen::Map<const Mat>(g.data(), ag.rows(), ag.cols());
  })};
}

Var Tape::gather_rows(Var table, std::vector<int> indices) {
  const Mat& tv = value(table);
  Mat out(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tv.rows())
      throw ValidationError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(indices[i]);
  }
  return {push(std::move(out), {table.id},
               [table, idx = std::move(indices)](Tape& t, int self) {
                 const Mat& g = t.nodes_[self].grad;
                 Mat& tg = t.grad_ref(table.id);
                 for (size_t i = 0; i < idx.size(); ++i)
                   tg.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
               })};
}

Var Tape::pick_entries(Var a, std::vector<std::pair<int, int>> entries) {
  const Mat& av = value(a);
  Mat out(static_cast<Eigen::Index>(entries.size()), 1);
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    if (r < 0 || r >= av.rows() || c < 0 || c >= av.cols())
      throw ValidationError("pick_entries: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = av(r, c);
  }
  return {push(std::move(out), {a.id}, [a, ents = std::move(entries)](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    Mat& ag = t.grad_ref(a.id);
    for (size_t i = 0; i < ents.size(); ++i)
      ag(ents[i].first, ents[i].second) += g(static_cast<Eigen::Index>(i), 0);
  })};
}

Var Tape::relu(Var a) {
  return {push(value(a).cwiseMax(0.0), {a.id}, [a](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id) += (t.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g);
  })};
}

Var Tape::log_elem(Var a) {
  return {push(value(a).cwiseMax(kLogFloor).array().log().matrix(), {a.id}, [a](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id).array() += g.array() / t.value(a).cwiseMax(kLogFloor).array();
  })};
}

Var Tape::softmax_rows(Var a) {
  const Mat& av = value(a);
  Mat out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double m = av.row(i).maxCoeff();
    out.row(i) = (av.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return {push(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Mat& y = t.nodes_[self].value;
    const Mat& g = t.nodes_[self].grad;
    Mat& ag = t.grad_ref(a.id);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
      ag.row(i) += (g.row(i).array() - dot) * y.row(i).array();
    }
  })};
}

Var Tape::layer_norm_rows(Var a, Var gamma, Var beta) {
  const Mat& av = value(a);
  const Mat& gv = value(gamma);
  const Mat& bv = value(beta);
  if (gv.rows() != 1 || gv.cols() != av.cols() || bv.rows() != 1 || bv.cols() != av.cols())
    throw ValidationError("layer_norm_rows: gamma/beta must be 1 x cols(a)");
  const double n = static_cast<double>(av.cols());
  Mat xhat(av.rows(), av.cols());
  Vec inv_std(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double mean = av.row(i).mean();
    const double var = (av.row(i).array() - mean).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (av.row(i).array() - mean) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gv.row(0).array()).matrix();
  out.rowwise() += bv.row(0);
  return {push(std::move(out), {a.id, gamma.id, beta.id},
               [a, gamma, beta, xhat = std::move(xhat),
                inv_std = std::move(inv_std)](Tape& t, int self) {
                 const Mat& g = t.nodes_[self].grad;
                 const Mat& gv = t.value(gamma);
                 const double n = static_cast<double>(g.cols());
                 Mat& ag = t.grad_ref(a.id);
                 Mat& gg = t.grad_ref(gamma.id);
                 Mat& bg = t.grad_ref(beta.id);
                 for (Eigen::Index i = 0; i < g.rows(); ++i) {
                   const auto gi = g.row(i).array();
                   const auto xh = xhat.row(i).array();
                   gg.row(0).array() += gi * xh;
                   bg.row(0) += g.row(i);
                   const auto dxhat = gi * gv.row(0).array();
                   const double sum_dxhat = dxhat.sum();
                   const double sum_dxhat_xhat = (dxhat * xh).sum();
                   ag.row(i).array() +=
                       inv_std(i) * (dxhat - sum_dxhat / n - xh * (sum_dxhat_xhat / n));
                 }
               })};
}

Var Tape::mul_cols(Var a, Vec weights) {
  const Mat& av = value(a);
  if (weights.size() != av.cols())
    throw ValidationError("mul_cols: weight length != column count");
  Mat out = (av.array().rowwise() * weights.transpose().array()).matrix();
  return {push(std::move(out), {a.id}, [a, w = std::move(weights)](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.grad_ref(a.id).array() += g.array().rowwise() * w.transpose().array();
  })};
}

Var Tape::normalize_rows_sum(Var a) {
  const Mat& av = value(a);
  Mat out(av.rows(), av.cols());
  Vec sums(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    sums(i) = av.row(i).sum();
    out.row(i) = av.row(i) / sums(i);
  }
  return {push(std::move(out), {a.id}, [a, sums = std::move(sums)](Tape& t, int self) {
    const Mat& y = t.nodes_[self].value;
    const Mat& g = t.nodes_[self].grad;
    Mat& ag = t.grad_ref(a.id);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
      ag.row(i) += (g.row(i).array() - dot) / sums(i);
    }
  })};
}

Var Tape::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = value(a).sum();
  return {push(std::move(out), {a.id}, [a](Tape& t, int self) {
    t.grad_ref(a.id).array() += t.nodes_[self].grad(0, 0);
  })};
}

Var Tape::mean_all(Var a) {
  const double n = static_cast<double>(value(a).size());
  Mat out(1, 1);
  out(0, 0) = value(a).sum() / n;
  return {push(std::move(out), {a.id}, [a, n](Tape& t, int self) {
    t.grad_ref(a.id).array() += t.nodes_[self].grad(0, 0) / n;
  })};
}

Var Tape::frobenius_sq(Var a) {
  Mat out(1, 1);
  out(0, 0) = value(a).squaredNorm();
  return {push(std::move(out), {a.id}, [a](Tape& t, int self) {
    t.grad_ref(a.id) += 2.0 * t.nodes_[self].grad(0, 0) * t.value(a);
  })};
}

Var Tape::row_cosine_mean(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ValidationError("row_cosine_mean: shape mismatch");
  const Eigen::Index n = av.rows();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double na = av.row(i).norm();
    const double nb = bv.row(i).norm();
    if (na > 0.0 && nb > 0.0) acc += av.row(i).dot(bv.row(i)) / (na * nb);
  }
  Mat out(1, 1);
  out(0, 0) = acc / static_cast<double>(n);
  return {push(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const double g = t.nodes_[self].grad(0, 0);
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    const double n = static_cast<double>(av.rows());
    Mat& ag = t.grad_ref(a.id);
    Mat& bg = t.grad_ref(b.id);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const double na = av.row(i).norm();
      const double nb = bv.row(i).norm();
      if (na == 0.0 || nb == 0.0) continue;
      const double cosv = av.row(i).dot(bv.row(i)) / (na * nb);
      ag.row(i) += (g / n) * (bv.row(i) / (na * nb) - cosv * av.row(i) / (na * na));
      bg.row(i) += (g / n) * (av.row(i) / (na * nb) - cosv * bv.row(i) / (nb * nb));
    }
  })};
}

Var Tape::flat_cosine(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols())
    throw ValidationError("flat_cosine: shape mismatch");
  const double na = av.norm();
  const double nb = bv.norm();
  Mat out(1, 1);
  out(0, 0) = (na > 0.0 && nb > 0.0) ? (av.cwiseProduct(bv).sum() / (na * nb)) : 0.0;
  return {push(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const double g = t.nodes_[self].grad(0, 0);
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    const double na = av.norm();
    const double nb = bv.norm();
    if (na == 0.0 || nb == 0.0) return;
    const double cosv = av.cwiseProduct(bv).sum() / (na * nb);
    t.grad_ref(a.id) += g * (bv / (na * nb) - cosv * av / (na * na));
    t.grad_ref(b.id) += g * (av / (na * nb) - cosv * bv / (nb * nb));
  })};
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
    throw ValidationError("backward: invalid loss var");
  if (nodes_[loss.id].value.size() != 1)
    throw ValidationError("backward: loss must be scalar");

  // Mark nodes the loss actually depends on; dead subgraphs are skipped.
  std::vector<char> live(nodes_.size(), 0);
  std::vector<int> stack{loss.id};
  live[loss.id] = 1;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (!live[p]) {
        live[p] = 1;
        stack.push_back(p);
      }
    }
  }

  grad_ref(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    if (!live[id]) continue;
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.backprop) n.backprop(*this, id);
  }
}

}  // namespace cfmr::ad
