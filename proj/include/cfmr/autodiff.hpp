#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cfmr/optim.hpp"
#include "cfmr/types.hpp"

namespace cfmr::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Record-and-replay reverse-mode differentiation over dense matrices.
// Nodes are appended in forward order, so reverse insertion order is a valid
// topological order for the backward sweep. Leaves bound to a Param push
// their gradient into the parameter's accumulator.
class Tape {
 public:
  Var leaf(Mat value);
  // Cached per tape: repeated use() of one Param returns the same node.
  // Parameters are only written (grad accumulation) if backward() runs, so
  // forward-only tapes may share a model across threads.
  Var use(const Param& p);
  Var scalar(double value);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar_value(Var v) const { return nodes_[v.id].value(0, 0); }

  // --- arithmetic ---
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul_elem(Var a, Var b);
  Var add_rowvec(Var a, Var row);  // row: 1 x n broadcast over rows of a
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var transpose(Var a);

  // --- shape ---
  Var rows(Var a, int start, int count);
  Var cols(Var a, int start, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var reshape(Var a, int rows, int cols);  // row-major reinterpretation
  Var gather_rows(Var table, std::vector<int> indices);
  Var pick_entries(Var a, std::vector<std::pair<int, int>> entries);  // -> m x 1

  // --- nonlinear ---
  Var relu(Var a);  // also the hinge: subgradient at 0 is 0
  Var log_elem(Var a);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var a, Var gamma, Var beta);
  Var mul_cols(Var a, Vec weights);       // constant per-column weights
  Var normalize_rows_sum(Var a);          // y_ij = a_ij / sum_j a_ij

  // --- reductions ---
  Var sum(Var a);           // 1x1
  Var mean_all(Var a);      // 1x1
  Var frobenius_sq(Var a);  // 1x1

  // mean over rows of cosine(a_i, b_i); all-zero rows contribute 0
  Var row_cosine_mean(Var a, Var b);
  // cosine of the flattened matrices
  Var flat_cosine(Var a, Var b);

  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backprop;  // reads nodes_[id].grad
    Param* bound = nullptr;
  };

  int push(Mat value, std::vector<int> parents, std::function<void(Tape&, int)> backprop);
  Mat& grad_ref(int id);
  Node& node(int id) { return nodes_[id]; }

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_nodes_;

  friend struct TapeAccess;
};

}  // namespace cfmr::ad
