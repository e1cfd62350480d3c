#pragma once

// Small reverse-mode autodiff engine over dense double matrices. A Tape owns
// the computation graph of one forward pass; backward() walks it in reverse.
// Built for seq2seq-sized models where exactness and determinism matter more
// than raw throughput: everything is double precision and single-threaded.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace cqg {
namespace ad {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf referencing externally owned storage (model parameters). The
  // pointee must outlive the tape. Repeated calls with the same pointer
  // return the same node, so gradients from every use accumulate together.
  Var param(const Mat* external);
  // Leaf owning a copy of the given matrix, without gradient.
  Var constant(Mat m);

  const Mat& val(Var v) const { return nodes_[v.index].vptr ? *nodes_[v.index].vptr : nodes_[v.index].storage; }
  const Mat& grad(Var v) const { return nodes_[v.index].grad; }
  int rows(Var v) const { return val(v).rows; }
  int cols(Var v) const { return val(v).cols; }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var add_rowvec(Var a, Var row);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log_elem(Var a);
  Var softmax_rows(Var a);
  // rows softmax restricted to positions where mask01 is nonzero
  Var softmax_rows(Var a, const Mat& mask01);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gather_rows(Var table, const std::vector<int>& ids);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var pick(Var a, int r, int c);  // 1x1 view of one element
  Var sum_scalars(const std::vector<Var>& scalars);

  // Copy-mechanism probability of one target token:
  //   p = gate * vocab_probs[row, y] + (1 - gate) * sum over source positions
  //       i with ext_ids[i] == y of attention[row, i]
  // where y >= vocab_size addresses per-sample extended ids.
  Var mixture_pick(Var vocab_probs, Var attention, Var gate_col, int row,
                   const std::vector<int>& ext_ids, int target_ext_id, int vocab_size);

  // Run reverse accumulation from a 1x1 loss node.
  void backward(Var loss);

 private:
  struct Node {
    Mat storage;
    const Mat* vptr = nullptr;  // external value, or null when storage owns it
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;
  };

  const Mat& value_of(int i) const { return nodes_[i].vptr ? *nodes_[i].vptr : nodes_[i].storage; }
  Mat& grad_of(int i) { return nodes_[i].grad; }
  bool needs(int i) const { return nodes_[i].requires_grad; }

  Var make(Mat value, bool requires_grad, std::function<void(Tape&)> backprop);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Mat*, int> param_cache_;
  int here_ = -1;  // node whose backprop closure is currently running
};

}  // namespace ad
}  // namespace cqg
