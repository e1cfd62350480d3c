#include "cqg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace cqg {
namespace ad {

namespace {

void check(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::make(Mat value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node node;
  node.storage = std::move(value);
  node.requires_grad = grad_enabled_ && requires_grad;
  if (node.requires_grad) {
    node.grad = Mat(node.storage.rows, node.storage.cols);
    node.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Mat* external) {
  const auto it = param_cache_.find(external);
  if (it != param_cache_.end()) return {it->second};
  Node node;
  node.vptr = external;
  node.requires_grad = grad_enabled_;
  if (node.requires_grad) node.grad = Mat(external->rows, external->cols);
  nodes_.push_back(std::move(node));
  const int idx = static_cast<int>(nodes_.size()) - 1;
  param_cache_[external] = idx;
  return {idx};
}

Var Tape::constant(Mat m) { return make(std::move(m), false, nullptr); }

Var Tape::add(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  check(A.rows == B.rows && A.cols == B.cols, "add: shape mismatch");
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
  const int ia = a.index, ib = b.index;
  return make(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    if (t.needs(ia))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i];
    if (t.needs(ib))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ib).v[i] += g.v[i];
  });
}

Var Tape::sub(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  check(A.rows == B.rows && A.cols == B.cols, "sub: shape mismatch");
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] -= B.v[i];
  const int ia = a.index, ib = b.index;
  return make(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    if (t.needs(ia))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i];
    if (t.needs(ib))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ib).v[i] -= g.v[i];
  });
}

Var Tape::mul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  check(A.rows == B.rows && A.cols == B.cols, "mul: shape mismatch");
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
  const int ia = a.index, ib = b.index;
  return make(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& A2 = t.value_of(ia);
    const Mat& B2 = t.value_of(ib);
    if (t.needs(ia))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i] * B2.v[i];
    if (t.needs(ib))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ib).v[i] += g.v[i] * A2.v[i];
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  check(R.rows == 1 && R.cols == A.cols, "add_rowvec: bad row shape");
  Mat out = A;
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) out.at(r, c) += R.at(0, c);
  const int ia = a.index, ir = row.index;
  return make(std::move(out), needs(ia) || needs(ir), [ia, ir](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    if (t.needs(ia))
      for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i];
    if (t.needs(ir)) {
      Mat& gr = t.grad_of(ir);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) gr.at(0, c) += g.at(r, c);
    }
  });
}

Var Tape::scale(Var a, double s) {
  Mat out = val(a);
  for (double& x : out.v) x *= s;
  const int ia = a.index;
  return make(std::move(out), needs(ia), [ia, s](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += s * g.v[i];
  });
}

Var Tape::matmul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  check(A.cols == B.rows, "matmul: inner dimension mismatch");
  Mat out(A.rows, B.cols);
  for (int r = 0; r < A.rows; ++r)
    for (int k = 0; k < A.cols; ++k) {
      const double av = A.at(r, k);
      if (av == 0.0) continue;
      for (int c = 0; c < B.cols; ++c) out.at(r, c) += av * B.at(k, c);
    }
  const int ia = a.index, ib = b.index;
  return make(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& A2 = t.value_of(ia);
    const Mat& B2 = t.value_of(ib);
    if (t.needs(ia)) {  // dA += G * B^T
      Mat& ga = t.grad_of(ia);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
          const double gv = g.at(r, c);
          if (gv == 0.0) continue;
          for (int k = 0; k < B2.rows; ++k) ga.at(r, k) += gv * B2.at(k, c);
        }
    }
    if (t.needs(ib)) {  // dB += A^T * G
      Mat& gb = t.grad_of(ib);
      for (int r = 0; r < A2.rows; ++r)
        for (int k = 0; k < A2.cols; ++k) {
          const double av = A2.at(r, k);
          if (av == 0.0) continue;
          for (int c = 0; c < g.cols; ++c) gb.at(k, c) += av * g.at(r, c);
        }
    }
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  check(A.cols == B.cols, "matmul_nt: inner dimension mismatch");
  Mat out(A.rows, B.rows);
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < B.rows; ++c) {
      double acc = 0.0;
      for (int k = 0; k < A.cols; ++k) acc += A.at(r, k) * B.at(c, k);
      out.at(r, c) = acc;
    }
  const int ia = a.index, ib = b.index;
  return make(std::move(out), needs(ia) || needs(ib), [ia, ib](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& A2 = t.value_of(ia);
    const Mat& B2 = t.value_of(ib);
    if (t.needs(ia)) {  // dA += G * B
      Mat& ga = t.grad_of(ia);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
          const double gv = g.at(r, c);
          if (gv == 0.0) continue;
          for (int k = 0; k < B2.cols; ++k) ga.at(r, k) += gv * B2.at(c, k);
        }
    }
    if (t.needs(ib)) {  // dB += G^T * A
      Mat& gb = t.grad_of(ib);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
          const double gv = g.at(r, c);
          if (gv == 0.0) continue;
          for (int k = 0; k < A2.cols; ++k) gb.at(c, k) += gv * A2.at(r, k);
        }
    }
  });
}

Var Tape::relu(Var a) {
  Mat out = val(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  const int ia = a.index;
  return make(std::move(out), needs(ia), [ia](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& A2 = t.value_of(ia);
    for (size_t i = 0; i < g.size(); ++i)
      if (A2.v[i] > 0.0) t.grad_of(ia).v[i] += g.v[i];
  });
}

Var Tape::sigmoid(Var a) {
  Mat out = val(a);
  for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  const int ia = a.index, self = static_cast<int>(nodes_.size());
  return make(std::move(out), needs(ia), [ia, self](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& s = t.value_of(self);
    for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i] * s.v[i] * (1.0 - s.v[i]);
  });
}

Var Tape::log_elem(Var a) {
  Mat out = val(a);
  for (double& x : out.v) x = std::log(x);
  const int ia = a.index;
  return make(std::move(out), needs(ia), [ia](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& A2 = t.value_of(ia);
    for (size_t i = 0; i < g.size(); ++i) t.grad_of(ia).v[i] += g.v[i] / A2.v[i];
  });
}

namespace {

void softmax_forward(const Mat& in, const Mat* mask, Mat& out) {
  for (int r = 0; r < in.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < in.cols; ++c)
      if (!mask || mask->at(r, c) != 0.0) mx = std::max(mx, in.at(r, c));
    double z = 0.0;
    for (int c = 0; c < in.cols; ++c) {
      if (mask && mask->at(r, c) == 0.0) {
        out.at(r, c) = 0.0;
        continue;
      }
      out.at(r, c) = std::exp(in.at(r, c) - mx);
      z += out.at(r, c);
    }
    if (z > 0.0)
      for (int c = 0; c < in.cols; ++c) out.at(r, c) /= z;
  }
}

}  // namespace

Var Tape::softmax_rows(Var a) {
  Mat out(rows(a), cols(a));
  softmax_forward(val(a), nullptr, out);
  const int ia = a.index, self = static_cast<int>(nodes_.size());
  return make(std::move(out), needs(ia), [ia, self](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& p = t.value_of(self);
    Mat& ga = t.grad_of(ia);
    for (int r = 0; r < g.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * p.at(r, c);
      for (int c = 0; c < g.cols; ++c) ga.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var Tape::softmax_rows(Var a, const Mat& mask01) {
  check(mask01.rows == rows(a) && mask01.cols == cols(a), "softmax mask shape mismatch");
  Mat out(rows(a), cols(a));
  softmax_forward(val(a), &mask01, out);
  const int ia = a.index, self = static_cast<int>(nodes_.size());
  return make(std::move(out), needs(ia), [ia, self](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    const Mat& p = t.value_of(self);
    Mat& ga = t.grad_of(ia);
    for (int r = 0; r < g.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * p.at(r, c);
      // masked entries have p == 0, so their contribution vanishes
      for (int c = 0; c < g.cols; ++c) ga.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Mat& X = val(x);
  const Mat& G = val(gamma);
  const Mat& B = val(beta);
  check(G.rows == 1 && G.cols == X.cols && B.rows == 1 && B.cols == X.cols,
        "layer_norm: gamma/beta must be 1 x cols");
  const int C = X.cols;
  Mat out(X.rows, C);
  Mat xhat(X.rows, C);
  std::vector<double> inv_sigma(X.rows);
  for (int r = 0; r < X.rows; ++r) {
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += X.at(r, c);
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = X.at(r, c) - mu;
      var += d * d;
    }
    var /= C;
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c) {
      xhat.at(r, c) = (X.at(r, c) - mu) * inv_sigma[r];
      out.at(r, c) = G.at(0, c) * xhat.at(r, c) + B.at(0, c);
    }
  }
  const int ix = x.index, ig = gamma.index, ib = beta.index;
  auto xhat_shared = std::make_shared<Mat>(std::move(xhat));
  auto inv_shared = std::make_shared<std::vector<double>>(std::move(inv_sigma));
  return make(std::move(out), needs(ix) || needs(ig) || needs(ib),
              [ix, ig, ib, xhat_shared, inv_shared](Tape& t) {
                const Mat& g = t.grad_of(t.here_);
                const Mat& gam = t.value_of(ig);
                const Mat& xh = *xhat_shared;
                const int C = g.cols;
                if (t.needs(ig) || t.needs(ib)) {
                  for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < C; ++c) {
                      if (t.needs(ig)) t.grad_of(ig).at(0, c) += g.at(r, c) * xh.at(r, c);
                      if (t.needs(ib)) t.grad_of(ib).at(0, c) += g.at(r, c);
                    }
                }
                if (t.needs(ix)) {
                  Mat& gx = t.grad_of(ix);
                  for (int r = 0; r < g.rows; ++r) {
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (int c = 0; c < C; ++c) {
                      const double h = g.at(r, c) * gam.at(0, c);
                      mean_h += h;
                      mean_hx += h * xh.at(r, c);
                    }
                    mean_h /= C;
                    mean_hx /= C;
                    for (int c = 0; c < C; ++c) {
                      const double h = g.at(r, c) * gam.at(0, c);
                      gx.at(r, c) += (h - mean_h - xh.at(r, c) * mean_hx) * (*inv_shared)[r];
                    }
                  }
                }
              });
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
  const Mat& T = val(table);
  Mat out(static_cast<int>(ids.size()), T.cols);
  for (size_t r = 0; r < ids.size(); ++r) {
    check(ids[r] >= 0 && ids[r] < T.rows, "gather_rows: id out of range");
    for (int c = 0; c < T.cols; ++c) out.at(static_cast<int>(r), c) = T.at(ids[r], c);
  }
  const int it = table.index;
  return make(std::move(out), needs(it), [it, ids](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    Mat& gt = t.grad_of(it);
    for (size_t r = 0; r < ids.size(); ++r)
      for (int c = 0; c < g.cols; ++c) gt.at(ids[r], c) += g.at(static_cast<int>(r), c);
  });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
  const Mat& A = val(a);
  check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range");
  Mat out(A.rows, c1 - c0);
  for (int r = 0; r < A.rows; ++r)
    for (int c = c0; c < c1; ++c) out.at(r, c - c0) = A.at(r, c);
  const int ia = a.index;
  return make(std::move(out), needs(ia), [ia, c0](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    Mat& ga = t.grad_of(ia);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) ga.at(r, c + c0) += g.at(r, c);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int R = rows(parts[0]);
  int total = 0;
  bool any_grad = false;
  for (Var p : parts) {
    check(rows(p) == R, "concat_cols: row mismatch");
    total += cols(p);
    any_grad = any_grad || needs(p.index);
  }
  Mat out(R, total);
  int off = 0;
  std::vector<int> indices, offsets;
  for (Var p : parts) {
    const Mat& P = val(p);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < P.cols; ++c) out.at(r, off + c) = P.at(r, c);
    indices.push_back(p.index);
    offsets.push_back(off);
    off += P.cols;
  }
  return make(std::move(out), any_grad, [indices, offsets](Tape& t) {
    const Mat& g = t.grad_of(t.here_);
    for (size_t k = 0; k < indices.size(); ++k) {
      if (!t.needs(indices[k])) continue;
      Mat& gp = t.grad_of(indices[k]);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < gp.cols; ++c) gp.at(r, c) += g.at(r, offsets[k] + c);
    }
  });
}

Var Tape::pick(Var a, int r, int c) {
  const Mat& A = val(a);
  check(r >= 0 && r < A.rows && c >= 0 && c < A.cols, "pick: out of range");
  Mat out(1, 1);
  out.at(0, 0) = A.at(r, c);
  const int ia = a.index;
  return make(std::move(out), needs(ia), [ia, r, c](Tape& t) {
    t.grad_of(ia).at(r, c) += t.grad_of(t.here_).at(0, 0);
  });
}

Var Tape::sum_scalars(const std::vector<Var>& scalars) {
  check(!scalars.empty(), "sum_scalars: empty input");
  Mat out(1, 1);
  bool any_grad = false;
  std::vector<int> indices;
  for (Var s : scalars) {
    check(rows(s) == 1 && cols(s) == 1, "sum_scalars: inputs must be 1x1");
    out.at(0, 0) += val(s).at(0, 0);
    any_grad = any_grad || needs(s.index);
    indices.push_back(s.index);
  }
  return make(std::move(out), any_grad, [indices](Tape& t) {
    const double g = t.grad_of(t.here_).at(0, 0);
    for (int idx : indices)
      if (t.needs(idx)) t.grad_of(idx).at(0, 0) += g;
  });
}

Var Tape::mixture_pick(Var vocab_probs, Var attention, Var gate_col, int row,
                       const std::vector<int>& ext_ids, int target_ext_id, int vocab_size) {
  const Mat& P = val(vocab_probs);
  const Mat& A = val(attention);
  const Mat& G = val(gate_col);
  check(row >= 0 && row < P.rows && row < A.rows && row < G.rows, "mixture_pick: bad row");
  check(static_cast<int>(ext_ids.size()) == A.cols, "mixture_pick: ext_ids/attention mismatch");

  const double g = G.at(row, 0);
  const double pv = target_ext_id < vocab_size ? P.at(row, target_ext_id) : 0.0;
  double pa = 0.0;
  for (int i = 0; i < A.cols; ++i)
    if (ext_ids[i] == target_ext_id) pa += A.at(row, i);

  Mat out(1, 1);
  out.at(0, 0) = g * pv + (1.0 - g) * pa;
  const int ip = vocab_probs.index, ia = attention.index, ig = gate_col.index;
  return make(std::move(out), needs(ip) || needs(ia) || needs(ig),
              [ip, ia, ig, row, ext_ids, target_ext_id, vocab_size, g, pv, pa](Tape& t) {
                const double go = t.grad_of(t.here_).at(0, 0);
                if (t.needs(ip) && target_ext_id < vocab_size)
                  t.grad_of(ip).at(row, target_ext_id) += go * g;
                if (t.needs(ia))
                  for (size_t i = 0; i < ext_ids.size(); ++i)
                    if (ext_ids[i] == target_ext_id)
                      t.grad_of(ia).at(row, static_cast<int>(i)) += go * (1.0 - g);
                if (t.needs(ig)) t.grad_of(ig).at(row, 0) += go * (pv - pa);
              });
}

void Tape::backward(Var loss) {
  check(loss.valid() && rows(loss) == 1 && cols(loss) == 1, "backward: loss must be 1x1");
  check(grad_enabled_, "backward: tape built without gradients");
  if (!nodes_[loss.index].requires_grad)
    throw std::invalid_argument("backward: loss does not depend on any parameter");
  nodes_[loss.index].grad.at(0, 0) = 1.0;
  for (int i = loss.index; i >= 0; --i) {
    if (!nodes_[i].requires_grad || !nodes_[i].backprop) continue;
    here_ = i;
    nodes_[i].backprop(*this);
  }
}

}  // namespace ad
}  // namespace cqg
