#pragma once

// Reverse-mode differentiation over dense Eigen matrices. Each recorded node keeps its value
// and a closure that pushes the incoming gradient to its inputs. Feature maps of a batch are
// stored channel-major, item-major: a (C, B*T) matrix where item b owns columns [b*T, (b+1)*T).

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hrirdiff/error.hpp"

namespace hrirdiff::ad {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<Scalar>&)>;

  Var constant(Mat<Scalar> value) { return push(std::move(value), false, nullptr); }
  Var parameter(Mat<Scalar> value) { return push(std::move(value), true, nullptr); }

  Var push(Mat<Scalar> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat<Scalar>(), requires_grad, false, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Mat<Scalar>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  bool any_requires_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (requires_grad(v)) return true;
    return false;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Gradient of the last backward() root with respect to `v`; zero if `v` was unreachable.
  Mat<Scalar> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.has_grad) return Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    require(value(root).size() == 1, ErrorKind::kContract, "backward() needs a scalar root");
    for (auto& n : nodes_) n.has_grad = false;
    nodes_[root.id].grad = Mat<Scalar>::Ones(1, 1);
    nodes_[root.id].has_grad = true;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

inline void check(bool ok, const std::string& what) { require(ok, ErrorKind::kShape, what); }

// Geometry of a strided 1D correlation: output position t reads input t*stride - pad + j.
struct Window {
  Eigen::Index batch = 1;
  Eigen::Index signal_len = 0;
  Eigen::Index positions = 0;
  Eigen::Index kernel = 1;
  Eigen::Index stride = 1;
  Eigen::Index pad = 0;
};

template <typename Scalar>
Mat<Scalar> im2col(const Mat<Scalar>& x, const Window& w) {
  const Eigen::Index channels = x.rows();
  Mat<Scalar> cols = Mat<Scalar>::Zero(channels * w.kernel, w.batch * w.positions);
  for (Eigen::Index b = 0; b < w.batch; ++b)
    for (Eigen::Index t = 0; t < w.positions; ++t) {
      const Eigen::Index out_col = b * w.positions + t;
      for (Eigen::Index j = 0; j < w.kernel; ++j) {
        const Eigen::Index p = t * w.stride - w.pad + j;
        if (p < 0 || p >= w.signal_len) continue;
        const Eigen::Index in_col = b * w.signal_len + p;
        for (Eigen::Index c = 0; c < channels; ++c) cols(c * w.kernel + j, out_col) = x(c, in_col);
      }
    }
  return cols;
}

template <typename Scalar>
Mat<Scalar> col2im(const Mat<Scalar>& cols, Eigen::Index channels, const Window& w) {
  Mat<Scalar> x = Mat<Scalar>::Zero(channels, w.batch * w.signal_len);
  for (Eigen::Index b = 0; b < w.batch; ++b)
    for (Eigen::Index t = 0; t < w.positions; ++t) {
      const Eigen::Index out_col = b * w.positions + t;
      for (Eigen::Index j = 0; j < w.kernel; ++j) {
        const Eigen::Index p = t * w.stride - w.pad + j;
        if (p < 0 || p >= w.signal_len) continue;
        const Eigen::Index in_col = b * w.signal_len + p;
        for (Eigen::Index c = 0; c < channels; ++c) x(c, in_col) += cols(c * w.kernel + j, out_col);
      }
    }
  return x;
}

}  // namespace detail

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  detail::check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "add: shape mismatch");
  return t.push(t.value(a) + t.value(b), t.any_requires_grad({a, b}), [a, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename Scalar>
Var relu(Tape<Scalar>& t, Var x) {
  Mat<Scalar> y = t.value(x).cwiseMax(Scalar(0));
  return t.push(std::move(y), t.requires_grad(x), [x](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(x, (tp.value(x).array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var matmul(Tape<Scalar>& t, Var w, Var x) {
  detail::check(t.value(w).cols() == t.value(x).rows(), "matmul: inner dimension mismatch");
  return t.push(t.value(w) * t.value(x), t.any_requires_grad({w, x}), [w, x](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    if (tp.requires_grad(w)) tp.accumulate(w, g * tp.value(x).transpose());
    if (tp.requires_grad(x)) tp.accumulate(x, tp.value(w).transpose() * g);
  });
}

/// x + b with b a column vector broadcast across all columns of x.
template <typename Scalar>
Var add_row_bias(Tape<Scalar>& t, Var x, Var b) {
  detail::check(t.value(b).cols() == 1 && t.value(b).rows() == t.value(x).rows(), "add_row_bias: bias shape");
  Mat<Scalar> y = t.value(x).colwise() + t.value(b).col(0);
  return t.push(std::move(y), t.any_requires_grad({x, b}), [x, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.rowwise().sum());
  });
}

/// Adds column b of `bias` (C, B) to every time step of item b in x (C, B*T).
template <typename Scalar>
Var add_item_bias(Tape<Scalar>& t, Var x, Var bias, Eigen::Index length) {
  const auto& xv = t.value(x);
  const auto& bv = t.value(bias);
  detail::check(bv.rows() == xv.rows() && bv.cols() * length == xv.cols(), "add_item_bias: shape mismatch");
  Mat<Scalar> y = xv;
  for (Eigen::Index b = 0; b < bv.cols(); ++b) y.middleCols(b * length, length).colwise() += bv.col(b);
  return t.push(std::move(y), t.any_requires_grad({x, bias}),
                [x, bias, length](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  tp.accumulate(x, g);
                  if (!tp.requires_grad(bias)) return;
                  const Eigen::Index items = tp.value(bias).cols();
                  Mat<Scalar> gb(g.rows(), items);
                  for (Eigen::Index b = 0; b < items; ++b) gb.col(b) = g.middleCols(b * length, length).rowwise().sum();
                  tp.accumulate(bias, gb);
                });
}

/// Repeats each column of c (C, B) `length` times: (C, B*length).
template <typename Scalar>
Var broadcast_items(Tape<Scalar>& t, Var c, Eigen::Index length) {
  const auto& cv = t.value(c);
  Mat<Scalar> y(cv.rows(), cv.cols() * length);
  for (Eigen::Index b = 0; b < cv.cols(); ++b) y.middleCols(b * length, length).colwise() = cv.col(b);
  return t.push(std::move(y), t.requires_grad(c), [c, length](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    const Eigen::Index items = tp.value(c).cols();
    Mat<Scalar> gc(g.rows(), items);
    for (Eigen::Index b = 0; b < items; ++b) gc.col(b) = g.middleCols(b * length, length).rowwise().sum();
    tp.accumulate(c, gc);
  });
}

template <typename Scalar>
Var concat_rows(Tape<Scalar>& t, const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts.front()).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    detail::check(t.value(p).cols() == cols, "concat_rows: column mismatch");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Mat<Scalar> y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    y.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  return t.push(std::move(y), rg, [parts](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    Eigen::Index row = 0;
    for (Var p : parts) {
      const Eigen::Index n = tp.value(p).rows();
      tp.accumulate(p, g.middleRows(row, n));
      row += n;
    }
  });
}

/// Selects columns of `table` (D, L) by label: (D, B).
template <typename Scalar>
Var embedding(Tape<Scalar>& t, Var table, std::vector<int> labels) {
  const auto& tv = t.value(table);
  Mat<Scalar> y(tv.rows(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t b = 0; b < labels.size(); ++b) {
    require(labels[b] >= 0 && labels[b] < tv.cols(), ErrorKind::kContract,
            "DOA label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(tv.cols()) + ")");
    y.col(static_cast<Eigen::Index>(b)) = tv.col(labels[b]);
  }
  return t.push(std::move(y), t.requires_grad(table),
                [table, labels = std::move(labels)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  Mat<Scalar> gt = Mat<Scalar>::Zero(tp.value(table).rows(), tp.value(table).cols());
                  for (std::size_t b = 0; b < labels.size(); ++b) gt.col(labels[b]) += g.col(static_cast<Eigen::Index>(b));
                  tp.accumulate(table, gt);
                });
}

struct ConvShape {
  Eigen::Index batch = 1;
  Eigen::Index in_len = 0;
  Eigen::Index kernel = 3;
  Eigen::Index stride = 1;
  Eigen::Index pad = 1;

  Eigen::Index conv_out_len() const { return (in_len + 2 * pad - kernel) / stride + 1; }
  Eigen::Index transposed_out_len() const { return (in_len - 1) * stride - 2 * pad + kernel; }
};

/// Strided 1D convolution with zero padding. `w` is (Cout, Cin*k) with column index c*k + j.
template <typename Scalar>
Var conv1d(Tape<Scalar>& t, Var x, Var w, Var b, const ConvShape& s) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  detail::check(xv.cols() == s.batch * s.in_len, "conv1d: input length does not match batch layout");
  detail::check(wv.cols() == xv.rows() * s.kernel, "conv1d: weight does not match input channels");
  detail::check(t.value(b).rows() == wv.rows() && t.value(b).cols() == 1, "conv1d: bias shape");
  const detail::Window win{s.batch, s.in_len, s.conv_out_len(), s.kernel, s.stride, s.pad};
  auto cols = std::make_shared<Mat<Scalar>>(detail::im2col(xv, win));
  Mat<Scalar> y = wv * *cols;
  y.colwise() += t.value(b).col(0);
  return t.push(std::move(y), t.any_requires_grad({x, w, b}),
                [x, w, b, win, cols](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  if (tp.requires_grad(w)) tp.accumulate(w, g * cols->transpose());
                  if (tp.requires_grad(b)) tp.accumulate(b, g.rowwise().sum());
                  if (tp.requires_grad(x)) {
                    const Mat<Scalar> dcols = tp.value(w).transpose() * g;
                    tp.accumulate(x, detail::col2im(dcols, tp.value(x).rows(), win));
                  }
                });
}

/// Transposed 1D convolution (adjoint of conv1d's input map). `w` is (Cin, Cout*k).
template <typename Scalar>
Var conv_transpose1d(Tape<Scalar>& t, Var x, Var w, Var b, const ConvShape& s) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  detail::check(xv.cols() == s.batch * s.in_len, "conv_transpose1d: input length does not match batch layout");
  detail::check(wv.rows() == xv.rows(), "conv_transpose1d: weight does not match input channels");
  detail::check(wv.cols() % s.kernel == 0, "conv_transpose1d: weight columns not a multiple of kernel");
  const Eigen::Index out_channels = wv.cols() / s.kernel;
  detail::check(t.value(b).rows() == out_channels && t.value(b).cols() == 1, "conv_transpose1d: bias shape");
  const detail::Window win{s.batch, s.transposed_out_len(), s.in_len, s.kernel, s.stride, s.pad};
  Mat<Scalar> y = detail::col2im<Scalar>(wv.transpose() * xv, out_channels, win);
  y.colwise() += t.value(b).col(0);
  return t.push(std::move(y), t.any_requires_grad({x, w, b}), [x, w, b, win](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    const Mat<Scalar> dcols = detail::im2col(g, win);
    if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x) * dcols.transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, g.rowwise().sum());
    if (tp.requires_grad(x)) tp.accumulate(x, tp.value(w) * dcols);
  });
}

template <typename Scalar>
struct BatchNormBuffers {
  const Mat<Scalar>* running_mean = nullptr;  // read in eval mode
  const Mat<Scalar>* running_var = nullptr;
  Mat<Scalar>* update_mean = nullptr;  // written in training mode when set
  Mat<Scalar>* update_var = nullptr;
};

/// Per-channel normalisation over all columns. In training mode batch statistics are used
/// and, when buffers are given, the running statistics are updated; in eval mode the running
/// statistics are used.
template <typename Scalar>
Var batch_norm(Tape<Scalar>& t, Var x, Var gamma, Var beta, BatchNormBuffers<Scalar> buffers, bool training,
               Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5)) {
  const auto& xv = t.value(x);
  const Eigen::Index n = xv.cols();
  detail::check(t.value(gamma).rows() == xv.rows() && t.value(beta).rows() == xv.rows(), "batch_norm: parameter shape");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean, var;
  if (training) {
    require(n >= 2, ErrorKind::kContract, "batch_norm in training mode needs at least 2 values per channel");
    mean = xv.rowwise().mean();
    var = (xv.colwise() - mean).array().square().rowwise().mean().matrix();
    if (buffers.update_mean && buffers.update_var) {
      *buffers.update_mean = (Scalar(1) - momentum) * *buffers.update_mean + momentum * mean;
      *buffers.update_var = (Scalar(1) - momentum) * *buffers.update_var + momentum * var * (Scalar(n) / Scalar(n - 1));
    }
  } else {
    require(buffers.running_mean && buffers.running_var, ErrorKind::kContract, "batch_norm eval needs running stats");
    mean = buffers.running_mean->col(0);
    var = buffers.running_var->col(0);
  }
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std = (var.array() + eps).rsqrt().matrix();
  auto xhat = std::make_shared<Mat<Scalar>>(((xv.colwise() - mean).array().colwise() * inv_std.array()).matrix());
  Mat<Scalar> y = (xhat->array().colwise() * t.value(gamma).col(0).array()).matrix();
  y.colwise() += t.value(beta).col(0);
  return t.push(std::move(y), t.any_requires_grad({x, gamma, beta}),
                [x, gamma, beta, xhat, inv_std, training](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  if (tp.requires_grad(gamma)) tp.accumulate(gamma, (g.array() * xhat->array()).rowwise().sum().matrix());
                  if (tp.requires_grad(beta)) tp.accumulate(beta, g.rowwise().sum());
                  if (!tp.requires_grad(x)) return;
                  const auto scale = (tp.value(gamma).col(0).array() * inv_std.array()).eval();
                  if (!training) {
                    tp.accumulate(x, (g.array().colwise() * scale).matrix());
                    return;
                  }
                  const auto g_mean = g.rowwise().mean().eval();
                  const auto gx_mean = (g.array() * xhat->array()).rowwise().mean().eval();
                  Mat<Scalar> centred = g.colwise() - g_mean;
                  centred -= (xhat->array().colwise() * gx_mean.array()).matrix();
                  tp.accumulate(x, (centred.array().colwise() * scale).matrix());
                });
}

/// Multi-head scaled dot-product attention over the time axis of each batch item.
/// q, k, v are (C, B*T); channel block h*d..(h+1)*d forms head h.
template <typename Scalar>
Var attention(Tape<Scalar>& t, Var q, Var k, Var v, int heads, Eigen::Index length) {
  const auto& qv = t.value(q);
  const Eigen::Index channels = qv.rows();
  detail::check(heads > 0 && channels % heads == 0, "attention: channels not divisible by heads");
  detail::check(t.value(k).rows() == channels && t.value(v).rows() == channels, "attention: q/k/v channel mismatch");
  detail::check(qv.cols() % length == 0 && t.value(k).cols() == qv.cols() && t.value(v).cols() == qv.cols(),
                "attention: q/k/v length mismatch");
  const Eigen::Index d = channels / heads;
  const Eigen::Index items = qv.cols() / length;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  const bool rg = t.any_requires_grad({q, k, v});
  auto probs = std::make_shared<std::vector<Mat<Scalar>>>();
  if (rg) probs->reserve(static_cast<std::size_t>(items * heads));
  Mat<Scalar> out(channels, qv.cols());
  for (Eigen::Index b = 0; b < items; ++b)
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto qb = qv.block(h * d, b * length, d, length);
      const auto kb = t.value(k).block(h * d, b * length, d, length);
      const auto vb = t.value(v).block(h * d, b * length, d, length);
      Mat<Scalar> a = scale * (qb.transpose() * kb);
      a.colwise() -= a.rowwise().maxCoeff();
      a = a.array().exp().matrix();
      a.array().colwise() /= a.rowwise().sum().array();
      out.block(h * d, b * length, d, length).noalias() = vb * a.transpose();
      if (rg) probs->push_back(std::move(a));
    }
  return t.push(std::move(out), rg,
                [q, k, v, heads, length, d, items, scale, probs](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  const Eigen::Index channels = tp.value(q).rows();
                  Mat<Scalar> dq(channels, g.cols()), dk(channels, g.cols()), dv(channels, g.cols());
                  for (Eigen::Index b = 0; b < items; ++b)
                    for (Eigen::Index h = 0; h < heads; ++h) {
                      const Mat<Scalar>& a = (*probs)[static_cast<std::size_t>(b * heads + h)];
                      const auto go = g.block(h * d, b * length, d, length);
                      const auto qb = tp.value(q).block(h * d, b * length, d, length);
                      const auto kb = tp.value(k).block(h * d, b * length, d, length);
                      const auto vb = tp.value(v).block(h * d, b * length, d, length);
                      dv.block(h * d, b * length, d, length).noalias() = go * a;
                      const Mat<Scalar> da = go.transpose() * vb;
                      Mat<Scalar> ds = (a.array() * da.array()).matrix();
                      const auto row_dot = ds.rowwise().sum().eval();
                      ds -= (a.array().colwise() * row_dot.array()).matrix();
                      dq.block(h * d, b * length, d, length).noalias() = scale * (kb * ds.transpose());
                      dk.block(h * d, b * length, d, length).noalias() = scale * (qb * ds);
                    }
                  tp.accumulate(q, dq);
                  tp.accumulate(k, dk);
                  tp.accumulate(v, dv);
                });
}

/// Zero-pads (or crops, when to_len < from_len) every item along time.
template <typename Scalar>
Var resize_time(Tape<Scalar>& t, Var x, Eigen::Index from_len, Eigen::Index to_len) {
  const auto& xv = t.value(x);
  detail::check(xv.cols() % from_len == 0, "resize_time: layout mismatch");
  const Eigen::Index items = xv.cols() / from_len;
  const Eigen::Index keep = std::min(from_len, to_len);
  Mat<Scalar> y = Mat<Scalar>::Zero(xv.rows(), items * to_len);
  for (Eigen::Index b = 0; b < items; ++b) y.middleCols(b * to_len, keep) = xv.middleCols(b * from_len, keep);
  return t.push(std::move(y), t.requires_grad(x), [x, from_len, to_len, items, keep](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    Mat<Scalar> gx = Mat<Scalar>::Zero(g.rows(), items * from_len);
    for (Eigen::Index b = 0; b < items; ++b) gx.middleCols(b * from_len, keep) = g.middleCols(b * to_len, keep);
    tp.accumulate(x, gx);
  });
}

/// scale * ||x - target||^2 as a 1x1 node; `target` is treated as a constant.
template <typename Scalar>
Var squared_error(Tape<Scalar>& t, Var x, Mat<Scalar> target, Scalar scale) {
  detail::check(t.value(x).rows() == target.rows() && t.value(x).cols() == target.cols(), "squared_error: shape mismatch");
  auto diff = std::make_shared<Mat<Scalar>>(t.value(x) - target);
  Mat<Scalar> y(1, 1);
  y(0, 0) = scale * diff->squaredNorm();
  return t.push(std::move(y), t.requires_grad(x), [x, diff, scale](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(x, (Scalar(2) * scale * g(0, 0)) * *diff);
  });
}

template <typename Scalar>
Var sum(Tape<Scalar>& t, Var x) {
  Mat<Scalar> y(1, 1);
  y(0, 0) = t.value(x).sum();
  return t.push(std::move(y), t.requires_grad(x), [x](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(x, Mat<Scalar>::Constant(tp.value(x).rows(), tp.value(x).cols(), g(0, 0)));
  });
}

}  // namespace hrirdiff::ad
