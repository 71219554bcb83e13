#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dmeta/rng.hpp"
#include "dmeta/tensor.hpp"

namespace dmeta {

enum class BnMode {
  Train,       ///< batch statistics, running stats updated, full backward
  BatchStats,  ///< batch statistics, no running update, full backward
  Running,     ///< stored running statistics
  /// Batch statistics treated as constants in the backward pass. Used by
  /// the mutation-sensitivity probe, where per-sample derivatives must not
  /// couple through the batch.
  BatchStatsDetached,
};

/// Reverse-mode tape over dense tensors. Records one node per primitive op
/// in forward order; backward() replays adjoints in exact reverse order.
/// A tape is confined to a single worker; independent tapes may run in
/// parallel.
///
/// Leaves marked trainable always end backward() with a populated gradient
/// (zero when disconnected from the loss). Interior values are immutable
/// once their producing op has written them.
template <typename R>
class Tape {
 public:
  using TensorR = TensorT<R>;
  using Mat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using Vec = Eigen::Matrix<R, Eigen::Dynamic, 1>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int leaf(TensorR value, bool trainable) {
    Node n;
    n.value = std::move(value);
    n.trainable_leaf = trainable;
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(TensorR value) { return leaf(std::move(value), false); }

  const TensorR& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const TensorR& grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// When set, weight/bias/affine gradients of trainable leaves accumulate
  /// per-sample absolute contributions instead of signed sums. Used by the
  /// mutation-sensitivity probe; only meaningful for graphs whose samples
  /// are independent (batchnorm in BatchStats mode).
  void set_abs_param_grads(bool on) { abs_param_grads_ = on; }
  bool abs_param_grads() const { return abs_param_grads_; }

  /// Optional record of backward visit order (node ids), for tests.
  void set_visit_log(std::vector<int>* log) { visit_log_ = log; }

  void zero_grads() {
    for (auto& n : nodes_) {
      if (!n.grad.data.empty()) n.grad.fill(R(0));
    }
  }

  /// Backward from a scalar node.
  void backward(int loss_id) {
    const TensorR& v = value(loss_id);
    if (v.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    TensorR seed(v.shape, R(1));
    backward_seed(loss_id, seed);
  }

  /// Backward with an explicit output adjoint.
  void backward_seed(int id, const TensorR& seed) {
    if (seed.shape != value(id).shape) {
      throw std::invalid_argument("backward_seed: seed shape mismatch");
    }
    {
      TensorR& g = grad_buf(id);
      for (std::int64_t i = 0; i < seed.numel(); ++i) g[i] += seed[i];
    }
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || !n.needs_grad || n.grad.data.empty()) continue;
      if (visit_log_) visit_log_->push_back(i);
      n.backward(*this);
    }
    // Trainable leaves disconnected from the loss still report zeros.
    for (auto& n : nodes_) {
      if (n.trainable_leaf && n.grad.data.empty()) n.grad = TensorR(n.value.shape);
    }
  }

  // ---------------------------------------------------------------- ops --

  /// 2D convolution, odd square kernel, stride 1, zero-padded to keep the
  /// spatial extent ("same"). x: [B,C,H,W], w: [F,C,k,k], b: [F].
  int conv2d(int x_id, int w_id, int b_id) {
    const TensorR& x = value(x_id);
    const TensorR& w = value(w_id);
    const TensorR& b = value(b_id);
    if (x.ndim() != 4 || w.ndim() != 4) {
      throw std::invalid_argument("conv2d: x must be [B,C,H,W], w [F,C,k,k]");
    }
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C) {
      throw std::invalid_argument("conv2d: kernel channels != input channels");
    }
    if (w.dim(3) != k || k % 2 == 0) {
      throw std::invalid_argument("conv2d: kernel must be odd and square");
    }
    if (b.shape != std::vector<int>{F}) {
      throw std::invalid_argument("conv2d: bias must be [F]");
    }

    const int pad = k / 2;
    const int hw = H * W;
    const int ck2 = C * k * k;
    TensorR y({B, F, H, W});
    AlignedVector<R> col(static_cast<std::size_t>(ck2) * hw);
    ConstMatMap wm(w.ptr(), F, ck2);
    Vec bv = Eigen::Map<const Vec>(b.ptr(), F);
    for (int bi = 0; bi < B; ++bi) {
      im2col(x.ptr() + static_cast<std::int64_t>(bi) * C * hw, C, H, W, k, pad,
             col.data());
      MatMap ym(y.ptr() + static_cast<std::int64_t>(bi) * F * hw, F, hw);
      ConstMatMap cm(col.data(), ck2, hw);
      ym.noalias() = wm * cm;
      ym.colwise() += bv;
    }

    return make_node(std::move(y), {x_id, w_id, b_id},
                     [x_id, w_id, b_id, B, C, H, W, F, k, pad](Tape& t, int self) {
      const TensorR& x = t.value(x_id);
      const TensorR& w = t.value(w_id);
      const TensorR& dy = t.grad(self);
      const int hw = H * W;
      const int ck2 = C * k * k;
      const bool need_dx = t.needs_grad(x_id);
      const bool need_dw = t.needs_grad(w_id);
      const bool need_db = t.needs_grad(b_id);
      const bool abs_mode = t.abs_param_grads();

      AlignedVector<R> col;
      if (need_dw || need_db) col.resize(static_cast<std::size_t>(ck2) * hw);
      AlignedVector<R> dcol;
      if (need_dx) dcol.resize(static_cast<std::size_t>(ck2) * hw);
      Mat dw_local;
      if (need_dw && abs_mode) dw_local.resize(F, ck2);

      ConstMatMap wm(w.ptr(), F, ck2);
      R* dw_ptr = need_dw ? t.grad_buf(w_id).ptr() : nullptr;
      TensorR* db = need_db ? &t.grad_buf(b_id) : nullptr;
      TensorR* dx = need_dx ? &t.grad_buf(x_id) : nullptr;

      for (int bi = 0; bi < B; ++bi) {
        ConstMatMap dym(dy.ptr() + static_cast<std::int64_t>(bi) * F * hw, F, hw);
        if (need_dw) {
          // weight grads need each sample's column matrix
          t.im2col(x.ptr() + static_cast<std::int64_t>(bi) * C * hw, C, H, W, k,
                   pad, col.data());
          MatMap dwm(dw_ptr, F, ck2);
          ConstMatMap cm(col.data(), ck2, hw);
          if (abs_mode) {
            dw_local.noalias() = dym * cm.transpose();
            dwm += dw_local.cwiseAbs();
          } else {
            dwm.noalias() += dym * cm.transpose();
          }
        }
        if (need_db) {
          for (int f = 0; f < F; ++f) {
            R s = dym.row(f).sum();
            (*db)[f] += abs_mode ? std::abs(s) : s;
          }
        }
        if (need_dx) {
          MatMap dcm(dcol.data(), ck2, hw);
          dcm.noalias() = wm.transpose() * dym;
          t.col2im_add(dcol.data(), C, H, W, k, pad,
                       dx->ptr() + static_cast<std::int64_t>(bi) * C * hw);
        }
      }
    });
  }

  /// Per-channel batch normalization over [B,F,H,W].
  /// Train mode requires B >= 2, normalizes by biased batch statistics and
  /// folds them into running stats with the given momentum.
  int batchnorm(int x_id, int gamma_id, int beta_id, BnMode mode,
                TensorR* running_mean, TensorR* running_var,
                R eps = R(1e-5), R momentum = R(0.9)) {
    const TensorR& x = value(x_id);
    if (x.ndim() != 4) throw std::invalid_argument("batchnorm: x must be [B,F,H,W]");
    const int B = x.dim(0), F = x.dim(1), hw = x.dim(2) * x.dim(3);
    require_shape(value(gamma_id), {F}, "batchnorm gamma");
    require_shape(value(beta_id), {F}, "batchnorm beta");
    if (mode == BnMode::Train && B < 2) {
      throw std::invalid_argument("batchnorm: train mode needs batch size >= 2");
    }
    if (mode == BnMode::Running && (!running_mean || !running_var)) {
      throw std::invalid_argument("batchnorm: running stats required in Running mode");
    }

    std::vector<R> mu(static_cast<std::size_t>(F)), invstd(static_cast<std::size_t>(F));
    const std::int64_t n = static_cast<std::int64_t>(B) * hw;
    if (mode == BnMode::Running) {
      for (int f = 0; f < F; ++f) {
        mu[static_cast<std::size_t>(f)] = (*running_mean)[f];
        invstd[static_cast<std::size_t>(f)] =
            R(1) / std::sqrt((*running_var)[f] + eps);
      }
    } else {
      for (int f = 0; f < F; ++f) {
        double sum = 0.0, sq = 0.0;
        for (int bi = 0; bi < B; ++bi) {
          const R* p = x.ptr() + (static_cast<std::int64_t>(bi) * F + f) * hw;
          for (int i = 0; i < hw; ++i) {
            sum += p[i];
            sq += static_cast<double>(p[i]) * p[i];
          }
        }
        const double m = sum / static_cast<double>(n);
        const double v = sq / static_cast<double>(n) - m * m;
        mu[static_cast<std::size_t>(f)] = static_cast<R>(m);
        invstd[static_cast<std::size_t>(f)] =
            static_cast<R>(1.0 / std::sqrt(std::max(v, 0.0) + static_cast<double>(eps)));
        if (mode == BnMode::Train && running_mean && running_var) {
          (*running_mean)[f] = momentum * (*running_mean)[f] + (R(1) - momentum) * static_cast<R>(m);
          (*running_var)[f] = momentum * (*running_var)[f] + (R(1) - momentum) * static_cast<R>(v);
        }
      }
    }

    const TensorR& gamma = value(gamma_id);
    const TensorR& beta = value(beta_id);
    TensorR y(x.shape);
    for (int bi = 0; bi < B; ++bi) {
      for (int f = 0; f < F; ++f) {
        const R* p = x.ptr() + (static_cast<std::int64_t>(bi) * F + f) * hw;
        R* q = y.ptr() + (static_cast<std::int64_t>(bi) * F + f) * hw;
        const R a = gamma[f] * invstd[static_cast<std::size_t>(f)];
        const R c = beta[f] - a * mu[static_cast<std::size_t>(f)];
        for (int i = 0; i < hw; ++i) q[i] = a * p[i] + c;
      }
    }

    const bool through_stats = (mode == BnMode::Train || mode == BnMode::BatchStats);
    return make_node(std::move(y), {x_id, gamma_id, beta_id},
                     [x_id, gamma_id, beta_id, B, F, hw, mu, invstd,
                      through_stats](Tape& t, int self) {
      const TensorR& x = t.value(x_id);
      const TensorR& gamma = t.value(gamma_id);
      const TensorR& dy = t.grad(self);
      const bool need_dx = t.needs_grad(x_id);
      const bool need_dg = t.needs_grad(gamma_id);
      const bool need_db = t.needs_grad(beta_id);
      const bool abs_mode = t.abs_param_grads();
      const std::int64_t n = static_cast<std::int64_t>(B) * hw;

      std::vector<double> sum_dy(static_cast<std::size_t>(F), 0.0);
      std::vector<double> sum_dy_xhat(static_cast<std::size_t>(F), 0.0);
      for (int f = 0; f < F; ++f) {
        for (int bi = 0; bi < B; ++bi) {
          const std::int64_t off = (static_cast<std::int64_t>(bi) * F + f) * hw;
          const R* px = x.ptr() + off;
          const R* pd = dy.ptr() + off;
          double s = 0.0, sx = 0.0;
          for (int i = 0; i < hw; ++i) {
            s += pd[i];
            sx += static_cast<double>(pd[i]) *
                  ((px[i] - mu[static_cast<std::size_t>(f)]) * invstd[static_cast<std::size_t>(f)]);
          }
          if (abs_mode && !through_stats) {
            sum_dy[static_cast<std::size_t>(f)] += std::abs(s);
            sum_dy_xhat[static_cast<std::size_t>(f)] += std::abs(sx);
          } else {
            sum_dy[static_cast<std::size_t>(f)] += s;
            sum_dy_xhat[static_cast<std::size_t>(f)] += sx;
          }
        }
      }
      if (need_db) {
        TensorR& db = t.grad_buf(beta_id);
        for (int f = 0; f < F; ++f) db[f] += static_cast<R>(sum_dy[static_cast<std::size_t>(f)]);
      }
      if (need_dg) {
        TensorR& dg = t.grad_buf(gamma_id);
        for (int f = 0; f < F; ++f) dg[f] += static_cast<R>(sum_dy_xhat[static_cast<std::size_t>(f)]);
      }
      if (need_dx) {
        TensorR& dx = t.grad_buf(x_id);
        for (int f = 0; f < F; ++f) {
          const R a = gamma[f] * invstd[static_cast<std::size_t>(f)];
          const R mean_dy = static_cast<R>(sum_dy[static_cast<std::size_t>(f)] / static_cast<double>(n));
          const R mean_dyx = static_cast<R>(sum_dy_xhat[static_cast<std::size_t>(f)] / static_cast<double>(n));
          for (int bi = 0; bi < B; ++bi) {
            const std::int64_t off = (static_cast<std::int64_t>(bi) * F + f) * hw;
            const R* px = x.ptr() + off;
            const R* pd = dy.ptr() + off;
            R* pg = dx.ptr() + off;
            if (through_stats) {
              for (int i = 0; i < hw; ++i) {
                const R xhat = (px[i] - mu[static_cast<std::size_t>(f)]) * invstd[static_cast<std::size_t>(f)];
                pg[i] += a * (pd[i] - mean_dy - xhat * mean_dyx);
              }
            } else {
              for (int i = 0; i < hw; ++i) pg[i] += a * pd[i];
            }
          }
        }
      }
    });
  }

  int relu(int x_id) {
    const TensorR& x = value(x_id);
    TensorR y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > R(0) ? x[i] : R(0);
    return make_node(std::move(y), {x_id}, [x_id](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& y = t.value(self);
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (y[i] > R(0)) dx[i] += dy[i];
      }
    });
  }

  /// 2x2 max pooling, stride 2; trailing odd row/column is dropped.
  int maxpool2x2(int x_id) {
    const TensorR& x = value(x_id);
    if (x.ndim() != 4) throw std::invalid_argument("maxpool2x2: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H / 2, Wo = W / 2;
    if (Ho == 0 || Wo == 0) throw std::invalid_argument("maxpool2x2: input too small");
    TensorR y({B, C, Ho, Wo});
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.numel()));
    std::int64_t o = 0;
    for (int bc = 0; bc < B * C; ++bc) {
      const R* p = x.ptr() + static_cast<std::int64_t>(bc) * H * W;
      for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
          std::int64_t best = static_cast<std::int64_t>(2 * i) * W + 2 * j;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const std::int64_t idx = static_cast<std::int64_t>(2 * i + di) * W + 2 * j + dj;
              if (p[idx] > p[best]) best = idx;
            }
          }
          y[o] = p[best];
          argmax[static_cast<std::size_t>(o)] = static_cast<std::int64_t>(bc) * H * W + best;
          ++o;
        }
      }
    }
    return make_node(std::move(y), {x_id},
                     [x_id, argmax = std::move(argmax)](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < dy.numel(); ++i) {
        dx[argmax[static_cast<std::size_t>(i)]] += dy[i];
      }
    });
  }

  /// [B,C,H,W] (or any rank >= 2) -> [B, rest].
  int flatten(int x_id) {
    const TensorR& x = value(x_id);
    if (x.ndim() < 2) throw std::invalid_argument("flatten: rank must be >= 2");
    const int B = x.dim(0);
    const int rest = static_cast<int>(x.numel() / B);
    TensorR y = x;
    y.shape = {B, rest};
    return make_node(std::move(y), {x_id}, [x_id](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  /// x: [B,D], w: [D,C], b: [C] -> [B,C].
  int fully_connected(int x_id, int w_id, int b_id) {
    const TensorR& x = value(x_id);
    const TensorR& w = value(w_id);
    const TensorR& b = value(b_id);
    if (x.ndim() != 2 || w.ndim() != 2) {
      throw std::invalid_argument("fully_connected: x [B,D], w [D,C]");
    }
    const int B = x.dim(0), D = x.dim(1), C = w.dim(1);
    if (w.dim(0) != D) throw std::invalid_argument("fully_connected: D mismatch");
    if (b.shape != std::vector<int>{C}) {
      throw std::invalid_argument("fully_connected: bias must be [C]");
    }
    TensorR y({B, C});
    {
      ConstMatMap xm(x.ptr(), B, D);
      ConstMatMap wm(w.ptr(), D, C);
      MatMap ym(y.ptr(), B, C);
      // row at a time: every sample takes the same kernel path, so
      // identical images yield bit-identical logit rows at any batch
      // position (a blocked GEMM would not guarantee that)
      for (int bi = 0; bi < B; ++bi) {
        ym.row(bi).noalias() = xm.row(bi) * wm;
      }
      Eigen::Map<const Vec> bv(b.ptr(), C);
      ym.rowwise() += bv.transpose();
    }
    return make_node(std::move(y), {x_id, w_id, b_id},
                     [x_id, w_id, b_id, B, D, C](Tape& t, int self) {
      const TensorR& x = t.value(x_id);
      const TensorR& w = t.value(w_id);
      const TensorR& dy = t.grad(self);
      ConstMatMap dym(dy.ptr(), B, C);
      const bool abs_mode = t.abs_param_grads();
      if (t.needs_grad(w_id)) {
        TensorR& dw = t.grad_buf(w_id);
        MatMap dwm(dw.ptr(), D, C);
        ConstMatMap xm(x.ptr(), B, D);
        if (abs_mode) {
          for (int bi = 0; bi < B; ++bi) {
            dwm += (xm.row(bi).transpose() * dym.row(bi)).cwiseAbs();
          }
        } else {
          dwm.noalias() += xm.transpose() * dym;
        }
      }
      if (t.needs_grad(b_id)) {
        TensorR& db = t.grad_buf(b_id);
        for (int bi = 0; bi < B; ++bi) {
          for (int c = 0; c < C; ++c) {
            const R g = dy[static_cast<std::int64_t>(bi) * C + c];
            db[c] += abs_mode ? std::abs(g) : g;
          }
        }
      }
      if (t.needs_grad(x_id)) {
        TensorR& dx = t.grad_buf(x_id);
        MatMap dxm(dx.ptr(), B, D);
        ConstMatMap wm(w.ptr(), D, C);
        dxm.noalias() += dym * wm.transpose();
      }
    });
  }

  /// Elementwise zeroing with probability `rate`; survivors scaled by
  /// 1/(1-rate). Fresh mask per call. rate == 0 is the identity and
  /// consumes no randomness.
  int dropout(int x_id, R rate, RngStream& rng) {
    if (!(rate >= R(0) && rate < R(1))) {
      throw std::invalid_argument("dropout: rate must be in [0,1)");
    }
    const TensorR& x = value(x_id);
    if (rate == R(0)) {
      TensorR y = x;
      return make_node(std::move(y), {x_id}, [x_id](Tape& t, int self) {
        if (!t.needs_grad(x_id)) return;
        const TensorR& dy = t.grad(self);
        TensorR& dx = t.grad_buf(x_id);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
      });
    }
    const R keep_scale = R(1) / (R(1) - rate);
    std::vector<R> mult(static_cast<std::size_t>(x.numel()));
    TensorR y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const R m = rng.uniform() < static_cast<double>(rate) ? R(0) : keep_scale;
      mult[static_cast<std::size_t>(i)] = m;
      y[i] = x[i] * m;
    }
    return make_node(std::move(y), {x_id},
                     [x_id, mult = std::move(mult)](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < dy.numel(); ++i) {
        dx[i] += dy[i] * mult[static_cast<std::size_t>(i)];
      }
    });
  }

  /// Row-wise softmax over [B,C].
  int softmax(int x_id) {
    const TensorR& x = value(x_id);
    if (x.ndim() != 2) throw std::invalid_argument("softmax: x must be [B,C]");
    const int B = x.dim(0), C = x.dim(1);
    TensorR y(x.shape);
    for (int bi = 0; bi < B; ++bi) {
      const R* p = x.ptr() + static_cast<std::int64_t>(bi) * C;
      R* q = y.ptr() + static_cast<std::int64_t>(bi) * C;
      R mx = p[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, p[c]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        q[c] = std::exp(p[c] - mx);
        sum += q[c];
      }
      const R inv = static_cast<R>(1.0 / sum);
      for (int c = 0; c < C; ++c) q[c] *= inv;
    }
    return make_node(std::move(y), {x_id}, [x_id, B, C](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& y = t.value(self);
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (int bi = 0; bi < B; ++bi) {
        const std::int64_t off = static_cast<std::int64_t>(bi) * C;
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += static_cast<double>(dy[off + c]) * y[off + c];
        for (int c = 0; c < C; ++c) {
          dx[off + c] += y[off + c] * (dy[off + c] - static_cast<R>(dot));
        }
      }
    });
  }

  /// Mean over the batch of -sum_c target * log(max(p, 1e-8)).
  /// Targets are constants; each row must sum to 1 within 1e-4. Below the
  /// floor the backward pass uses -t / floor, the gradient of the unclamped
  /// loss evaluated at the floor: the clamp bounds the slope instead of
  /// zeroing it, so saturated-wrong predictions stay recoverable.
  int cross_entropy(int p_id, const TensorR& target) {
    const TensorR& p = value(p_id);
    if (p.ndim() != 2) throw std::invalid_argument("cross_entropy: p must be [B,C]");
    if (target.shape != p.shape) {
      throw std::invalid_argument("cross_entropy: target shape mismatch");
    }
    const int B = p.dim(0), C = p.dim(1);
    for (int bi = 0; bi < B; ++bi) {
      double row = 0.0;
      for (int c = 0; c < C; ++c) row += target[static_cast<std::int64_t>(bi) * C + c];
      if (row < 1.0 - 1e-4 || row > 1.0 + 1e-4) {
        throw std::invalid_argument("cross_entropy: target row " + std::to_string(bi) +
                                    " sums to " + std::to_string(row));
      }
    }
    double loss = 0.0;
    for (int bi = 0; bi < B; ++bi) {
      for (int c = 0; c < C; ++c) {
        const std::int64_t i = static_cast<std::int64_t>(bi) * C + c;
        if (target[i] != R(0)) {
          loss -= static_cast<double>(target[i]) *
                  std::log(std::max(static_cast<double>(p[i]), kProbFloor));
        }
      }
    }
    TensorR y({1});
    y[0] = static_cast<R>(loss / B);
    return make_node(std::move(y), {p_id}, [p_id, target, B, C](Tape& t, int self) {
      if (!t.needs_grad(p_id)) return;
      const TensorR& p = t.value(p_id);
      const R dy = t.grad(self)[0];
      TensorR& dp = t.grad_buf(p_id);
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        if (target[i] == R(0)) continue;
        const double pc = std::max(static_cast<double>(p[i]), kProbFloor);
        dp[i] -= dy * target[i] / static_cast<R>(pc * B);
      }
      (void)C;
    });
  }

  /// Fused row-wise softmax and cross-entropy against constant targets.
  /// The value equals cross_entropy(softmax(x), target) including the
  /// probability clamp; the backward pass is the exact unclamped composite
  /// (softmax(x) - target)/B, which stays informative in saturated regimes
  /// where the clamped chain underflows. Training steps use this; the
  /// separate softmax and cross_entropy ops remain for everything else.
  int softmax_cross_entropy(int x_id, const TensorR& target) {
    const TensorR& x = value(x_id);
    if (x.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy: x must be [B,C]");
    if (target.shape != x.shape) {
      throw std::invalid_argument("softmax_cross_entropy: target shape mismatch");
    }
    const int B = x.dim(0), C = x.dim(1);
    TensorR probs({B, C});
    double loss = 0.0;
    for (int bi = 0; bi < B; ++bi) {
      const R* p = x.ptr() + static_cast<std::int64_t>(bi) * C;
      R* q = probs.ptr() + static_cast<std::int64_t>(bi) * C;
      R mx = p[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, p[c]);
      double sum = 0.0, row = 0.0;
      for (int c = 0; c < C; ++c) {
        q[c] = std::exp(p[c] - mx);
        sum += q[c];
      }
      const R inv = static_cast<R>(1.0 / sum);
      for (int c = 0; c < C; ++c) {
        q[c] *= inv;
        const std::int64_t i = static_cast<std::int64_t>(bi) * C + c;
        row += target[i];
        if (target[i] != R(0)) {
          loss -= static_cast<double>(target[i]) *
                  std::log(std::max(static_cast<double>(q[c]), kProbFloor));
        }
      }
      if (row < 1.0 - 1e-4 || row > 1.0 + 1e-4) {
        throw std::invalid_argument("softmax_cross_entropy: target row " +
                                    std::to_string(bi) + " sums to " + std::to_string(row));
      }
    }
    TensorR y({1});
    y[0] = static_cast<R>(loss / B);
    return make_node(std::move(y), {x_id},
                     [x_id, target, probs = std::move(probs), B, C](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const R dy = t.grad(self)[0];
      TensorR& dx = t.grad_buf(x_id);
      const R scale = dy / static_cast<R>(B);
      for (std::int64_t i = 0; i < dx.numel(); ++i) {
        dx[i] += scale * (probs[i] - target[i]);
      }
      (void)C;
    });
  }

  /// Mean over the batch of JS(p || q) with natural logs; rows of p and q
  /// are probability distributions. Differentiable through both arguments.
  /// Bounded in [0, ln 2].
  int js_divergence(int p_id, int q_id) {
    const TensorR& p = value(p_id);
    const TensorR& q = value(q_id);
    if (p.ndim() != 2 || p.shape != q.shape) {
      throw std::invalid_argument("js_divergence: p and q must be [B,C] of equal shape");
    }
    const int B = p.dim(0), C = p.dim(1);
    double total = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double pc = std::max(static_cast<double>(p[i]), kProbFloor);
      const double qc = std::max(static_cast<double>(q[i]), kProbFloor);
      const double m = 0.5 * (pc + qc);
      total += 0.5 * pc * std::log(pc / m) + 0.5 * qc * std::log(qc / m);
    }
    TensorR y({1});
    y[0] = static_cast<R>(total / B);
    return make_node(std::move(y), {p_id, q_id}, [p_id, q_id, B, C](Tape& t, int self) {
      const TensorR& p = t.value(p_id);
      const TensorR& q = t.value(q_id);
      const R dy = t.grad(self)[0];
      const bool need_dp = t.needs_grad(p_id);
      const bool need_dq = t.needs_grad(q_id);
      TensorR* dp = need_dp ? &t.grad_buf(p_id) : nullptr;
      TensorR* dq = need_dq ? &t.grad_buf(q_id) : nullptr;
      // gradients evaluate at the clamped values, as in cross_entropy
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        const double pc = std::max(static_cast<double>(p[i]), kProbFloor);
        const double qc = std::max(static_cast<double>(q[i]), kProbFloor);
        const double m = 0.5 * (pc + qc);
        if (need_dp) (*dp)[i] += dy * static_cast<R>(0.5 * std::log(pc / m) / B);
        if (need_dq) (*dq)[i] += dy * static_cast<R>(0.5 * std::log(qc / m) / B);
      }
      (void)C;
    });
  }

  /// sum_i weights[i] * x[i], weights constant. Scalar output.
  int weighted_sum(int x_id, const TensorR& weights) {
    const TensorR& x = value(x_id);
    if (weights.shape != x.shape) {
      throw std::invalid_argument("weighted_sum: weight shape mismatch");
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      total += static_cast<double>(weights[i]) * x[i];
    }
    TensorR y({1});
    y[0] = static_cast<R>(total);
    return make_node(std::move(y), {x_id}, [x_id, weights](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const R dy = t.grad(self)[0];
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy * weights[i];
    });
  }

  int scale(int x_id, R factor) {
    const TensorR& x = value(x_id);
    TensorR y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * factor;
    return make_node(std::move(y), {x_id}, [x_id, factor](Tape& t, int self) {
      if (!t.needs_grad(x_id)) return;
      const TensorR& dy = t.grad(self);
      TensorR& dx = t.grad_buf(x_id);
      for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * factor;
    });
  }

  TensorR& grad_buf(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.data.empty()) n.grad = TensorR(n.value.shape);
    return n.grad;
  }

  static constexpr double kProbFloor = 1e-8;

 private:
  struct Node {
    TensorR value;
    TensorR grad;
    bool needs_grad = false;
    bool trainable_leaf = false;
    std::function<void(Tape&)> backward;
  };

  int make_node(TensorR value, std::initializer_list<int> parents,
                std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    for (int p : parents) {
      if (nodes_.at(static_cast<std::size_t>(p)).needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (nodes_.back().needs_grad) {
      nodes_.back().backward = [fn = std::move(backward), id](Tape& t) { fn(t, id); };
    }
    return id;
  }

  // col[(c*k + ki)*k + kj, oy*W + ox] = x[c, oy+ki-pad, ox+kj-pad], 0 outside.
  void im2col(const R* x, int C, int H, int W, int k, int pad, R* col) const {
    const int hw = H * W;
    R* out = col;
    for (int c = 0; c < C; ++c) {
      const R* xc = x + static_cast<std::int64_t>(c) * hw;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const int dx = kj - pad;
          const int lo = std::max(0, -dx);
          const int hi = std::min(W, W - dx);
          for (int oy = 0; oy < H; ++oy) {
            const int iy = oy + ki - pad;
            R* row = out + static_cast<std::int64_t>(oy) * W;
            if (iy < 0 || iy >= H || lo >= hi) {
              std::memset(row, 0, sizeof(R) * static_cast<std::size_t>(W));
              continue;
            }
            if (lo > 0) std::memset(row, 0, sizeof(R) * static_cast<std::size_t>(lo));
            std::memcpy(row + lo, xc + static_cast<std::int64_t>(iy) * W + lo + dx,
                        sizeof(R) * static_cast<std::size_t>(hi - lo));
            if (hi < W) {
              std::memset(row + hi, 0, sizeof(R) * static_cast<std::size_t>(W - hi));
            }
          }
          out += hw;
        }
      }
    }
  }

  void col2im_add(const R* col, int C, int H, int W, int k, int pad, R* dx) const {
    const int hw = H * W;
    const R* in = col;
    for (int c = 0; c < C; ++c) {
      R* xc = dx + static_cast<std::int64_t>(c) * hw;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const int dxo = kj - pad;
          const int lo = std::max(0, -dxo);
          const int hi = std::min(W, W - dxo);
          for (int oy = 0; oy < H; ++oy) {
            const int iy = oy + ki - pad;
            if (iy < 0 || iy >= H || lo >= hi) continue;
            const R* row = in + static_cast<std::int64_t>(oy) * W;
            R* dst = xc + static_cast<std::int64_t>(iy) * W + dxo;
            for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
          }
          in += hw;
        }
      }
    }
  }

  std::vector<Node> nodes_;
  bool abs_param_grads_ = false;
  std::vector<int>* visit_log_ = nullptr;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

template <typename R>
bool all_finite(const TensorT<R>& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) return false;
  }
  return true;
}

}  // namespace dmeta
