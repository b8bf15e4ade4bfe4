#include "urpca/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace urpca {

namespace {

using detail::TensorNode;

// The 3x3/pad-1 convolution runs as nine shifted GEMMs over a zero-padded,
// channel-major packing of the whole batch: for kernel tap (kh,kw) the padded
// stack shifts by one flat offset s = (kh-1)*Wp + (kw-1) and multiplies the
// Cin x Cout tap matrix. Unlike an im2col formulation nothing Cin*9 wide is
// ever materialized, so the working set stays at a few padded copies of the
// activation and the GEMM operands live in cache. Shifts never leak across
// image boundaries: |s| <= Wp+1, so any row whose shifted read falls outside
// its own padded plane is itself a border row, and borders are discarded (or
// hold zero gradient) on the way out.

// dst[c*NP + n*Hp*Wp + (h+1)*Wp + (w+1)] = src[(n*C + c)*H*W + h*W + w], with
// one-pixel zero borders. Border strips are rewritten every call because the
// scratch buffers are recycled between layers of different widths.
void pack_padded(const double* src, int64_t N, int64_t C, int64_t H, int64_t W, double* dst) {
  const int64_t Hp = H + 2, Wp = W + 2, plane = Hp * Wp, NP = N * plane, HW = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t n = 0; n < N; ++n) {
      double* img = dst + c * NP + n * plane;
      const double* s = src + (n * C + c) * HW;
      std::memset(img, 0, sizeof(double) * Wp);
      std::memset(img + (Hp - 1) * Wp, 0, sizeof(double) * Wp);
      for (int64_t h = 0; h < H; ++h) {
        double* row = img + (h + 1) * Wp;
        row[0] = 0.0;
        std::memcpy(row + 1, s + h * W, sizeof(double) * W);
        row[Wp - 1] = 0.0;
      }
    }
  }
}

// Adds the interior of a padded channel-major accumulator back onto an
// (N,C,H,W) gradient buffer, dropping the borders.
void unpack_padded_add(const double* src, int64_t N, int64_t C, int64_t H, int64_t W,
                       double* dst) {
  const int64_t Hp = H + 2, Wp = W + 2, plane = Hp * Wp, NP = N * plane, HW = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t n = 0; n < N; ++n) {
      const double* img = src + c * NP + n * plane;
      double* d = dst + (n * C + c) * HW;
      for (int64_t h = 0; h < H; ++h) {
        const double* row = img + (h + 1) * Wp + 1;
        double* drow = d + h * W;
        for (int64_t w = 0; w < W; ++w) drow[w] += row[w];
      }
    }
  }
}

// Copies tap (kh,kw) of the (Cout,Cin,3,3) kernel into a contiguous Cin x Cout
// matrix so the GEMMs below see unit-stride operands.
void fill_tap(const double* w, int64_t Cin, int64_t Cout, int64_t kh, int64_t kw,
              Eigen::MatrixXd& tap) {
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t ci = 0; ci < Cin; ++ci) tap(ci, co) = w[((co * Cin + ci) * 3 + kh) * 3 + kw];
}

// Grow-only scratch pads reused across calls; steady-state training allocates
// nothing per convolution.
double* scratch(std::vector<double>& buf, int64_t n) {
  if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  return buf.data();
}
thread_local std::vector<double> g_pad_in, g_pad_grad, g_pad_acc;

}  // namespace

ConvLayerParams make_conv(int64_t in_channels, int64_t out_channels, Rng& rng) {
  if (in_channels < 1 || out_channels < 1)
    throw ConfigError("make_conv: channel counts must be positive");
  ConvLayerParams p;
  p.weight = Tensor::zeros({out_channels, in_channels, 3, 3}, /*requires_grad=*/true);
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_channels * 9));
  for (double& w : p.weight.data()) w = rng.normal(0.0, stddev);
  p.bias = Tensor::zeros({out_channels}, /*requires_grad=*/true);
  return p;
}

Tensor conv2d(const Tensor& input, const ConvLayerParams& params) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be (N,C,H,W), got " + shape_str(input.shape()));
  if (params.weight.rank() != 4 || params.weight.dim(2) != 3 || params.weight.dim(3) != 3)
    throw ShapeError("conv2d: weight must be (Cout,Cin,3,3), got " + shape_str(params.weight.shape()));
  const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Cout = params.weight.dim(0);
  if (params.weight.dim(1) != Cin)
    throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels but weight expects " +
                     std::to_string(params.weight.dim(1)));
  if (params.bias.numel() != Cout) throw ShapeError("conv2d: bias size must equal out_channels");
  if (H < 1 || W < 1) throw ShapeError("conv2d: empty spatial dims");

  const int64_t HW = H * W, Hp = H + 2, Wp = W + 2, NP = N * Hp * Wp;
  double* pin = scratch(g_pad_in, Cin * NP);
  pack_padded(input.data().data(), N, Cin, H, W, pin);
  double* acc = scratch(g_pad_acc, Cout * NP);
  Eigen::Map<const Eigen::MatrixXd> Ap(pin, NP, Cin);
  Eigen::Map<Eigen::MatrixXd> Yp(acc, NP, Cout);
  Eigen::MatrixXd tap(Cin, Cout);
  const double* wv = params.weight.data().data();
  // Center tap first with assignment: it spans every row, so the accumulator
  // needs no clearing; the other taps add over their valid row range.
  fill_tap(wv, Cin, Cout, 1, 1, tap);
  Yp.noalias() = Ap * tap;
  for (int64_t kh = 0; kh < 3; ++kh)
    for (int64_t kw = 0; kw < 3; ++kw) {
      if (kh == 1 && kw == 1) continue;
      const int64_t s = (kh - 1) * Wp + (kw - 1);
      const int64_t r0 = std::max<int64_t>(0, -s), len = NP - std::abs(s);
      fill_tap(wv, Cin, Cout, kh, kw, tap);
      Yp.middleRows(r0, len).noalias() += Ap.middleRows(r0 + s, len) * tap;
    }

  Tensor out = Tensor::zeros({N, Cout, H, W});
  {
    auto ov = out.data();
    const auto bias = params.bias.data();
    for (int64_t co = 0; co < Cout; ++co) {
      const double b = bias[co];
      for (int64_t n = 0; n < N; ++n) {
        const double* sp = acc + co * NP + n * Hp * Wp;
        double* dst = ov.data() + (n * Cout + co) * HW;
        for (int64_t h = 0; h < H; ++h) {
          const double* srow = sp + (h + 1) * Wp + 1;
          double* drow = dst + h * W;
          for (int64_t w = 0; w < W; ++w) drow[w] = srow[w] + b;
        }
      }
    }
  }

  const bool tape = grad_enabled() && (input.requires_grad() || params.weight.requires_grad() ||
                                       params.bias.requires_grad());
  if (tape) {
    TensorNode* node = out.node();
    node->requires_grad = true;
    node->parents = {input.node_ptr(), params.weight.node_ptr(), params.bias.node_ptr()};
    node->backward_fn = [N, Cin, H, W, Cout, HW, Hp, Wp, NP](TensorNode& self) {
      TensorNode* px = self.parents[0].get();
      TensorNode* pw = self.parents[1].get();
      TensorNode* pb = self.parents[2].get();
      double* pg = scratch(g_pad_grad, Cout * NP);
      pack_padded(self.grad.data(), N, Cout, H, W, pg);
      Eigen::Map<const Eigen::MatrixXd> Gp(pg, NP, Cout);
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t co = 0; co < Cout; ++co) {
            const double* g = self.grad.data() + (n * Cout + co) * HW;
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += g[i];
            pb->grad[co] += acc;
          }
      }
      if (pw->requires_grad) {
        // The padded input is repacked here instead of cached at forward
        // time; a saved copy per layer would otherwise dominate memory
        // across a deep graph.
        double* pin = scratch(g_pad_in, Cin * NP);
        pack_padded(px->data.data(), N, Cin, H, W, pin);
        Eigen::Map<const Eigen::MatrixXd> Ap(pin, NP, Cin);
        pw->ensure_grad();
        Eigen::MatrixXd dtap(Cin, Cout);
        for (int64_t kh = 0; kh < 3; ++kh)
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t s = (kh - 1) * Wp + (kw - 1);
            const int64_t r0 = std::max<int64_t>(0, -s), len = NP - std::abs(s);
            dtap.noalias() = Ap.middleRows(r0 + s, len).transpose() * Gp.middleRows(r0, len);
            for (int64_t co = 0; co < Cout; ++co)
              for (int64_t ci = 0; ci < Cin; ++ci)
                pw->grad[((co * Cin + ci) * 3 + kh) * 3 + kw] += dtap(ci, co);
          }
      }
      if (px->requires_grad) {
        double* acc = scratch(g_pad_acc, Cin * NP);
        Eigen::Map<Eigen::MatrixXd> Dp(acc, NP, Cin);
        Eigen::MatrixXd tap(Cin, Cout);
        fill_tap(pw->data.data(), Cin, Cout, 1, 1, tap);
        Dp.noalias() = Gp * tap.transpose();
        for (int64_t kh = 0; kh < 3; ++kh)
          for (int64_t kw = 0; kw < 3; ++kw) {
            if (kh == 1 && kw == 1) continue;
            const int64_t s = (kh - 1) * Wp + (kw - 1);
            const int64_t r0 = std::max<int64_t>(0, -s), len = NP - std::abs(s);
            fill_tap(pw->data.data(), Cin, Cout, kh, kw, tap);
            Dp.middleRows(r0 + s, len).noalias() += Gp.middleRows(r0, len) * tap.transpose();
          }
        px->ensure_grad();
        unpack_padded_add(acc, N, Cin, H, W, px->grad.data());
      }
    };
  }
  return out;
}

BatchNormParams make_batch_norm(int64_t channels) {
  if (channels < 1) throw ConfigError("make_batch_norm: channel count must be positive");
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, /*requires_grad=*/true);
  p.beta = Tensor::zeros({channels}, /*requires_grad=*/true);
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

Tensor batch_norm(const Tensor& input, BatchNormParams& params, bool training) {
  if (input.rank() != 4)
    throw ShapeError("batch_norm: input must be (N,C,H,W), got " + shape_str(input.shape()));
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (params.gamma.numel() != C)
    throw ShapeError("batch_norm: input has " + std::to_string(C) + " channels but params hold " +
                     std::to_string(params.gamma.numel()));
  const int64_t HW = H * W;
  const int64_t m = N * HW;
  if (m == 0) throw ShapeError("batch_norm: zero-size batch");

  std::vector<double> mean(C), invstd(C);
  if (training) {
    const auto xv = input.data();
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = xv.data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double var = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = xv.data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);  // biased, consistent between loss and stats
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + params.epsilon);
      params.running_mean.data()[c] =
          params.momentum * params.running_mean.data()[c] + (1.0 - params.momentum) * mu;
      params.running_var.data()[c] =
          params.momentum * params.running_var.data()[c] + (1.0 - params.momentum) * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = params.running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(params.running_var.data()[c] + params.epsilon);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  {
    const auto xv = input.data();
    auto ov = out.data();
    const auto g = params.gamma.data();
    const auto b = params.beta.data();
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const double* src = xv.data() + (n * C + c) * HW;
        double* dst = ov.data() + (n * C + c) * HW;
        const double scale = g[c] * invstd[c];
        const double shift = b[c] - mean[c] * scale;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * scale + shift;
      }
    }
  }

  const bool tape = grad_enabled() && (input.requires_grad() || params.gamma.requires_grad() ||
                                       params.beta.requires_grad());
  if (tape) {
    TensorNode* node = out.node();
    node->requires_grad = true;
    node->parents = {input.node_ptr(), params.gamma.node_ptr(), params.beta.node_ptr()};
    node->backward_fn = [N, C, HW, m, mean, invstd, training](TensorNode& self) {
      TensorNode* px = self.parents[0].get();
      TensorNode* pg = self.parents[1].get();
      TensorNode* pb = self.parents[2].get();
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int64_t c = 0; c < C; ++c) {
        // Per-channel reductions over x_hat, recomputed from the saved stats.
        double sum_go = 0.0, sum_go_xhat = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const double* go = self.grad.data() + (n * C + c) * HW;
          const double* x = px->data.data() + (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) {
            sum_go += go[i];
            sum_go_xhat += go[i] * (x[i] - mean[c]) * invstd[c];
          }
        }
        if (pg->requires_grad) {
          pg->ensure_grad();
          pg->grad[c] += sum_go_xhat;
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          pb->grad[c] += sum_go;
        }
        if (px->requires_grad) {
          px->ensure_grad();
          const double gs = pg->data[c] * invstd[c];
          for (int64_t n = 0; n < N; ++n) {
            const double* go = self.grad.data() + (n * C + c) * HW;
            const double* x = px->data.data() + (n * C + c) * HW;
            double* gx = px->grad.data() + (n * C + c) * HW;
            if (training) {
              // Batch stats depend on x: d/dx of (x - mu(x)) * invstd(x).
              for (int64_t i = 0; i < HW; ++i) {
                const double xhat = (x[i] - mean[c]) * invstd[c];
                gx[i] += gs * (go[i] - sum_go * inv_m - xhat * sum_go_xhat * inv_m);
              }
            } else {
              for (int64_t i = 0; i < HW; ++i) gx[i] += gs * go[i];
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace urpca
