#pragma once
// Differentiable operators. Image-like tensors use [N, C, H, W] layout; 1-D
// depth signals are carried as [N, C, H, 1] so the same convolution kernels
// serve both.

#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "borelog/graph.hpp"

namespace borelog::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, std::size_t rank, const std::string& op) {
  if (t.rank() != rank) throw Error(op + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const std::string& op) {
  if (a.shape() != b.shape()) throw Error(op + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// Geometry linking a "big" spatial grid to a "small" one through a strided
/// kernel: small position (y, x) with kernel offset (ky, kx) reads big
/// position (y*sh - ph + ky, x*sw - pw + kx). A convolution maps big to small;
/// its transpose maps small to big.
struct KernelGeometry {
  std::size_t batch = 1;
  std::size_t big_h = 0, big_w = 0;
  std::size_t small_h = 0, small_w = 0;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;

  std::size_t small_plane() const { return small_h * small_w; }
  std::size_t big_plane() const { return big_h * big_w; }
  bool identity() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0 && batch == 1; }
};

/// S[c, n*P + p] = big[n, c, ...] at the tap (ky, kx); zero where padded.
inline void gather(const double* big, std::size_t channels, const KernelGeometry& g, std::size_t ky, std::size_t kx,
                   double* cols) {
  const std::size_t P = g.small_plane();
  const std::size_t NP = g.batch * P;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = big + (n * channels + c) * g.big_plane();
      double* dst = cols + c * NP + n * P;
      for (std::size_t y = 0; y < g.small_h; ++y) {
        const long by = static_cast<long>(y * g.sh + ky) - static_cast<long>(g.ph);
        double* row = dst + y * g.small_w;
        if (by < 0 || by >= static_cast<long>(g.big_h)) {
          std::fill(row, row + g.small_w, 0.0);
          continue;
        }
        const double* srow = src + static_cast<std::size_t>(by) * g.big_w;
        for (std::size_t x = 0; x < g.small_w; ++x) {
          const long bx = static_cast<long>(x * g.sw + kx) - static_cast<long>(g.pw);
          row[x] = (bx < 0 || bx >= static_cast<long>(g.big_w)) ? 0.0 : srow[bx];
        }
      }
    }
  }
}

/// Adjoint of gather: big[...] += S[c, n*P + p].
inline void scatter_add(const double* cols, std::size_t channels, const KernelGeometry& g, std::size_t ky, std::size_t kx,
                        double* big) {
  const std::size_t P = g.small_plane();
  const std::size_t NP = g.batch * P;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* dst = big + (n * channels + c) * g.big_plane();
      const double* src = cols + c * NP + n * P;
      for (std::size_t y = 0; y < g.small_h; ++y) {
        const long by = static_cast<long>(y * g.sh + ky) - static_cast<long>(g.ph);
        if (by < 0 || by >= static_cast<long>(g.big_h)) continue;
        double* drow = dst + static_cast<std::size_t>(by) * g.big_w;
        const double* row = src + y * g.small_w;
        for (std::size_t x = 0; x < g.small_w; ++x) {
          const long bx = static_cast<long>(x * g.sw + kx) - static_cast<long>(g.pw);
          if (bx >= 0 && bx < static_cast<long>(g.big_w)) drow[bx] += row[x];
        }
      }
    }
  }
}

/// [N, C, P] -> [C, N*P]
inline std::vector<double> to_channel_major(const double* x, std::size_t n, std::size_t c, std::size_t p) {
  std::vector<double> out(n * c * p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(x + (i * c + j) * p, p, out.data() + j * n * p + i * p);
  return out;
}

/// [C, N*P] -> [N, C, P]
inline void from_channel_major(const double* cm, std::size_t n, std::size_t c, std::size_t p, double* x) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(cm + j * n * p + i * p, p, x + (i * c + j) * p);
}

/// Weight slice W[:, :, ky, kx] of a [A, B, kh, kw] kernel as an A x B matrix.
inline RowMat kernel_tap(const Tensor& w, std::size_t ky, std::size_t kx) {
  const std::size_t A = w.dim(0), B = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  RowMat m(A, B);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b) m(a, b) = w[((a * B + b) * kh + ky) * kw + kx];
  return m;
}

inline void add_kernel_tap(Tensor& w, std::size_t ky, std::size_t kx, const RowMat& m) {
  const std::size_t A = w.dim(0), B = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b) w[((a * B + b) * kh + ky) * kw + kx] += m(a, b);
}

/// Convolution big -> small. x: [N, Cin, big], w: [Cout, Cin, kh, kw]. Returns [Cout, N*P].
inline RowMat conv_forward_cm(const Tensor& x, const Tensor& w, const KernelGeometry& g) {
  const std::size_t cin = w.dim(1), cout = w.dim(0);
  const std::size_t NP = g.batch * g.small_plane();
  RowMat y = RowMat::Zero(cout, NP);
  if (g.identity()) {
    y.noalias() += kernel_tap(w, 0, 0) * ConstMatMap(x.data(), cin, NP);
    return y;
  }
  std::vector<double> cols(cin * NP);
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      gather(x.data(), cin, g, ky, kx, cols.data());
      y.noalias() += kernel_tap(w, ky, kx) * ConstMatMap(cols.data(), cin, NP);
    }
  return y;
}

/// Adjoint of conv_forward_cm with respect to x: dy [Cout, N*P] -> adds into dx [N, Cin, big].
inline void conv_backward_data(const RowMat& dy, const Tensor& w, const KernelGeometry& g, double* dx) {
  const std::size_t cin = w.dim(1);
  const std::size_t NP = g.batch * g.small_plane();
  if (g.identity()) {
    MatMap(dx, cin, NP).noalias() += kernel_tap(w, 0, 0).transpose() * dy;
    return;
  }
  RowMat cols(cin, NP);
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      cols.noalias() = kernel_tap(w, ky, kx).transpose() * dy;
      scatter_add(cols.data(), cin, g, ky, kx, dx);
    }
}

/// Gradient of conv_forward_cm with respect to w.
inline void conv_backward_weight(const Tensor& x, const RowMat& dy, const KernelGeometry& g, Tensor& dw) {
  const std::size_t cin = dw.dim(1);
  const std::size_t NP = g.batch * g.small_plane();
  if (g.identity()) {
    add_kernel_tap(dw, 0, 0, dy * ConstMatMap(x.data(), cin, NP).transpose());
    return;
  }
  std::vector<double> cols(cin * NP);
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      gather(x.data(), cin, g, ky, kx, cols.data());
      add_kernel_tap(dw, ky, kx, dy * ConstMatMap(cols.data(), cin, NP).transpose());
    }
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

/// "same" padding for odd kernels at unit stride.
inline Conv2dOptions same_padding(std::size_t kh, std::size_t kw) { return {1, 1, kh / 2, kw / 2}; }

/// 2-D cross-correlation. x [N, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout].
inline Var conv2d(Var x, Var w, std::optional<Var> b, Conv2dOptions opt = {}) {
  Graph& graph = *x.graph;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 4, "conv2d");
  detail::require_rank(wv, 4, "conv2d weight");
  if (wv.dim(1) != xv.dim(1))
    throw Error("conv2d: input has " + std::to_string(xv.dim(1)) + " channels, weight expects " + std::to_string(wv.dim(1)) +
                " (weight " + graph.label(w) + ")");
  const std::size_t cout = wv.dim(0);
  detail::KernelGeometry g;
  g.batch = xv.dim(0);
  g.big_h = xv.dim(2);
  g.big_w = xv.dim(3);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.sh = opt.stride_h;
  g.sw = opt.stride_w;
  g.ph = opt.pad_h;
  g.pw = opt.pad_w;
  if (g.big_h + 2 * g.ph < g.kh || g.big_w + 2 * g.pw < g.kw)
    throw Error("conv2d: kernel larger than padded input " + shape_str(xv.shape()));
  g.small_h = (g.big_h + 2 * g.ph - g.kh) / g.sh + 1;
  g.small_w = (g.big_w + 2 * g.pw - g.kw) / g.sw + 1;
  if (b && (b->value().rank() != 1 || b->value().dim(0) != cout))
    throw Error("conv2d: bias shape " + shape_str(b->value().shape()) + " does not match " + std::to_string(cout) + " outputs");

  detail::RowMat ycm = detail::conv_forward_cm(xv, wv, g);
  const std::size_t P = g.small_plane();
  if (b) {
    const Tensor& bv = b->value();
    for (std::size_t c = 0; c < cout; ++c) ycm.row(static_cast<Eigen::Index>(c)).array() += bv[c];
  }
  Tensor y({g.batch, cout, g.small_h, g.small_w});
  detail::from_channel_major(ycm.data(), g.batch, cout, P, y.data());

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return graph.record("conv2d", std::move(y), inputs, [x, w, b, g, cout](Graph& gr, const Tensor& dy) {
    const std::size_t P = g.small_plane();
    const auto dycm_vec = detail::to_channel_major(dy.data(), g.batch, cout, P);
    const detail::RowMat dycm = detail::ConstMatMap(dycm_vec.data(), cout, g.batch * P);
    const Tensor& xv = gr.value(x);
    const Tensor& wv = gr.value(w);
    if (gr.needs_grad(w)) {
      Tensor dw(wv.shape());
      detail::conv_backward_weight(xv, dycm, g, dw);
      gr.accumulate(w, std::move(dw));
    }
    if (b && gr.needs_grad(*b)) {
      Tensor db({cout});
      for (std::size_t c = 0; c < cout; ++c) db[c] = dycm.row(static_cast<Eigen::Index>(c)).sum();
      gr.accumulate(*b, std::move(db));
    }
    if (gr.needs_grad(x)) {
      Tensor dx(xv.shape());
      detail::conv_backward_data(dycm, wv, g, dx.data());
      gr.accumulate(x, std::move(dx));
    }
  });
}

/// Transposed convolution (the adjoint of conv2d in its data argument).
/// x [N, Cin, H, W], w [Cin, Cout, kh, kw]; output extent (H-1)*s - 2p + k + output_pad.
inline Var conv_transpose2d(Var x, Var w, std::optional<Var> b, Conv2dOptions opt, std::size_t output_pad = 0) {
  Graph& graph = *x.graph;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 4, "conv_transpose2d");
  detail::require_rank(wv, 4, "conv_transpose2d weight");
  if (wv.dim(0) != xv.dim(1))
    throw Error("conv_transpose2d: input has " + std::to_string(xv.dim(1)) + " channels, weight expects " +
                std::to_string(wv.dim(0)) + " (weight " + graph.label(w) + ")");
  if (output_pad >= std::max(opt.stride_h, opt.stride_w)) throw Error("conv_transpose2d: output_pad must be < stride");
  const std::size_t cin = wv.dim(0), cout = wv.dim(1);
  detail::KernelGeometry g;
  g.batch = xv.dim(0);
  g.small_h = xv.dim(2);
  g.small_w = xv.dim(3);
  g.kh = wv.dim(2);
  g.kw = wv.dim(3);
  g.sh = opt.stride_h;
  g.sw = opt.stride_w;
  g.ph = opt.pad_h;
  g.pw = opt.pad_w;
  g.big_h = (g.small_h - 1) * g.sh + g.kh + output_pad - 2 * g.ph;
  g.big_w = (g.small_w - 1) * g.sw + g.kw + output_pad - 2 * g.pw;

  // Treat w as the kernel of a conv big(Cout) -> small(Cin): its taps are
  // [Cin, Cout] matrices, so the data adjoint of that conv is this forward.
  Tensor y({g.batch, cout, g.big_h, g.big_w});
  {
    const auto xcm = detail::to_channel_major(xv.data(), g.batch, cin, g.small_plane());
    const detail::ConstMatMap xm(xcm.data(), cin, g.batch * g.small_plane());
    detail::RowMat cols(cout, g.batch * g.small_plane());
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        cols.noalias() = detail::kernel_tap(wv, ky, kx).transpose() * xm;
        detail::scatter_add(cols.data(), cout, g, ky, kx, y.data());
      }
  }
  if (b) {
    const Tensor& bv = b->value();
    if (bv.rank() != 1 || bv.dim(0) != cout) throw Error("conv_transpose2d: bias shape mismatch");
    const std::size_t plane = g.big_plane();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < cout; ++c) {
        double* p = y.data() + (n * cout + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bv[c];
      }
  }

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return graph.record("conv_transpose2d", std::move(y), inputs, [x, w, b, g, cin, cout](Graph& gr, const Tensor& dy) {
    const Tensor& xv = gr.value(x);
    const Tensor& wv = gr.value(w);
    const std::size_t NP = g.batch * g.small_plane();
    if (b && gr.needs_grad(*b)) {
      Tensor db({cout});
      const std::size_t plane = g.big_plane();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < cout; ++c) {
          const double* p = dy.data() + (n * cout + c) * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          db[c] += s;
        }
      gr.accumulate(*b, std::move(db));
    }
    const bool need_w = gr.needs_grad(w), need_x = gr.needs_grad(x);
    if (!need_w && !need_x) return;
    const auto xcm = detail::to_channel_major(xv.data(), g.batch, cin, g.small_plane());
    const detail::ConstMatMap xm(xcm.data(), cin, NP);
    Tensor dw(wv.shape());
    detail::RowMat dxcm = detail::RowMat::Zero(cin, NP);
    std::vector<double> cols(cout * NP);
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        detail::gather(dy.data(), cout, g, ky, kx, cols.data());
        const detail::ConstMatMap cm(cols.data(), cout, NP);
        if (need_w) detail::add_kernel_tap(dw, ky, kx, xm * cm.transpose());
        if (need_x) dxcm.noalias() += detail::kernel_tap(wv, ky, kx) * cm;
      }
    if (need_w) gr.accumulate(w, std::move(dw));
    if (need_x) {
      Tensor dx(xv.shape());
      detail::from_channel_major(dxcm.data(), g.batch, cin, g.small_plane(), dx.data());
      gr.accumulate(x, std::move(dx));
    }
  });
}

/// Fully connected layer. x [N, in], w [out, in], b [out].
inline Var dense(Var x, Var w, std::optional<Var> b) {
  Graph& graph = *x.graph;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 2, "dense");
  detail::require_rank(wv, 2, "dense weight");
  if (wv.dim(1) != xv.dim(1))
    throw Error("dense: input width " + std::to_string(xv.dim(1)) + " does not match weight " + graph.label(w) + " " +
                shape_str(wv.shape()));
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  Tensor y({n, out});
  detail::MatMap ym(y.data(), n, out);
  ym.noalias() = detail::ConstMatMap(xv.data(), n, in) * detail::ConstMatMap(wv.data(), out, in).transpose();
  if (b) {
    const Tensor& bv = b->value();
    if (bv.rank() != 1 || bv.dim(0) != out) throw Error("dense: bias shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) ym(i, j) += bv[j];
  }
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return graph.record("dense", std::move(y), inputs, [x, w, b, n, in, out](Graph& gr, const Tensor& dy) {
    const detail::ConstMatMap dym(dy.data(), n, out);
    if (gr.needs_grad(w)) {
      Tensor dw({out, in});
      detail::MatMap(dw.data(), out, in).noalias() = dym.transpose() * detail::ConstMatMap(gr.value(x).data(), n, in);
      gr.accumulate(w, std::move(dw));
    }
    if (b && gr.needs_grad(*b)) {
      Tensor db({out});
      for (std::size_t j = 0; j < out; ++j) db[j] = dym.col(static_cast<Eigen::Index>(j)).sum();
      gr.accumulate(*b, std::move(db));
    }
    if (gr.needs_grad(x)) {
      Tensor dx({n, in});
      detail::MatMap(dx.data(), n, in).noalias() = dym * detail::ConstMatMap(gr.value(w).data(), out, in);
      gr.accumulate(x, std::move(dx));
    }
  });
}

namespace detail {

template <typename Fwd, typename Deriv>
Var unary(Var x, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
  return x.graph->record(name, std::move(y), {x}, [x, deriv](Graph& gr, const Tensor& dy) {
    const Tensor& xv = gr.value(x);
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = dy[i] * deriv(xv[i]);
    gr.accumulate(x, std::move(dx));
  });
}

}  // namespace detail

inline Var relu(Var x) {
  return detail::unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, "sigmoid", detail::stable_sigmoid, [](double v) {
    const double s = detail::stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

inline Var tanh(Var x) {
  return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double v) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  });
}

inline Var atanh(Var x) {
  for (double v : x.value().values())
    if (!(std::abs(v) < 1.0)) throw Error("atanh: argument outside (-1, 1)");
  return detail::unary(x, "atanh", [](double v) { return std::atanh(v); }, [](double v) { return 1.0 / (1.0 - v * v); });
}

inline Var square(Var x) {
  return detail::unary(x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.graph->record("add", std::move(y), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    gr.accumulate(a, dy);
    gr.accumulate(b, dy);
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.graph->record("mul", std::move(y), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    if (gr.needs_grad(a)) {
      Tensor da = dy;
      const Tensor& bv = gr.value(b);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
      gr.accumulate(a, std::move(da));
    }
    if (gr.needs_grad(b)) {
      Tensor db = dy;
      const Tensor& av = gr.value(a);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
      gr.accumulate(b, std::move(db));
    }
  });
}

/// x [N, C, H, W] times a per-pixel map m [N, 1, H, W] broadcast over channels.
inline Var mul_channel_broadcast(Var x, Var m) {
  const Tensor& xv = x.value();
  const Tensor& mv = m.value();
  detail::require_rank(xv, 4, "mul_channel_broadcast");
  if (mv.rank() != 4 || mv.dim(0) != xv.dim(0) || mv.dim(1) != 1 || mv.dim(2) != xv.dim(2) || mv.dim(3) != xv.dim(3))
    throw Error("mul_channel_broadcast: map shape " + shape_str(mv.shape()) + " incompatible with " + shape_str(xv.shape()));
  const std::size_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  Tensor y = xv;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* yp = y.data() + (n * C + c) * P;
      const double* mp = mv.data() + n * P;
      for (std::size_t p = 0; p < P; ++p) yp[p] *= mp[p];
    }
  return x.graph->record("mul_channel_broadcast", std::move(y), {x, m}, [x, m, N, C, P](Graph& gr, const Tensor& dy) {
    const Tensor& xv = gr.value(x);
    const Tensor& mv = gr.value(m);
    if (gr.needs_grad(x)) {
      Tensor dx = dy;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          double* p = dx.data() + (n * C + c) * P;
          const double* mp = mv.data() + n * P;
          for (std::size_t i = 0; i < P; ++i) p[i] *= mp[i];
        }
      gr.accumulate(x, std::move(dx));
    }
    if (gr.needs_grad(m)) {
      Tensor dm(mv.shape());
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const double* dp = dy.data() + (n * C + c) * P;
          const double* xp = xv.data() + (n * C + c) * P;
          double* o = dm.data() + n * P;
          for (std::size_t i = 0; i < P; ++i) o[i] += dp[i] * xp[i];
        }
      gr.accumulate(m, std::move(dm));
    }
  });
}

/// Concatenate along the channel axis (dim 1).
inline Var concat_channels(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || av.rank() != bv.rank() || av.dim(0) != bv.dim(0) ||
      !std::equal(av.shape().begin() + 2, av.shape().end(), bv.shape().begin() + 2))
    throw Error("concat_channels: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
  const std::size_t P = av.size() / (N * Ca);
  Shape shape = av.shape();
  shape[1] = Ca + Cb;
  Tensor y(shape);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.data() + n * Ca * P, Ca * P, y.data() + n * (Ca + Cb) * P);
    std::copy_n(bv.data() + n * Cb * P, Cb * P, y.data() + n * (Ca + Cb) * P + Ca * P);
  }
  return a.graph->record("concat_channels", std::move(y), {a, b}, [a, b, N, Ca, Cb, P](Graph& gr, const Tensor& dy) {
    if (gr.needs_grad(a)) {
      Tensor da(gr.value(a).shape());
      for (std::size_t n = 0; n < N; ++n) std::copy_n(dy.data() + n * (Ca + Cb) * P, Ca * P, da.data() + n * Ca * P);
      gr.accumulate(a, std::move(da));
    }
    if (gr.needs_grad(b)) {
      Tensor db(gr.value(b).shape());
      for (std::size_t n = 0; n < N; ++n) std::copy_n(dy.data() + n * (Ca + Cb) * P + Ca * P, Cb * P, db.data() + n * Cb * P);
      gr.accumulate(b, std::move(db));
    }
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(shape);
  return x.graph->record("reshape", std::move(y), {x}, [x](Graph& gr, const Tensor& dy) {
    gr.accumulate(x, dy.reshaped(gr.value(x).shape()));
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->record("sum", Tensor::scalar(s), {x}, [x](Graph& gr, const Tensor& dy) {
    gr.accumulate(x, Tensor(gr.value(x).shape(), dy[0]));
  });
}

/// Sum of x * weights for a fixed weight tensor (projects any output onto a scalar).
inline Var dot_constant(Var x, Tensor weights) {
  detail::require_same_shape(x.value(), weights, "dot_constant");
  double s = 0.0;
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return x.graph->record("dot_constant", Tensor::scalar(s), {x}, [x, w = std::move(weights)](Graph& gr, const Tensor& dy) {
    Tensor dx = w;
    for (double& v : dx.values()) v *= dy[0];
    gr.accumulate(x, std::move(dx));
  });
}

/// Per-sample squared error summed over each sample and averaged over the batch
/// dimension: (1/N) sum_i ||pred_i - target_i||^2.
inline Var batch_squared_error(Var pred, const Tensor& target) {
  const Tensor& pv = pred.value();
  detail::require_same_shape(pv, target, "batch_squared_error");
  const double n = static_cast<double>(pv.dim(0));
  Tensor diff = pv;
  double s = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] -= target[i];
    s += diff[i] * diff[i];
  }
  return pred.graph->record("batch_squared_error", Tensor::scalar(s / n), {pred},
                            [pred, diff = std::move(diff), n](Graph& gr, const Tensor& dy) {
                              Tensor dx = diff;
                              const double k = 2.0 * dy[0] / n;
                              for (double& v : dx.values()) v *= k;
                              gr.accumulate(pred, std::move(dx));
                            });
}

/// Softmax over the channel axis of [N, K, ...].
inline Tensor softmax_channels_value(const Tensor& logits) {
  if (logits.rank() < 2) throw Error("softmax: expected [N, K, ...], got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1), P = logits.size() / (N * K);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const double* l = logits.data() + n * K * P + i;
      double* o = p.data() + n * K * P + i;
      double mx = l[0];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, l[k * P]);
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += (o[k * P] = std::exp(l[k * P] - mx));
      for (std::size_t k = 0; k < K; ++k) o[k * P] /= z;
    }
  return p;
}

inline Var softmax_channels(Var logits) {
  Tensor p = softmax_channels_value(logits.value());
  Tensor saved = p;
  return logits.graph->record("softmax", std::move(p), {logits}, [logits, saved = std::move(saved)](Graph& gr, const Tensor& dy) {
    const std::size_t N = saved.dim(0), K = saved.dim(1), P = saved.size() / (N * K);
    Tensor dx(saved.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t base = n * K * P + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < K; ++k) dot += saved[base + k * P] * dy[base + k * P];
        for (std::size_t k = 0; k < K; ++k) dx[base + k * P] = saved[base + k * P] * (dy[base + k * P] - dot);
      }
    gr.accumulate(logits, std::move(dx));
  });
}

/// Pixelwise cross-entropy of [N, K, H, W] logits against integer labels,
/// optionally weighted per pixel: -(1/NP) sum w * log p_label.
inline Var cross_entropy(Var logits, const std::vector<int>& labels, const std::vector<double>* weights = nullptr) {
  const Tensor& lv = logits.value();
  if (lv.rank() < 2) throw Error("cross_entropy: expected [N, K, ...] logits");
  const std::size_t N = lv.dim(0), K = lv.dim(1), P = lv.size() / (N * K);
  if (labels.size() != N * P)
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N * P) + " pixels");
  if (weights && weights->size() != N * P) throw Error("cross_entropy: weight map size mismatch");
  Tensor probs = softmax_channels_value(lv);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const int y = labels[n * P + i];
      if (y < 0 || static_cast<std::size_t>(y) >= K) throw Error("cross_entropy: label out of range");
      const double* l = lv.data() + n * K * P + i;
      double mx = l[0];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, l[k * P]);
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(l[k * P] - mx);
      const double nll = -(l[static_cast<std::size_t>(y) * P] - mx - std::log(z));
      const double w = weights ? (*weights)[n * P + i] : 1.0;
      total += w * nll;
    }
  const double count = static_cast<double>(N * P);
  std::vector<double> w_copy = weights ? *weights : std::vector<double>{};
  return logits.graph->record(
      weights ? "weighted_cross_entropy" : "cross_entropy", Tensor::scalar(total / count), {logits},
      [logits, labels, w_copy = std::move(w_copy), probs = std::move(probs), N, K, P, count](Graph& gr, const Tensor& dy) {
        Tensor dx = probs;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < P; ++i) {
            const std::size_t base = n * K * P + i;
            dx[base + static_cast<std::size_t>(labels[n * P + i]) * P] -= 1.0;
            const double s = (w_copy.empty() ? 1.0 : w_copy[n * P + i]) * dy[0] / count;
            for (std::size_t k = 0; k < K; ++k) dx[base + k * P] *= s;
          }
        gr.accumulate(logits, std::move(dx));
      });
}

inline constexpr double kNormEps = 1e-5;

/// Layer normalization over the channel axis of [N, C, H, W] at every pixel,
/// with per-channel scale and offset.
inline Var layer_norm_channels(Var x, Var gamma, Var beta, double eps = kNormEps) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "layer_norm");
  const std::size_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  if (gamma.value().size() != C || beta.value().size() != C) throw Error("layer_norm: affine parameters must have C entries");
  Tensor xhat(xv.shape());
  Tensor inv_std({N, P});
  Tensor y(xv.shape());
  std::vector<double> mean(P), var(P);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t n = 0; n < N; ++n) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    const double* xp = xv.data() + n * C * P;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) mean[p] += xp[c * P + p];
    for (double& m : mean) m /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const double d = xp[c * P + p] - mean[p];
        var[p] += d * d;
      }
    double* is = inv_std.data() + n * P;
    for (std::size_t p = 0; p < P; ++p) is[p] = 1.0 / std::sqrt(var[p] / static_cast<double>(C) + eps);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = n * C * P + c * P + p;
        xhat[i] = (xp[c * P + p] - mean[p]) * is[p];
        y[i] = gv[c] * xhat[i] + bv[c];
      }
  }
  return x.graph->record(
      "layer_norm", std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, P](Graph& gr, const Tensor& dy) {
        const Tensor& gv = gr.value(gamma);
        Tensor dg({C}), db({C});
        Tensor dx(xhat.shape());
        std::vector<double> s1(P), s2(P);
        for (std::size_t n = 0; n < N; ++n) {
          std::fill(s1.begin(), s1.end(), 0.0);
          std::fill(s2.begin(), s2.end(), 0.0);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t i = n * C * P + c * P + p;
              dg[c] += dy[i] * xhat[i];
              db[c] += dy[i];
              const double dxh = dy[i] * gv[c];
              s1[p] += dxh;
              s2[p] += dxh * xhat[i];
            }
          const double invC = 1.0 / static_cast<double>(C);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t i = n * C * P + c * P + p;
              const double dxh = dy[i] * gv[c];
              dx[i] = inv_std[n * P + p] * (dxh - invC * s1[p] - xhat[i] * invC * s2[p]);
            }
        }
        gr.accumulate(x, std::move(dx));
        gr.accumulate(gamma, std::move(dg));
        gr.accumulate(beta, std::move(db));
      });
}

/// Group normalization of [N, C, H, W]: statistics over each group of C/G
/// channels and all spatial positions, then per-channel affine.
inline Var group_norm(Var x, Var gamma, Var beta, std::size_t groups, double eps = kNormEps) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "group_norm");
  const std::size_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  if (groups == 0 || C % groups != 0)
    throw Error("group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (gamma.value().size() != C || beta.value().size() != C) throw Error("group_norm: affine parameters must have C entries");
  const std::size_t cg = C / groups, m = cg * P;
  Tensor xhat(xv.shape()), y(xv.shape());
  std::vector<double> inv_std(N * groups);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = n * C * P + g * m;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += xv[off + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = xv[off + i] - mean;
        var += d * d;
      }
      const double is = 1.0 / std::sqrt(var / static_cast<double>(m) + eps);
      inv_std[n * groups + g] = is;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = g * cg + i / P;
        xhat[off + i] = (xv[off + i] - mean) * is;
        y[off + i] = gv[c] * xhat[off + i] + bv[c];
      }
    }
  return x.graph->record(
      "group_norm", std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, P, groups, cg, m](Graph& gr, const Tensor& dy) {
        const Tensor& gv = gr.value(gamma);
        Tensor dg({C}), db({C});
        Tensor dx(xhat.shape());
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t off = n * C * P + g * m;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              const std::size_t c = g * cg + i / P;
              dg[c] += dy[off + i] * xhat[off + i];
              db[c] += dy[off + i];
              const double dxh = dy[off + i] * gv[c];
              s1 += dxh;
              s2 += dxh * xhat[off + i];
            }
            const double is = inv_std[n * groups + g], inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
              const std::size_t c = g * cg + i / P;
              const double dxh = dy[off + i] * gv[c];
              dx[off + i] = is * (dxh - inv_m * s1 - xhat[off + i] * inv_m * s2);
            }
          }
        gr.accumulate(x, std::move(dx));
        gr.accumulate(gamma, std::move(dg));
        gr.accumulate(beta, std::move(db));
      });
}

// ---------------------------------------------------------------------------
// Depth-window cross-attention.

/// Rows attended by row h (0-based) under radius r, clipped to [0, H).
struct DepthWindow {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
  std::size_t size() const { return last - first + 1; }
};

inline DepthWindow depth_window(std::size_t h, std::size_t height, std::size_t radius) {
  return {h >= radius ? h - radius : 0, std::min(height - 1, h + radius)};
}

/// Attention weights for queries q [1, D, H, W] against keys k [1, D, H, 1].
/// Layout [H, W, heads, 2r+1]; slot j holds the weight of row window.first + j
/// and unused slots stay zero.
inline Tensor depth_attention_weights(const Tensor& q, const Tensor& k, std::size_t heads, std::size_t radius) {
  const std::size_t D = q.dim(1), H = q.dim(2), W = q.dim(3), P = H * W;
  const std::size_t dh = D / heads, slots = 2 * radius + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor alpha({H, W, heads, slots});
  std::vector<double> logit(slots);
  for (std::size_t h = 0; h < H; ++h) {
    const DepthWindow win = depth_window(h, H, radius);
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t hd = 0; hd < heads; ++hd) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < win.size(); ++j) {
          double s = 0.0;
          for (std::size_t d = hd * dh; d < (hd + 1) * dh; ++d) s += q[d * P + h * W + w] * k[d * H + win.first + j];
          logit[j] = s * scale;
          mx = std::max(mx, logit[j]);
        }
        double z = 0.0;
        double* a = alpha.data() + ((h * W + w) * heads + hd) * slots;
        for (std::size_t j = 0; j < win.size(); ++j) z += (a[j] = std::exp(logit[j] - mx));
        for (std::size_t j = 0; j < win.size(); ++j) a[j] /= z;
      }
  }
  return alpha;
}

/// Multi-head attention of every image position (h, w) over the log rows in
/// its depth window. q [1, D, H, W]; k, v [1, D, H, 1]. Output [1, D, H, W] is
/// the concatenation of per-head context vectors.
inline Var depth_window_attention(Var q, Var k, Var v, std::size_t heads, std::size_t radius) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  detail::require_rank(qv, 4, "depth_window_attention");
  if (qv.dim(0) != 1) throw Error("depth_window_attention: batch size must be 1");
  const std::size_t D = qv.dim(1), H = qv.dim(2), W = qv.dim(3), P = H * W;
  const Shape log_shape{1, D, H, 1};
  if (kv.shape() != log_shape || vv.shape() != log_shape)
    throw Error("depth_window_attention: keys/values must be " + shape_str(log_shape) + ", got " + shape_str(kv.shape()));
  if (heads == 0 || D % heads != 0) throw Error("depth_window_attention: feature dim not divisible by heads");
  const std::size_t dh = D / heads, slots = 2 * radius + 1;
  Tensor alpha = depth_attention_weights(qv, kv, heads, radius);
  Tensor out({1, D, H, W});
  for (std::size_t h = 0; h < H; ++h) {
    const DepthWindow win = depth_window(h, H, radius);
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const double* a = alpha.data() + ((h * W + w) * heads + hd) * slots;
        for (std::size_t d = hd * dh; d < (hd + 1) * dh; ++d) {
          double s = 0.0;
          for (std::size_t j = 0; j < win.size(); ++j) s += a[j] * vv[d * H + win.first + j];
          out[d * P + h * W + w] = s;
        }
      }
  }
  return q.graph->record(
      "depth_window_attention", std::move(out), {q, k, v},
      [q, k, v, alpha = std::move(alpha), heads, radius, D, H, W, P, dh, slots](Graph& gr, const Tensor& dy) {
        const Tensor& qv = gr.value(q);
        const Tensor& kv = gr.value(k);
        const Tensor& vv = gr.value(v);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor dq(qv.shape()), dk(kv.shape()), dv(vv.shape());
        std::vector<double> dalpha(slots);
        for (std::size_t h = 0; h < H; ++h) {
          const DepthWindow win = depth_window(h, H, radius);
          for (std::size_t w = 0; w < W; ++w)
            for (std::size_t hd = 0; hd < heads; ++hd) {
              const double* a = alpha.data() + ((h * W + w) * heads + hd) * slots;
              double weighted = 0.0;
              for (std::size_t j = 0; j < win.size(); ++j) {
                const std::size_t row = win.first + j;
                double s = 0.0;
                for (std::size_t d = hd * dh; d < (hd + 1) * dh; ++d) {
                  const double g = dy[d * P + h * W + w];
                  s += g * vv[d * H + row];
                  dv[d * H + row] += a[j] * g;
                }
                dalpha[j] = s;
                weighted += a[j] * s;
              }
              for (std::size_t j = 0; j < win.size(); ++j) {
                const double dlogit = a[j] * (dalpha[j] - weighted) * scale;
                if (dlogit == 0.0) continue;
                const std::size_t row = win.first + j;
                for (std::size_t d = hd * dh; d < (hd + 1) * dh; ++d) {
                  dq[d * P + h * W + w] += dlogit * kv[d * H + row];
                  dk[d * H + row] += dlogit * qv[d * P + h * W + w];
                }
              }
            }
        }
        gr.accumulate(q, std::move(dq));
        gr.accumulate(k, std::move(dk));
        gr.accumulate(v, std::move(dv));
      });
}

}  // namespace borelog::ops
