#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Operations record their inputs and a
// backward closure only while grad mode is on and at least one input
// requires a gradient; otherwise they return plain constants. backward()
// walks the graph in reverse topological order and accumulates into .grad
// of every node that requires it (parameters are leaves).

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsmnet/fft.hpp"
#include "fsmnet/tensor.hpp"

namespace fsmnet::ag {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
  [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
  [[nodiscard]] Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] T item() const { return node_->value[0]; }
  [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

  void zero_grad() { node_->grad = Tensor<T>(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

/// Wraps `value` as the output of an operation over `inputs`.
template <typename T, typename Backward>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  Var<T> out(std::move(value));
  if (!grad_mode()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::forward<Backward>(backward);
  return out;
}

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      node->grad = Tensor<T>();  // intermediate gradients are not kept
    }
  }
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T>* grad_of(Node<T>& self, std::size_t i) {
  Node<T>& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

inline void check_finite_stage(std::span<const double> v, const char* stage) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + stage);
  }
}

}  // namespace detail

// --- element-wise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : slope * v;
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      const Tensor<T>& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * (x[i] > T(0) ? T(1) : slope);
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      const Tensor<T>& y = self.value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i] * (T(1) - y[i]);
    }
  });
}

// --- channel bookkeeping ------------------------------------------------------

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeMismatch("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t pb = static_cast<std::size_t>(sb.c) * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().plane(n, 0), pa, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), pb, out.plane(n, sa.c));
  }
  return make_op<T>(std::move(out), {a, b}, [sa, sb, pa, pb](Node<T>& self) {
    for (int n = 0; n < sa.n; ++n) {
      if (auto* g = detail::grad_of(self, 0)) {
        const T* src = self.grad.plane(n, 0);
        T* dst = g->plane(n, 0);
        for (std::size_t i = 0; i < pa; ++i) dst[i] += src[i];
      }
      if (auto* g = detail::grad_of(self, 1)) {
        const T* src = self.grad.plane(n, sa.c);
        T* dst = g->plane(n, 0);
        for (std::size_t i = 0; i < pb; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int start, int count) {
  const Shape s = x.shape();
  if (start < 0 || count <= 0 || start + count > s.c) {
    throw ShapeMismatch("slice_channels: [" + std::to_string(start) + ", " +
                        std::to_string(start + count) + ") out of " + s.str());
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t len = static_cast<std::size_t>(count) * s.plane();
  for (int n = 0; n < s.n; ++n) std::copy_n(x.value().plane(n, start), len, out.plane(n, 0));
  return make_op<T>(std::move(out), {x}, [s, start, len](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (int n = 0; n < s.n; ++n) {
        const T* src = self.grad.plane(n, 0);
        T* dst = g->plane(n, start);
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < 2 * s.h; ++y) {
        for (int xx = 0; xx < 2 * s.w; ++xx) out(n, c, y, xx) = x.value()(n, c, y / 2, xx / 2);
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [s](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          for (int y = 0; y < 2 * s.h; ++y) {
            for (int xx = 0; xx < 2 * s.w; ++xx) (*g)(n, c, y / 2, xx / 2) += self.grad(n, c, y, xx);
          }
        }
      }
    }
  });
}

// --- convolution ---------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<std::size_t>(ch) * h + iy) * w + ix]
                                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((ch * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) x[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. weight: (Cout, Cin, k, k); bias: Cout values.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeMismatch("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                        std::to_string(ws.c));
  }
  if (ws.h != ws.w || bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeMismatch("conv2d: malformed weight " + ws.str() + " / bias " + bias.shape().str());
  }
  const int k = ws.h;
  const int ho = (xs.h + 2 * pad - k) / stride + 1;
  const int wo = (xs.w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw UnsupportedShape("conv2d: input " + xs.str() + " too small");
  const int cout = ws.n;
  const int krows = xs.c * k * k;
  const int npix = ho * wo;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  Tensor<T> out(Shape{xs.n, cout, ho, wo});
  AlignedVector<T> cols(direct ? 0 : static_cast<std::size_t>(krows) * npix);
  detail::ConstMapMat<T> wm(weight.value().data().data(), cout, krows);
  for (int n = 0; n < xs.n; ++n) {
    const T* src = x.value().plane(n, 0);
    if (!direct) {
      detail::im2col(src, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, cols.data());
      src = cols.data();
    }
    detail::MapMat<T> om(out.plane(n, 0), cout, npix);
    om.noalias() = wm * detail::ConstMapMat<T>(src, krows, npix);
    for (int o = 0; o < cout; ++o) om.row(o).array() += bias.value()[static_cast<std::size_t>(o)];
  }

  return make_op<T>(std::move(out), {x, weight, bias},
                    [xs, k, stride, pad, ho, wo, cout, krows, npix, direct](Node<T>& self) {
    const Tensor<T>& xv = self.inputs[0]->value;
    const Tensor<T>& wv = self.inputs[1]->value;
    Tensor<T>* gx = detail::grad_of(self, 0);
    Tensor<T>* gw = detail::grad_of(self, 1);
    Tensor<T>* gb = detail::grad_of(self, 2);
    AlignedVector<T> cols(direct ? 0 : static_cast<std::size_t>(krows) * npix);
    AlignedVector<T> dcols(static_cast<std::size_t>(krows) * npix);
    detail::ConstMapMat<T> wm(wv.data().data(), cout, krows);
    for (int n = 0; n < xs.n; ++n) {
      detail::ConstMapMat<T> gom(self.grad.plane(n, 0), cout, npix);
      if (gw) {
        const T* src = xv.plane(n, 0);
        if (!direct) {
          detail::im2col(src, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, cols.data());
          src = cols.data();
        }
        detail::MapMat<T>(gw->data().data(), cout, krows).noalias() +=
            gom * detail::ConstMapMat<T>(src, krows, npix).transpose();
      }
      if (gb) {
        for (int o = 0; o < cout; ++o) (*gb)[static_cast<std::size_t>(o)] += gom.row(o).sum();
      }
      if (gx) {
        if (direct) {
          detail::MapMat<T>(gx->plane(n, 0), krows, npix).noalias() += wm.transpose() * gom;
        } else {
          detail::MapMat<T>(dcols.data(), krows, npix).noalias() = wm.transpose() * gom;
          detail::col2im_add(dcols.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, gx->plane(n, 0));
        }
      }
    }
  });
}

// --- Fourier-domain operations ---------------------------------------------------

/// Real feature map (N, C, H, W) -> (N, 2C, H, W): channels [0, C) hold the
/// amplitude of fft2c, channels [C, 2C) its phase.
template <typename T>
Var<T> spectrum_polar(const Var<T>& x, const char* stage = "spectrum_polar") {
  const Shape s = x.shape();
  fsmnet::detail::check_even(s.h, s.w, stage);
  Tensor<T> out(Shape{s.n, 2 * s.c, s.h, s.w});
  std::vector<std::complex<double>> z(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      fsmnet::detail::fft2c_real_plane(x.value().plane(n, c), z.data(), s.h, s.w);
      detail::check_finite_stage(
          std::span<const double>(reinterpret_cast<const double*>(z.data()), 2 * z.size()), stage);
      T* amp = out.plane(n, c);
      T* ph = out.plane(n, s.c + c);
      for (std::size_t i = 0; i < z.size(); ++i) {
        amp[i] = static_cast<T>(std::sqrt(z[i].real() * z[i].real() + z[i].imag() * z[i].imag()));
        ph[i] = static_cast<T>(phase_of(z[i].real(), z[i].imag()));
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [s](Node<T>& self) {
    Tensor<T>* gx = detail::grad_of(self, 0);
    if (!gx) return;
    std::vector<std::complex<double>> g(s.plane());
    std::vector<std::complex<double>> r(s.plane());
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* amp = self.value.plane(n, c);
        const T* ph = self.value.plane(n, s.c + c);
        const T* ga = self.grad.plane(n, c);
        const T* gp = self.grad.plane(n, s.c + c);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double a = amp[i];
          if (a == 0.0) {
            g[i] = 0.0;
            continue;
          }
          const double cp = std::cos(static_cast<double>(ph[i]));
          const double sp = std::sin(static_cast<double>(ph[i]));
          g[i] = {ga[i] * cp - gp[i] * sp / a, ga[i] * sp + gp[i] * cp / a};
        }
        fsmnet::detail::centered_transform(g.data(), r.data(), s.h, s.w,
                                           fsmnet::detail::Direction::inverse);
        T* dst = gx->plane(n, c);
        for (std::size_t i = 0; i < r.size(); ++i) dst[i] += static_cast<T>(r[i].real());
      }
    }
  });
}

/// (N, 2C, H, W) amplitude/phase -> real part of ifft2c(A * exp(iP)), (N, C, H, W).
/// The amplitude may be negative here (a learned path can produce it).
template <typename T>
Var<T> polar_to_image(const Var<T>& ap, const char* stage = "polar_to_image") {
  const Shape s2 = ap.shape();
  if (s2.c % 2 != 0) throw ShapeMismatch("polar_to_image: odd channel count " + s2.str());
  const Shape s{s2.n, s2.c / 2, s2.h, s2.w};
  fsmnet::detail::check_even(s.h, s.w, stage);
  Tensor<T> out(s);
  std::vector<std::complex<double>> z(s.plane());
  std::vector<std::complex<double>> r(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* amp = ap.value().plane(n, c);
      const T* ph = ap.value().plane(n, s.c + c);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::polar(1.0, static_cast<double>(ph[i])) * static_cast<double>(amp[i]);
      fsmnet::detail::centered_transform(z.data(), r.data(), s.h, s.w,
                                         fsmnet::detail::Direction::inverse);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < r.size(); ++i) dst[i] = static_cast<T>(r[i].real());
    }
  }
  for (T v : out.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + stage);
  }
  return make_op<T>(std::move(out), {ap}, [s](Node<T>& self) {
    Tensor<T>* g = detail::grad_of(self, 0);
    if (!g) return;
    std::vector<std::complex<double>> gy(s.plane());
    std::vector<std::complex<double>> gz(s.plane());
    const Tensor<T>& apv = self.inputs[0]->value;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* src = self.grad.plane(n, c);
        for (std::size_t i = 0; i < gy.size(); ++i) gy[i] = {static_cast<double>(src[i]), 0.0};
        fsmnet::detail::centered_transform(gy.data(), gz.data(), s.h, s.w,
                                           fsmnet::detail::Direction::forward);
        const T* amp = apv.plane(n, c);
        const T* ph = apv.plane(n, s.c + c);
        T* ga = g->plane(n, c);
        T* gp = g->plane(n, s.c + c);
        for (std::size_t i = 0; i < gz.size(); ++i) {
          const double cp = std::cos(static_cast<double>(ph[i]));
          const double sp = std::sin(static_cast<double>(ph[i]));
          const double re = gz[i].real();
          const double im = gz[i].imag();
          ga[i] += static_cast<T>(re * cp + im * sp);
          gp[i] += static_cast<T>(static_cast<double>(amp[i]) * (-re * sp + im * cp));
        }
      }
    }
  });
}

// --- attention -----------------------------------------------------------------

/// Row-wise softmax of a rows x cols block, stabilized by the row maximum.
template <typename T>
void softmax_rows(T* m, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* row = m + static_cast<std::size_t>(r) * cols;
    T mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] /= sum;
  }
}

/// Channel-token cross attention. Each channel, flattened over H*W, is a
/// token of dimension d = H*W; channels are split into `heads` groups.
/// out = softmax(Q K^T / sqrt(d)) V per (batch, head). When `weights` is
/// non-null it receives the attention map, shape (N, heads, C/heads, C/heads).
template <typename T>
Var<T> channel_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                         Tensor<T>* weights = nullptr) {
  const Shape s = q.shape();
  require_same_shape(s, k.shape(), "channel_attention(q, k)");
  require_same_shape(s, v.shape(), "channel_attention(q, v)");
  if (heads <= 0 || s.c % heads != 0) {
    throw ConfigError("channel_attention: " + std::to_string(s.c) +
                      " channels not divisible by " + std::to_string(heads) + " heads");
  }
  const int g = s.c / heads;
  const int d = static_cast<int>(s.plane());
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> attn(Shape{s.n, heads, g, g});
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < heads; ++h) {
      detail::ConstMapMat<T> qm(q.value().plane(n, h * g), g, d);
      detail::ConstMapMat<T> km(k.value().plane(n, h * g), g, d);
      detail::ConstMapMat<T> vm(v.value().plane(n, h * g), g, d);
      detail::MapMat<T> am(attn.plane(n, h), g, g);
      am.noalias() = (qm * km.transpose()) * inv_sqrt_d;
      softmax_rows(am.data(), g, g);
      detail::MapMat<T>(out.plane(n, h * g), g, d).noalias() = am * vm;
    }
  }
  if (weights) *weights = attn;
  return make_op<T>(std::move(out), {q, k, v}, [s, heads, g, d, inv_sqrt_d, attn](Node<T>& self) {
    Tensor<T>* gq = detail::grad_of(self, 0);
    Tensor<T>* gk = detail::grad_of(self, 1);
    Tensor<T>* gv = detail::grad_of(self, 2);
    detail::RowMat<T> da(g, g);
    detail::RowMat<T> ds(g, g);
    for (int n = 0; n < s.n; ++n) {
      for (int h = 0; h < heads; ++h) {
        detail::ConstMapMat<T> qm(self.inputs[0]->value.plane(n, h * g), g, d);
        detail::ConstMapMat<T> km(self.inputs[1]->value.plane(n, h * g), g, d);
        detail::ConstMapMat<T> vm(self.inputs[2]->value.plane(n, h * g), g, d);
        detail::ConstMapMat<T> am(attn.plane(n, h), g, g);
        detail::ConstMapMat<T> gom(self.grad.plane(n, h * g), g, d);
        if (gv) detail::MapMat<T>(gv->plane(n, h * g), g, d).noalias() += am.transpose() * gom;
        if (!gq && !gk) continue;
        da.noalias() = gom * vm.transpose();
        for (int r = 0; r < g; ++r) {
          T dot = 0;
          for (int j = 0; j < g; ++j) dot += da(r, j) * am(r, j);
          for (int j = 0; j < g; ++j) ds(r, j) = am(r, j) * (da(r, j) - dot) * inv_sqrt_d;
        }
        if (gq) detail::MapMat<T>(gq->plane(n, h * g), g, d).noalias() += ds * km;
        if (gk) detail::MapMat<T>(gk->plane(n, h * g), g, d).noalias() += ds.transpose() * qm;
      }
    }
  });
}

// --- reductions ----------------------------------------------------------------

/// mean(|a - b|) as a scalar of shape (1, 1, 1, 1).
template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1_mean");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    acc += std::abs(static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]));
  }
  const double count = static_cast<double>(a.value().size());
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc / count));
  return make_op<T>(std::move(out), {a, b}, [count](Node<T>& self) {
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    const T g = static_cast<T>(static_cast<double>(self.grad[0]) / count);
    Tensor<T>* ga = detail::grad_of(self, 0);
    Tensor<T>* gb = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T diff = av[i] - bv[i];
      const T sg = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
      if (ga) (*ga)[i] += sg;
      if (gb) (*gb)[i] -= sg;
    }
  });
}

}  // namespace fsmnet::ag
