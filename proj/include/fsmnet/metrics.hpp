#pragma once

// PSNR and SSIM on images scaled to data range 1.
//
// SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, and
// averages the SSIM map over all window positions that fit entirely inside
// the image (no padding). Multi-plane tensors average over planes.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "fsmnet/tensor.hpp"

namespace fsmnet {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::array<double, kSsimWindow> ssim_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

namespace detail {

template <typename T>
void check_reference(const Tensor<T>& ref, const char* what) {
  const bool all_zero = std::all_of(ref.data().begin(), ref.data().end(), [](T v) { return v == T(0); });
  if (all_zero) throw InvalidInput(std::string(what) + ": reference is identically zero, cannot normalize");
}

/// Valid-mode separable Gaussian filter of one h x w plane.
inline std::vector<double> gaussian_valid(const std::vector<double>& img, int h, int w) {
  static const auto g = ssim_taps();
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace detail

/// 10 log10(1 / MSE); +infinity when the inputs are identical.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& ref) {
  require_same_shape(x.shape(), ref.shape(), "psnr");
  detail::check_reference(ref, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(ref[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& ref) {
  require_same_shape(x.shape(), ref.shape(), "ssim");
  detail::check_reference(ref, "ssim");
  const Shape& s = x.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw UnsupportedShape("ssim: image " + s.str() + " smaller than the 11x11 window");
  }
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t np = s.plane();
      std::vector<double> a(np), b(np), aa(np), bb(np), ab(np);
      for (std::size_t i = 0; i < np; ++i) {
        a[i] = x.plane(n, c)[i];
        b[i] = ref.plane(n, c)[i];
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
      const auto mu_a = detail::gaussian_valid(a, s.h, s.w);
      const auto mu_b = detail::gaussian_valid(b, s.h, s.w);
      const auto e_aa = detail::gaussian_valid(aa, s.h, s.w);
      const auto e_bb = detail::gaussian_valid(bb, s.h, s.w);
      const auto e_ab = detail::gaussian_valid(ab, s.h, s.w);
      double acc = 0.0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
      }
      total += acc / static_cast<double>(mu_a.size());
    }
  }
  return total / (static_cast<double>(s.n) * s.c);
}

/// Scales `x` by the min/max of `ref` and clips it to [0, 1]; `ref` is scaled
/// the same way. A constant reference cannot be normalized.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> normalize_for_eval(const Tensor<T>& x, const Tensor<T>& ref) {
  require_same_shape(x.shape(), ref.shape(), "normalize_for_eval");
  const auto [lo_it, hi_it] = std::minmax_element(ref.data().begin(), ref.data().end());
  const double lo = *lo_it;
  const double span = static_cast<double>(*hi_it) - lo;
  if (!(span > 0.0)) throw InvalidInput("normalize_for_eval: constant reference");
  Tensor<T> xn(x.shape());
  Tensor<T> rn(ref.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xn[i] = static_cast<T>(std::clamp((static_cast<double>(x[i]) - lo) / span, 0.0, 1.0));
    rn[i] = static_cast<T>((static_cast<double>(ref[i]) - lo) / span);
  }
  return {std::move(xn), std::move(rn)};
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (!std::isfinite(s.mean)) {
    s.std = 0.0;
    return s;
  }
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

}  // namespace fsmnet
