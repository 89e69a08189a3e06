#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fsmnet/fsmnet.hpp"

namespace fsmnet::testing {

using cd = std::complex<double>;

/// O(N^2) centered orthonormal DFT of one h x w plane:
///   X(u, v) = 1/sqrt(hw) sum_{y,x} x(y, x) exp(-+2 pi i ((u - h/2)(y - h/2)/h + (v - w/2)(x - w/2)/w))
inline std::vector<cd> brute_dft2c(const std::vector<cd>& in, int h, int w, bool inverse) {
  std::vector<cd> out(in.size());
  const double sign = inverse ? 1.0 : -1.0;
  const double norm = 1.0 / std::sqrt(static_cast<double>(h) * w);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      cd acc = 0.0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double ang = 2.0 * std::numbers::pi * sign *
                             (static_cast<double>((u - h / 2) * (y - h / 2)) / h +
                              static_cast<double>((v - w / 2) * (x - w / 2)) / w);
          acc += in[static_cast<std::size_t>(y) * w + x] * cd(std::cos(ang), std::sin(ang));
        }
      }
      out[static_cast<std::size_t>(u) * w + v] = acc * norm;
    }
  }
  return out;
}

/// SSIM recomputed window by window with an explicit 2-D Gaussian.
inline double brute_ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  const int win = 11;
  const double sigma = 1.5;
  std::vector<double> kernel(static_cast<std::size_t>(win) * win);
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - 5;
      const double dj = j - 5;
      kernel[static_cast<std::size_t>(i) * win + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      ksum += kernel[static_cast<std::size_t>(i) * win + j];
    }
  }
  for (double& k : kernel) k /= ksum;
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  int windows = 0;
  for (int y0 = 0; y0 + win <= h; ++y0) {
    for (int x0 = 0; x0 + win <= w; ++x0) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double k = kernel[static_cast<std::size_t>(i) * win + j];
          ma += k * a[static_cast<std::size_t>(y0 + i) * w + x0 + j];
          mb += k * b[static_cast<std::size_t>(y0 + i) * w + x0 + j];
        }
      }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double k = kernel[static_cast<std::size_t>(i) * win + j];
          const double da = a[static_cast<std::size_t>(y0 + i) * w + x0 + j] - ma;
          const double db = b[static_cast<std::size_t>(y0 + i) * w + x0 + j] - mb;
          va += k * da * da;
          vb += k * db * db;
          cov += k * da * db;
        }
      }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// --- finite differences -------------------------------------------------------------

struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  double max_rel = 0.0;
  std::string worst;
};

/// Compares reverse-mode gradients of `loss` with central differences at
/// `samples` randomly chosen elements of `params`.
/// rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
inline GradCheckResult check_gradients(const std::vector<std::pair<std::string, ag::Var<double>>>& params,
                                       const std::function<ag::Var<double>()>& loss, int samples,
                                       std::uint64_t seed, double eps = 1e-6, double tol = 1e-3) {
  for (const auto& [name, p] : params) {
    ag::Var<double> v = p;
    v.zero_grad();
  }
  ag::backward(loss());
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].second.value().size(); ++i) slots.emplace_back(k, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(slots.begin(), slots.end(), rng);
  if (slots.size() > static_cast<std::size_t>(samples)) slots.resize(static_cast<std::size_t>(samples));

  GradCheckResult r;
  ag::NoGradGuard no_grad;
  for (const auto& [k, i] : slots) {
    ag::Var<double> p = params[k].second;
    const Tensor<double>& g = p.grad();
    const double analytic = g.size() == p.value().size() ? g[i] : 0.0;
    double& x = p.mutable_value()[i];
    const double x0 = x;
    x = x0 + eps;
    const double up = loss().item();
    x = x0 - eps;
    const double down = loss().item();
    x = x0;
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++r.checked;
    if (rel >= tol) ++r.failed;
    if (rel >= r.max_rel) {
      r.max_rel = rel;
      r.worst = params[k].first + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) +
                " numeric " + std::to_string(numeric);
    }
  }
  return r;
}

inline std::vector<std::pair<std::string, ag::Var<double>>> all_parameters(const ParameterStore<double>& ps) {
  return {ps.entries().begin(), ps.entries().end()};
}

// --- closed-form parameter tally ----------------------------------------------------

inline std::size_t conv_params(int k, int cin, int cout) {
  return static_cast<std::size_t>(k) * k * cin * cout + static_cast<std::size_t>(cout);
}

inline std::size_t expected_parameter_count(const ModelConfig& m) {
  const int kb = m.residual_blocks;
  auto fsfe = [&](int c) {
    return static_cast<std::size_t>(kb) * 2 * conv_params(3, c, c) + (m.use_fsfe_frequency ? 4 * conv_params(1, c, c) : 0);
  };
  auto cms = [&](int c) -> std::size_t {
    if (m.cms_mode == CmsMode::selective) return conv_params(3, 2 * c, 2 * c);
    if (m.cms_mode == CmsMode::concat) return conv_params(3, 2 * c, c);
    return 0;
  };
  auto fs = [&](int c) -> std::size_t {
    return m.fs_mode == FsMode::selective ? 8 * conv_params(1, c, c) + conv_params(3, 2 * c, 2 * c) : 0;
  };
  auto stage = [&](int c, bool down) {
    return 2 * fsfe(c) + 2 * cms(c) + fs(c) + (down ? 4 * conv_params(3, c, 2 * c) : 0);
  };
  const int c0 = m.base_channels;
  std::size_t total = 2 * conv_params(3, 1, c0) + 2 * conv_params(3, c0, 1);
  for (int i = 0; i < m.stages; ++i) {
    const int c = c0 << i;
    total += stage(c, true);
    total += 2 * conv_params(3, 2 * c, c) + fsfe(c) + fs(c);
  }
  total += stage(c0 << m.stages, false);
  return total;
}

}  // namespace fsmnet::testing
