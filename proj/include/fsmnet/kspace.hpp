#pragma once

// Cartesian k-space undersampling and the zero-filling reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fsmnet/fft.hpp"
#include "fsmnet/raw_io.hpp"

namespace fsmnet {

/// Binary (H, W) mask that samples whole columns (phase-encode lines).
class SamplingMask {
 public:
  SamplingMask() = default;
  SamplingMask(int h, int w, double af, double center_fraction, std::uint64_t seed,
               std::vector<float> values)
      : h_(h), w_(w), af_(af), center_fraction_(center_fraction), seed_(seed),
        values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(h) * w) {
      throw ShapeMismatch("mask values do not match " + std::to_string(h) + "x" +
                          std::to_string(w));
    }
  }

  [[nodiscard]] int h() const { return h_; }
  [[nodiscard]] int w() const { return w_; }
  [[nodiscard]] double acceleration_factor() const { return af_; }
  [[nodiscard]] double center_fraction() const { return center_fraction_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::span<const float> values() const { return values_; }
  [[nodiscard]] float operator()(int y, int x) const {
    return values_[static_cast<std::size_t>(y) * w_ + x];
  }
  [[nodiscard]] bool column_sampled(int x) const { return values_[static_cast<std::size_t>(x)] != 0.0f; }
  [[nodiscard]] int sampled_columns() const {
    int n = 0;
    for (int x = 0; x < w_; ++x) n += column_sampled(x) ? 1 : 0;
    return n;
  }

 private:
  int h_ = 0;
  int w_ = 0;
  double af_ = 1.0;
  double center_fraction_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<float> values_;
};

/// Fully-sampled centre width used throughout: 0.08 at 4x and 0.04 at 8x.
inline double default_center_fraction(double af) { return 0.32 / af; }

inline int center_columns(int w, double center_fraction) {
  return static_cast<int>(std::ceil(center_fraction * w - 1e-9));
}

/// First column of the centred block of `count` columns (DC column at w/2 included).
inline int center_start(int w, int count) { return w / 2 - count / 2; }

/// Random 1-D Cartesian mask: a fully-sampled centre block plus columns drawn
/// uniformly without replacement until floor(w / af) columns are sampled.
inline SamplingMask make_mask(int h, int w, double af, double center_fraction, std::uint64_t seed) {
  if (h <= 0 || w <= 0) throw ConfigError("make_mask: mask extent must be positive");
  if (!(af >= 1.0)) throw ConfigError("make_mask: acceleration factor must be >= 1");
  if (!(center_fraction > 0.0 && center_fraction < 1.0 / af) && af != 1.0) {
    throw ConfigError("make_mask: center fraction must lie in (0, 1/af)");
  }
  const int budget = static_cast<int>(std::floor(w / af + 1e-9));
  std::vector<float> values(static_cast<std::size_t>(h) * w, 0.0f);
  std::vector<char> column(static_cast<std::size_t>(w), 0);

  if (budget >= w) {
    std::fill(column.begin(), column.end(), 1);
  } else {
    const int nc = center_columns(w, center_fraction);
    if (nc > budget) {
      throw ConfigError("make_mask: " + std::to_string(nc) + " centre columns exceed the budget of " +
                        std::to_string(budget));
    }
    const int start = center_start(w, nc);
    for (int x = start; x < start + nc; ++x) column[static_cast<std::size_t>(x)] = 1;
    std::vector<int> rest;
    for (int x = 0; x < w; ++x) {
      if (!column[static_cast<std::size_t>(x)]) rest.push_back(x);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (int i = 0; i < budget - nc; ++i) column[static_cast<std::size_t>(rest[static_cast<std::size_t>(i)])] = 1;
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      values[static_cast<std::size_t>(y) * w + x] = column[static_cast<std::size_t>(x)] ? 1.0f : 0.0f;
    }
  }
  return {h, w, af, center_fraction, seed, std::move(values)};
}

/// fft2c(x) with unsampled locations set to zero, mask broadcast over batch and channel.
template <typename T>
ComplexSpectrum<T> undersample(const Tensor<T>& x, const SamplingMask& m) {
  if (x.shape().h != m.h() || x.shape().w != m.w()) {
    throw ShapeMismatch("undersample: image " + x.shape().str() + " vs mask " +
                        std::to_string(m.h()) + "x" + std::to_string(m.w()));
  }
  ComplexSpectrum<T> s = fft2c(x);
  const auto mv = m.values();
  for (int n = 0; n < x.shape().n; ++n) {
    for (int c = 0; c < x.shape().c; ++c) {
      std::complex<T>* p = s.plane(n, c);
      for (std::size_t i = 0; i < mv.size(); ++i) {
        if (mv[i] == 0.0f) p[i] = std::complex<T>(0, 0);
      }
    }
  }
  return s;
}

/// Zero-filling reconstruction: real part of the inverse transform, clipped at 0.
template <typename T>
Tensor<T> zero_fill(const ComplexSpectrum<T>& masked) {
  const ComplexSpectrum<T> z = ifft2c(masked);
  Tensor<T> out(masked.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(T(0), z[i].real());
  return out;
}

/// Raw float32 mask at `path` plus a `<path>.json` sidecar.
inline void write_mask(const SamplingMask& m, const std::filesystem::path& path) {
  io::write_f32(path, m.values());
  io::json side = {{"h", m.h()},
                   {"w", m.w()},
                   {"af", m.acceleration_factor()},
                   {"center_fraction", m.center_fraction()},
                   {"seed", m.seed()}};
  io::write_json(path.string() + ".json", side);
}

inline SamplingMask read_mask(const std::filesystem::path& path) {
  const io::json side = io::read_json(path.string() + ".json");
  try {
    const int h = side.at("h").get<int>();
    const int w = side.at("w").get<int>();
    auto values = io::read_f32(path, static_cast<std::size_t>(h) * w);
    return {h,
            w,
            side.at("af").get<double>(),
            side.at("center_fraction").get<double>(),
            side.at("seed").get<std::uint64_t>(),
            std::move(values)};
  } catch (const io::json::exception& e) {
    throw LoadError("mask sidecar " + path.string() + ".json: " + e.what());
  }
}

}  // namespace fsmnet
