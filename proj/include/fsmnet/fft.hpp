#pragma once

// Centered, orthonormal 2-D Fourier transforms and the polar (amplitude /
// phase) view of a spectrum. DC sits at index (H/2, W/2). FFTW does the
// actual transforms; every plane goes through double precision regardless
// of the tensor scalar type.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>
#include <vector>

#include "fsmnet/tensor.hpp"

namespace fsmnet {

template <typename T>
class ComplexSpectrum {
 public:
  using value_type = std::complex<T>;

  ComplexSpectrum() = default;
  explicit ComplexSpectrum(Shape shape) : shape_(shape), data_(shape.size()) {}

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::span<std::complex<T>> data() { return data_; }
  [[nodiscard]] std::span<const std::complex<T>> data() const { return data_; }

  std::complex<T>& operator[](std::size_t i) { return data_[i]; }
  const std::complex<T>& operator[](std::size_t i) const { return data_[i]; }
  std::complex<T>& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const std::complex<T>& operator()(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }
  [[nodiscard]] std::complex<T>* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const std::complex<T>* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  [[nodiscard]] Tensor<T> real() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i].real();
    return out;
  }
  [[nodiscard]] Tensor<T> imag() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i].imag();
    return out;
  }

 private:
  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<std::complex<T>> data_;
};

/// Polar form of a spectrum: amplitude >= 0, phase in (-pi, pi].
template <typename T>
struct AmpPhase {
  Tensor<T> amplitude;
  Tensor<T> phase;
};

namespace detail {

enum class Direction { forward, inverse };

/// FFTW plans keyed by (h, w, direction). Planning is serialized; executing a
/// plan with the new-array interface is thread-safe.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int h, int w, Direction dir) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(h, w, dir == Direction::forward);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<std::complex<double>> in(static_cast<std::size_t>(h) * w);
    std::vector<std::complex<double>> out(in.size());
    fftw_plan plan = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(in.data()),
                                      reinterpret_cast<fftw_complex*>(out.data()),
                                      dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::tuple<int, int, bool>, fftw_plan> plans_;
};

inline void check_even(int h, int w, const char* what) {
  if (h <= 0 || w <= 0 || h % 2 != 0 || w % 2 != 0) {
    throw UnsupportedShape(std::string(what) + ": H and W must be positive and even, got " +
                           std::to_string(h) + "x" + std::to_string(w));
  }
}

/// out = shift(DFT(ishift(in))) / sqrt(h*w). `in` and `out` may not alias.
inline void centered_transform(const std::complex<double>* in, std::complex<double>* out, int h,
                               int w, Direction dir) {
  thread_local std::vector<std::complex<double>> a;
  thread_local std::vector<std::complex<double>> b;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  a.resize(n);
  b.resize(n);
  const int hh = h / 2;
  const int hw = w / 2;
  for (int y = 0; y < h; ++y) {
    const int sy = (y + hh) % h;
    for (int x = 0; x < w; ++x) {
      a[static_cast<std::size_t>(sy) * w + (x + hw) % w] = in[static_cast<std::size_t>(y) * w + x];
    }
  }
  fftw_execute_dft(PlanCache::instance().get(h, w, dir), reinterpret_cast<fftw_complex*>(a.data()),
                   reinterpret_cast<fftw_complex*>(b.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int y = 0; y < h; ++y) {
    const int sy = (y + hh) % h;
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] =
          b[static_cast<std::size_t>(sy) * w + (x + hw) % w] * scale;
    }
  }
}

/// Projects a centered spectrum onto the Hermitian-symmetric subspace. For the
/// transform of a real plane this is the identity up to rounding, and it makes
/// the self-conjugate bins (DC, Nyquist) exactly real so their phase is stable.
inline void hermitian_symmetrize(std::complex<double>* s, int h, int w) {
  for (int y = 0; y < h; ++y) {
    const int py = (h - y) % h;
    for (int x = 0; x < w; ++x) {
      const int px = (w - x) % w;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const std::size_t p = static_cast<std::size_t>(py) * w + px;
      if (p < i) continue;
      if (p == i) {
        s[i] = {s[i].real(), 0.0};
      } else {
        const std::complex<double> avg = 0.5 * (s[i] + std::conj(s[p]));
        s[i] = avg;
        s[p] = std::conj(avg);
      }
    }
  }
}

/// Forward centered transform of one real plane into a double spectrum.
template <typename T>
void fft2c_real_plane(const T* in, std::complex<double>* out, int h, int w) {
  thread_local std::vector<std::complex<double>> buf;
  buf.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {static_cast<double>(in[i]), 0.0};
  centered_transform(buf.data(), out, h, w, Direction::forward);
  hermitian_symmetrize(out, h, w);
}

template <typename T>
ComplexSpectrum<T> transform(const ComplexSpectrum<T>& s, Direction dir) {
  const Shape& sh = s.shape();
  check_even(sh.h, sh.w, dir == Direction::forward ? "fft2c" : "ifft2c");
  for (const auto& v : s.data()) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw InvalidInput(dir == Direction::forward ? "fft2c: non-finite input"
                                                   : "ifft2c: non-finite input");
    }
  }
  ComplexSpectrum<T> out(sh);
  std::vector<std::complex<double>> in(sh.plane());
  std::vector<std::complex<double>> res(sh.plane());
  for (int n = 0; n < sh.n; ++n) {
    for (int c = 0; c < sh.c; ++c) {
      const std::complex<T>* src = s.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) in[i] = std::complex<double>(src[i]);
      centered_transform(in.data(), res.data(), sh.h, sh.w, dir);
      std::complex<T>* dst = out.plane(n, c);
      for (std::size_t i = 0; i < res.size(); ++i) dst[i] = std::complex<T>(res[i]);
    }
  }
  return out;
}

}  // namespace detail

/// Centered orthonormal forward transform of a real image batch.
template <typename T>
ComplexSpectrum<T> fft2c(const Tensor<T>& x) {
  const Shape& sh = x.shape();
  detail::check_even(sh.h, sh.w, "fft2c");
  if (!all_finite(x.data())) throw InvalidInput("fft2c: non-finite input");
  ComplexSpectrum<T> out(sh);
  std::vector<std::complex<double>> res(sh.plane());
  for (int n = 0; n < sh.n; ++n) {
    for (int c = 0; c < sh.c; ++c) {
      detail::fft2c_real_plane(x.plane(n, c), res.data(), sh.h, sh.w);
      std::complex<T>* dst = out.plane(n, c);
      for (std::size_t i = 0; i < res.size(); ++i) dst[i] = std::complex<T>(res[i]);
    }
  }
  return out;
}

template <typename T>
ComplexSpectrum<T> fft2c(const ComplexSpectrum<T>& s) {
  return detail::transform(s, detail::Direction::forward);
}

template <typename T>
ComplexSpectrum<T> ifft2c(const ComplexSpectrum<T>& s) {
  return detail::transform(s, detail::Direction::inverse);
}

/// Inverse transform returning a real image. Throws when the imaginary
/// residue exceeds `tolerance`, i.e. the spectrum was not Hermitian.
template <typename T>
Tensor<T> ifft2c_real(const ComplexSpectrum<T>& s, double tolerance = 1e-4) {
  const ComplexSpectrum<T> z = ifft2c(s);
  double residue = 0.0;
  for (const auto& v : z.data()) residue = std::max(residue, std::abs(static_cast<double>(v.imag())));
  if (residue >= tolerance) {
    throw InvalidInput("ifft2c: imaginary residue " + std::to_string(residue) +
                       " exceeds tolerance " + std::to_string(tolerance));
  }
  return z.real();
}

/// Phase convention: 0 where the coefficient is exactly zero, and -pi folds to +pi.
template <typename T>
T phase_of(T re, T im) {
  if (re == T(0) && im == T(0)) return T(0);
  T p = std::atan2(im, re);
  if (p <= -std::numbers::pi_v<T>) p = std::numbers::pi_v<T>;
  return p;
}

template <typename T>
AmpPhase<T> decompose(const ComplexSpectrum<T>& s) {
  AmpPhase<T> ap{Tensor<T>(s.shape()), Tensor<T>(s.shape())};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const T re = s[i].real();
    const T im = s[i].imag();
    if (!std::isfinite(re) || !std::isfinite(im)) throw InvalidInput("decompose: non-finite input");
    ap.amplitude[i] = std::sqrt(re * re + im * im);
    ap.phase[i] = phase_of(re, im);
  }
  return ap;
}

template <typename T>
ComplexSpectrum<T> recompose(const AmpPhase<T>& ap) {
  require_same_shape(ap.amplitude.shape(), ap.phase.shape(), "recompose");
  ComplexSpectrum<T> s(ap.amplitude.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const T a = ap.amplitude[i];
    if (!(a >= T(0))) throw InvalidInput("recompose: negative or non-finite amplitude");
    s[i] = a == T(0) ? std::complex<T>(0, 0)
                     : std::complex<T>(a * std::cos(ap.phase[i]), a * std::sin(ap.phase[i]));
  }
  return s;
}

}  // namespace fsmnet
