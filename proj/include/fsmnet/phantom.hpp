#pragma once

// Synthetic two-contrast slices. One structure field (soft ellipses over a
// smooth background) is pushed through two different monotone intensity
// curves, so the contrasts differ while the anatomy is shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fsmnet/raw_io.hpp"
#include "fsmnet/tensor.hpp"

namespace fsmnet {

inline constexpr int kPhantomGeneratorVersion = 1;

struct ContrastPair {
  std::string id;
  std::uint64_t seed = 0;
  Tensor<float> aux;  ///< (1, 1, H, W) auxiliary contrast, fully sampled
  Tensor<float> tar;  ///< (1, 1, H, W) target contrast ground truth
};

namespace detail {

inline double aux_contrast(double s) { return 1.0 - std::exp(-3.0 * s); }
inline double tar_contrast(double s) { return 1.0 / (1.0 + std::exp(8.0 * (s - 0.5))); }

inline void min_max_normalize(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo;
  const double span = *hi - *lo;
  for (double& x : v) x = span > 0.0 ? (x - a) / span : 0.0;
}

inline double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline std::vector<double> structure_field(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = std::numbers::pi;
  std::vector<double> s(static_cast<std::size_t>(size) * size);

  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves(3);
  for (auto& wv : waves) wv = {1.0 + 1.5 * u(rng), 1.0 + 1.5 * u(rng), 2.0 * pi * u(rng), 0.04 * u(rng)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double b = 0.12;
      for (const auto& wv : waves) {
        b += wv.amp * std::cos(2.0 * pi * (wv.fx * x + wv.fy * y) / size + wv.phase);
      }
      s[static_cast<std::size_t>(y) * size + x] = b;
    }
  }

  const int count = 3 + static_cast<int>(u(rng) * 6.0);  // 3..8
  for (int e = 0; e < count; ++e) {
    const double cx = (0.2 + 0.6 * u(rng)) * size;
    const double cy = (0.2 + 0.6 * u(rng)) * size;
    const double ax = (0.08 + 0.27 * u(rng)) * size;
    const double ay = (0.08 + 0.27 * u(rng)) * size;
    const double theta = pi * u(rng);
    const double level = 0.2 + 0.8 * u(rng);
    const double soft = 0.6 + 0.8 * u(rng);  // edge width in pixels
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double rx = (ct * dx + st * dy) / ax;
        const double ry = (-st * dx + ct * dy) / ay;
        const double dist = (1.0 - std::sqrt(rx * rx + ry * ry)) * std::min(ax, ay);
        const double wgt = 1.0 / (1.0 + std::exp(-dist / soft));
        double& v = s[static_cast<std::size_t>(y) * size + x];
        v = (1.0 - wgt) * v + wgt * level;
      }
    }
  }
  for (double& v : s) v = std::clamp(v, 0.0, 1.0);
  return s;
}

}  // namespace detail

/// Deterministic pair for `seed`. Degenerate (near-constant) draws are
/// replaced by redrawing with an incremented sub-seed.
inline ContrastPair generate_pair(int size, std::uint64_t seed) {
  if (size < 16 || size % 2 != 0) {
    throw ConfigError("generate_pair: size must be even and >= 16, got " + std::to_string(size));
  }
  for (std::uint64_t sub = 0;; ++sub) {
    const std::vector<double> s = detail::structure_field(size, seed * 0x9E3779B97F4A7C15ULL + sub);
    std::vector<double> aux(s.size());
    std::vector<double> tar(s.size());
    std::transform(s.begin(), s.end(), aux.begin(), detail::aux_contrast);
    std::transform(s.begin(), s.end(), tar.begin(), detail::tar_contrast);
    detail::min_max_normalize(aux);
    detail::min_max_normalize(tar);
    if (detail::stddev(aux) <= 1e-3 || detail::stddev(tar) <= 1e-3) continue;

    const Shape shape{1, 1, size, size};
    ContrastPair pair;
    pair.seed = seed;
    pair.aux = Tensor<double>(shape, std::move(aux)).cast<float>();
    pair.tar = Tensor<double>(shape, std::move(tar)).cast<float>();
    return pair;
  }
}

/// Pearson correlation of central-difference gradient magnitudes (interior pixels).
inline double gradient_correlation(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a.shape(), b.shape(), "gradient_correlation");
  const int h = a.shape().h;
  const int w = a.shape().w;
  auto grad_mag = [&](const Tensor<float>& t) {
    std::vector<double> g;
    for (int y = 1; y + 1 < h; ++y) {
      for (int x = 1; x + 1 < w; ++x) {
        const double gx = 0.5 * (t(0, 0, y, x + 1) - t(0, 0, y, x - 1));
        const double gy = 0.5 * (t(0, 0, y + 1, x) - t(0, 0, y - 1, x));
        g.push_back(std::sqrt(gx * gx + gy * gy));
      }
    }
    return g;
  };
  const auto ga = grad_mag(a);
  const auto gb = grad_mag(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    ma += ga[i];
    mb += gb[i];
  }
  ma /= static_cast<double>(ga.size());
  mb /= static_cast<double>(gb.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    sab += (ga[i] - ma) * (gb[i] - mb);
    saa += (ga[i] - ma) * (ga[i] - ma);
    sbb += (gb[i] - mb) * (gb[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

inline std::string pair_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "pair_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

/// Pair seeds are spread over the 64-bit range from one master seed.
inline std::uint64_t pair_seed(std::uint64_t master_seed, std::size_t index) {
  std::uint64_t z = master_seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<ContrastPair> generate_corpus(std::size_t count, int size,
                                                 std::uint64_t master_seed) {
  std::vector<ContrastPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ContrastPair p = generate_pair(size, pair_seed(master_seed, i));
    p.id = pair_id(i);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// FNV-1a over every aux/tar byte in corpus order.
inline std::uint64_t corpus_hash(const std::vector<ContrastPair>& pairs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : pairs) {
    h = io::fnv1a(std::as_bytes(p.aux.data()), h);
    h = io::fnv1a(std::as_bytes(p.tar.data()), h);
  }
  return h;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Layout: DIR/manifest.json and DIR/<id>/{aux.f32, tar.f32, meta.json}.
inline io::json write_corpus(const std::vector<ContrastPair>& pairs, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  io::json entries = io::json::array();
  std::vector<double> correlations;
  for (const auto& p : pairs) {
    const fs::path pd = dir / p.id;
    fs::create_directories(pd);
    io::write_f32(pd / "aux.f32", p.aux.data());
    io::write_f32(pd / "tar.f32", p.tar.data());
    const io::json meta = {{"id", p.id},
                           {"seed", p.seed},
                           {"h", p.tar.shape().h},
                           {"w", p.tar.shape().w},
                           {"generator_version", kPhantomGeneratorVersion}};
    io::write_json(pd / "meta.json", meta);
    entries.push_back({{"id", p.id}, {"seed", p.seed}, {"shape", {p.tar.shape().h, p.tar.shape().w}}});
    correlations.push_back(gradient_correlation(p.aux, p.tar));
  }
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(corpus_hash(pairs)));
  io::json manifest = {{"generator_version", kPhantomGeneratorVersion},
                       {"count", pairs.size()},
                       {"pairs", entries},
                       {"gradient_correlation_median", median(correlations)},
                       {"content_hash", hash}};
  io::write_json(dir / "manifest.json", manifest);
  return manifest;
}

inline ContrastPair read_pair(const std::filesystem::path& pair_dir) {
  const io::json meta = io::read_json(pair_dir / "meta.json");
  ContrastPair p;
  try {
    p.id = meta.at("id").get<std::string>();
    p.seed = meta.at("seed").get<std::uint64_t>();
    const int h = meta.at("h").get<int>();
    const int w = meta.at("w").get<int>();
    const Shape shape{1, 1, h, w};
    p.aux = Tensor<float>(shape, io::read_f32(pair_dir / "aux.f32", shape.size()));
    p.tar = Tensor<float>(shape, io::read_f32(pair_dir / "tar.f32", shape.size()));
  } catch (const io::json::exception& e) {
    throw LoadError("bad meta.json in " + pair_dir.string() + ": " + e.what());
  }
  return p;
}

inline std::vector<ContrastPair> read_corpus(const std::filesystem::path& dir) {
  const io::json manifest = io::read_json(dir / "manifest.json");
  std::vector<ContrastPair> pairs;
  try {
    for (const auto& e : manifest.at("pairs")) {
      const std::string id = e.at("id").get<std::string>();
      ContrastPair p = read_pair(dir / id);
      if (p.id != id) throw LoadError("entry " + id + ": meta.json names " + p.id);
      pairs.push_back(std::move(p));
    }
  } catch (const io::json::exception& e) {
    throw LoadError("bad manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  return pairs;
}

}  // namespace fsmnet
