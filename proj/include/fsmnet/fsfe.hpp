#pragma once

// Frequency-spatial feature extraction block.
//
// Spatial branch: K residual blocks x + conv(lrelu(conv(x))), 3x3 kernels.
// Frequency branch: fft2c -> amplitude/phase, each refined by
// p + conv1x1(lrelu(conv1x1(p))), recomposed and brought back with ifft2c
// (real part). Every frequency-domain coefficient depends on every input
// pixel, so this branch sees the whole image.

#include <string>
#include <vector>

#include "fsmnet/parameters.hpp"

namespace fsmnet {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
struct BranchPair {
  ag::Var<T> spatial;
  ag::Var<T> frequency;
};

template <typename T>
struct ResidualBlock {
  Conv2d<T> first;
  Conv2d<T> second;
};

template <typename T>
struct FsfeParams {
  int channels = 0;
  std::vector<ResidualBlock<T>> spatial;
  bool has_frequency = true;
  Conv2d<T> amp_in, amp_out;
  Conv2d<T> phase_in, phase_out;

  static FsfeParams create(ParameterStore<T>& ps, const std::string& prefix, int channels,
                           int residual_blocks, bool frequency) {
    FsfeParams p;
    p.channels = channels;
    p.has_frequency = frequency;
    for (int b = 0; b < residual_blocks; ++b) {
      const std::string name = prefix + ".spatial." + std::to_string(b);
      p.spatial.push_back({make_conv(ps, name + ".conv1", channels, channels, 3),
                           make_conv(ps, name + ".conv2", channels, channels, 3)});
    }
    if (frequency) {
      p.amp_in = make_conv(ps, prefix + ".freq.amp.conv1", channels, channels, 1);
      p.amp_out = make_conv(ps, prefix + ".freq.amp.conv2", channels, channels, 1);
      p.phase_in = make_conv(ps, prefix + ".freq.phase.conv1", channels, channels, 1);
      p.phase_out = make_conv(ps, prefix + ".freq.phase.conv2", channels, channels, 1);
    }
    return p;
  }
};

namespace detail {

template <typename T>
void check_channels(const ag::Var<T>& x, int channels, const char* what) {
  if (x.shape().c != channels) {
    throw ShapeMismatch(std::string(what) + ": expected " + std::to_string(channels) +
                        " channels, got " + x.shape().str());
  }
}

template <typename T>
ag::Var<T> residual_refine(const ag::Var<T>& x, const Conv2d<T>& a, const Conv2d<T>& b) {
  return ag::add(x, b(ag::leaky_relu(a(x), static_cast<T>(kLeakySlope))));
}

}  // namespace detail

template <typename T>
ag::Var<T> spatial_branch(const ag::Var<T>& x, const FsfeParams<T>& p) {
  detail::check_channels(x, p.channels, "spatial_branch");
  ag::Var<T> y = x;
  for (const auto& block : p.spatial) y = detail::residual_refine(y, block.first, block.second);
  return y;
}

template <typename T>
ag::Var<T> frequency_branch(const ag::Var<T>& x, const FsfeParams<T>& p) {
  detail::check_channels(x, p.channels, "frequency_branch");
  if (!p.has_frequency) return x;
  const int c = p.channels;
  const ag::Var<T> polar = ag::spectrum_polar(x, "frequency_branch/fft");
  const ag::Var<T> amp =
      detail::residual_refine(ag::slice_channels(polar, 0, c), p.amp_in, p.amp_out);
  const ag::Var<T> phase =
      detail::residual_refine(ag::slice_channels(polar, c, c), p.phase_in, p.phase_out);
  return ag::polar_to_image(ag::concat_channels(amp, phase), "frequency_branch/ifft");
}

/// Applies both branches independently; there is no cross-talk inside the block.
template <typename T>
BranchPair<T> fsfe_forward(const BranchPair<T>& in, const FsfeParams<T>& p) {
  require_same_shape(in.spatial.shape(), in.frequency.shape(), "fsfe_forward");
  return {spatial_branch(in.spatial, p), frequency_branch(in.frequency, p)};
}

}  // namespace fsmnet
