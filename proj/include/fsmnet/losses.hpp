#pragma once

// Training objective: pixel L1 on both reconstructions plus a Fourier
// amplitude/phase L1 on the frequency-branch output, weighted by lambda.
// All L1 terms are mean-reduced. Phase differences are raw (no 2*pi wrap).

#include "fsmnet/model.hpp"

namespace fsmnet {

inline constexpr double kFrequencyLossWeight = 0.01;

template <typename T>
struct LossBreakdown {
  ag::Var<T> pixel;
  ag::Var<T> frequency;
  ag::Var<T> total;  ///< pixel + lambda * frequency
  T lambda = static_cast<T>(kFrequencyLossWeight);
};

template <typename T>
ag::Var<T> pixel_loss(const ag::Var<T>& i_spa, const ag::Var<T>& i_fre, const ag::Var<T>& i_full) {
  return ag::add(ag::l1_mean(i_spa, i_full), ag::l1_mean(i_fre, i_full));
}

template <typename T>
ag::Var<T> frequency_loss(const ag::Var<T>& i_fre, const ag::Var<T>& i_full) {
  require_same_shape(i_fre.shape(), i_full.shape(), "frequency_loss");
  const int c = i_fre.shape().c;
  const ag::Var<T> pred = ag::spectrum_polar(i_fre, "frequency_loss/prediction");
  const ag::Var<T> ref = ag::spectrum_polar(i_full, "frequency_loss/reference");
  return ag::add(ag::l1_mean(ag::slice_channels(pred, 0, c), ag::slice_channels(ref, 0, c)),
                 ag::l1_mean(ag::slice_channels(pred, c, c), ag::slice_channels(ref, c, c)));
}

template <typename T>
LossBreakdown<T> total_loss(const ReconOutput<T>& recon, const ag::Var<T>& i_full,
                            T lambda = static_cast<T>(kFrequencyLossWeight)) {
  require_same_shape(recon.i_spa.shape(), i_full.shape(), "total_loss");
  LossBreakdown<T> b;
  b.lambda = lambda;
  b.pixel = pixel_loss(recon.i_spa, recon.i_fre, i_full);
  b.frequency = frequency_loss(recon.i_fre, i_full);
  b.total = ag::add(b.pixel, ag::scale(b.frequency, lambda));
  return b;
}

}  // namespace fsmnet
