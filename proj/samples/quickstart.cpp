// Builds a small model, reconstructs one phantom at 4x and prints the metrics.

#include <iostream>

#include "fsmnet/fsmnet.hpp"

int main() {
  using namespace fsmnet;
  const ContrastPair pair = generate_pair(32, 7);
  const SamplingMask mask = make_mask(32, 32, 4.0, default_center_fraction(4.0), 0);
  const Tensor<float> zf = zero_fill(undersample(pair.tar, mask));

  ModelConfig cfg;
  cfg.base_channels = 4;
  const FsmNet<float> net = FsmNet<float>::build(cfg, 0);
  std::cout << "parameters: " << net.parameters().count() << "\n";

  ag::NoGradGuard no_grad;
  const ReconOutput<float> out = net.forward(zf, pair.aux);
  const auto [recon, ref] = normalize_for_eval(out.i_spa.value(), pair.tar);
  const auto [zfn, ref2] = normalize_for_eval(zf, pair.tar);
  std::cout << "untrained psnr " << psnr(recon, ref) << " dB, zero-filling " << psnr(zfn, ref2) << " dB\n";
}
