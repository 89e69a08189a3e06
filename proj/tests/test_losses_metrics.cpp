#include <gtest/gtest.h>

#include "support.hpp"

using namespace fsmnet;
using fsmnet::testing::brute_dft2c;
using fsmnet::testing::brute_ssim;
using fsmnet::testing::cd;
using fsmnet::testing::check_gradients;
using fsmnet::testing::random_tensor;

namespace {

using V = ag::Var<double>;

double brute_l1(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Frequency loss recomputed plane by plane with the O(N^2) DFT.
double brute_frequency_loss(const Tensor<double>& a, const Tensor<double>& b) {
  const Shape s = a.shape();
  double amp = 0.0, phase = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      std::vector<cd> pa(a.plane(n, c), a.plane(n, c) + s.plane());
      std::vector<cd> pb(b.plane(n, c), b.plane(n, c) + s.plane());
      const auto fa = brute_dft2c(pa, s.h, s.w, false);
      const auto fb = brute_dft2c(pb, s.h, s.w, false);
      // Self-conjugate bins are real; drop rounding residue so negative reals sit at +pi.
      const auto angle = [](cd z) { return std::arg(std::abs(z.imag()) < 1e-12 ? cd(z.real(), 0.0) : z); };
      for (std::size_t i = 0; i < fa.size(); ++i) {
        amp += std::abs(std::abs(fa[i]) - std::abs(fb[i]));
        phase += std::abs(angle(fa[i]) - angle(fb[i]));
      }
    }
  }
  return (amp + phase) / static_cast<double>(s.size());
}

ReconOutput<double> recon_of(const Tensor<double>& spa, const Tensor<double>& fre) {
  return {V(spa, true), V(fre, true)};
}

}  // namespace

TEST(PixelLoss, Examples) {
  const auto gt = random_tensor<double>({2, 1, 8, 8}, 1, 0.0, 1.0);
  EXPECT_EQ(pixel_loss(ag::constant(gt), ag::constant(gt), ag::constant(gt)).item(), 0.0);
  auto shifted = gt;
  for (auto& v : shifted.data()) v += 1.0;
  EXPECT_NEAR(pixel_loss(ag::constant(shifted), ag::constant(gt), ag::constant(gt)).item(), 1.0, 1e-12);
  const auto a = random_tensor<double>({2, 1, 8, 8}, 2);
  const auto b = random_tensor<double>({2, 1, 8, 8}, 3);
  EXPECT_NEAR(pixel_loss(ag::constant(a), ag::constant(b), ag::constant(gt)).item(), brute_l1(a, gt) + brute_l1(b, gt), 1e-12);
  EXPECT_THROW(pixel_loss(ag::constant(a), ag::constant(b), ag::constant(Tensor<double>({2, 1, 8, 4}))), ShapeMismatch);
}

TEST(FrequencyLoss, Examples) {
  const auto gt = random_tensor<double>({1, 1, 8, 8}, 4, 0.1, 1.0);
  EXPECT_NEAR(frequency_loss(ag::constant(gt), ag::constant(gt)).item(), 0.0, 1e-12);

  auto twice = gt;
  for (auto& v : twice.data()) v *= 2.0;
  double mean_amp = 0.0;
  const auto spectrum = fft2c(gt);
  for (const auto& v : spectrum.data()) mean_amp += std::abs(v);
  mean_amp /= static_cast<double>(gt.size());
  EXPECT_NEAR(frequency_loss(ag::constant(twice), ag::constant(gt)).item(), mean_amp, 1e-9);

  const auto a = random_tensor<double>({2, 2, 8, 8}, 5, 0.0, 1.0);
  const auto b = random_tensor<double>({2, 2, 8, 8}, 6, 0.0, 1.0);
  EXPECT_NEAR(frequency_loss(ag::constant(a), ag::constant(b)).item(), brute_frequency_loss(a, b), 1e-6);
}

TEST(Losses, SymmetricAndNonNegative) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor<double>({1, 1, 8, 8}, 10 + seed, 0.0, 1.0);
    const auto b = random_tensor<double>({1, 1, 8, 8}, 20 + seed, 0.0, 1.0);
    const double ab = frequency_loss(ag::constant(a), ag::constant(b)).item();
    const double ba = frequency_loss(ag::constant(b), ag::constant(a)).item();
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GT(ab, 0.0);
    const double pab = pixel_loss(ag::constant(a), ag::constant(a), ag::constant(b)).item();
    const double pba = pixel_loss(ag::constant(b), ag::constant(b), ag::constant(a)).item();
    EXPECT_EQ(pab, pba);
    EXPECT_GT(pab, 0.0);
  }
}

TEST(TotalLoss, Composition) {
  const auto gt = random_tensor<double>({1, 1, 8, 8}, 30, 0.0, 1.0);
  const auto perfect = total_loss(recon_of(gt, gt), ag::constant(gt));
  EXPECT_EQ(perfect.pixel.item(), 0.0);
  EXPECT_NEAR(perfect.frequency.item(), 0.0, 1e-12);
  EXPECT_NEAR(perfect.total.item(), 0.0, 1e-12);

  const auto a = random_tensor<double>({1, 1, 8, 8}, 31, 0.0, 1.0);
  const auto b = random_tensor<double>({1, 1, 8, 8}, 32, 0.0, 1.0);
  const auto l = total_loss(recon_of(a, b), ag::constant(gt));
  EXPECT_EQ(l.lambda, 0.01);
  EXPECT_EQ(l.total.item(), l.pixel.item() + 0.01 * l.frequency.item());
  const auto l0 = total_loss(recon_of(a, b), ag::constant(gt), 0.0);
  EXPECT_EQ(l0.total.item(), l0.pixel.item());
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  const V spa(random_tensor<double>({1, 1, 8, 8}, 40, 0.0, 1.0), true);
  const V fre(random_tensor<double>({1, 1, 8, 8}, 41, 0.0, 1.0), true);
  const auto gt = ag::constant(random_tensor<double>({1, 1, 8, 8}, 42, 0.0, 1.0));
  const auto r = check_gradients({{"i_spa", spa}, {"i_fre", fre}},
                                 [&] { return total_loss(ReconOutput<double>{spa, fre}, gt).total; }, 100, 43);
  EXPECT_EQ(r.failed, 0) << r.max_rel << " " << r.worst;
}

TEST(Psnr, ClosedFormAndIdentity) {
  const Tensor<double> ref(Shape{1, 1, 16, 16}, 0.5);
  Tensor<double> x = ref;
  for (auto& v : x.data()) v += 0.1;
  EXPECT_NEAR(psnr(x, ref), 20.0, 1e-9);
  EXPECT_TRUE(std::isinf(psnr(ref, ref)));
  EXPECT_THROW(psnr(x, Tensor<double>(Shape{1, 1, 16, 16})), InvalidInput);
  EXPECT_THROW(psnr(x, Tensor<double>(Shape{1, 1, 8, 16}, 1.0)), ShapeMismatch);
}

TEST(Psnr, DecreasesWithNoise) {
  const auto ref = random_tensor<double>({1, 1, 32, 32}, 50, 0.0, 1.0);
  const auto noise = random_tensor<double>({1, 1, 32, 32}, 51);
  double last = std::numeric_limits<double>::infinity();
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    auto x = ref;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += amp * noise[i];
    const double p = psnr(x, ref);
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Ssim, SelfComparisonIsOne) {
  const auto ref = random_tensor<double>({2, 1, 24, 24}, 60, 0.0, 1.0);
  EXPECT_EQ(ssim(ref, ref), 1.0);
}

TEST(Ssim, MatchesSlidingWindowOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto a = random_tensor<double>({1, 1, 32, 32}, 70 + seed, 0.0, 1.0);
    auto b = a;
    const auto n = random_tensor<double>({1, 1, 32, 32}, 80 + seed);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + 0.2 * n[i], 0.0, 1.0);
    const std::vector<double> va(a.data().begin(), a.data().end());
    const std::vector<double> vb(b.data().begin(), b.data().end());
    EXPECT_NEAR(ssim(b, a), brute_ssim(vb, va, 32, 32), 1e-6);
  }
  const auto a = random_tensor<double>({1, 1, 13, 20}, 90, 0.0, 1.0);
  const auto b = random_tensor<double>({1, 1, 13, 20}, 91, 0.0, 1.0);
  EXPECT_NEAR(ssim(a, b), brute_ssim({b.data().begin(), b.data().end()}, {a.data().begin(), a.data().end()}, 13, 20), 1e-6);
}

TEST(Ssim, RejectsSmallImages) {
  const Tensor<double> x(Shape{1, 1, 10, 16}, 0.5);
  EXPECT_THROW(ssim(x, x), UnsupportedShape);
}

TEST(EvalNormalization, UsesReferenceRange) {
  Tensor<double> ref(Shape{1, 1, 1, 4});
  Tensor<double> x(Shape{1, 1, 1, 4});
  const double r[] = {2.0, 4.0, 6.0, 3.0};
  const double p[] = {1.0, 4.0, 7.0, 5.0};
  for (int i = 0; i < 4; ++i) {
    ref[static_cast<std::size_t>(i)] = r[i];
    x[static_cast<std::size_t>(i)] = p[i];
  }
  const auto [xn, rn] = normalize_for_eval(x, ref);
  EXPECT_EQ(rn[0], 0.0);
  EXPECT_EQ(rn[2], 1.0);
  EXPECT_EQ(xn[0], 0.0);
  EXPECT_EQ(xn[1], 0.5);
  EXPECT_EQ(xn[2], 1.0);
  EXPECT_EQ(xn[3], 0.75);
  EXPECT_THROW(normalize_for_eval(x, Tensor<double>(Shape{1, 1, 1, 4}, 2.0)), InvalidInput);
}

TEST(Summary, PopulationStatistics) {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
}
