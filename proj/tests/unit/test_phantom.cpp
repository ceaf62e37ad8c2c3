#include <gtest/gtest.h>

#include <cmath>

#include "mcdwi/phantom.hpp"

using namespace mcdwi;

namespace {

PhantomSpec spec(Dims d = {32, 28, 12}) {
  PhantomSpec s;
  s.dims = d;
  s.seed = 3;
  return s;
}

}  // namespace

TEST(PhantomSpec, Validation) {
  PhantomSpec s = spec();
  EXPECT_NO_THROW(s.validate());
  s.noise_sigma = -1;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = spec();
  s.roi_radii = {40, 3, 3};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = spec();
  s.outlier_index = 6;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = spec();
  s.dims = {0, 4, 4};
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(MakePhantom, RoiIsInsideLungAndMapsHaveExpectedLevels) {
  const PhantomSpec s = spec();
  const PhantomTruth t = make_phantom(s);
  const PhantomModel m(s);
  EXPECT_GT(roi_count(t.roi), 100u);
  for (std::size_t i = 0; i < t.roi.size(); ++i) {
    if (!t.roi[i]) continue;
    EXPECT_GT(m.lung_fraction(voxel_point(s.dims, i)), 0.85);
    EXPECT_GT(t.maps.adc[i], 0.85 * s.lung_adc + 0.15 * s.background_adc - 1e-15);
    EXPECT_LE(t.maps.adc[i], s.lung_adc);
  }
  EXPECT_NEAR(t.maps.adc.at(0, 0, 0), s.background_adc, 1e-6);
  const double mean = roi_mean(t.maps.adc, t.roi);
  EXPECT_GT(mean, 0.9 * s.lung_adc);
}

TEST(MakePhantom, SignedDistanceSign) {
  const PhantomSpec s = spec();
  const PhantomModel m(s);
  const Vec3 c = s.center(), r = s.radii();
  EXPECT_LT(m.signed_distance(c), 0);
  EXPECT_NEAR(m.signed_distance(c + Vec3{r.x, 0, 0}), 0.0, 1e-12);
  EXPECT_NEAR(m.signed_distance(c + Vec3{r.x + 2, 0, 0}), 2.0, 1e-9);
  EXPECT_GT(m.signed_distance(Vec3{0, 0, 0}), 0);
}

TEST(MakePhantom, Deterministic) {
  const PhantomTruth a = make_phantom(spec()), b = make_phantom(spec());
  EXPECT_EQ(a.maps.adc, b.maps.adc);
  EXPECT_EQ(a.maps.log_s0, b.maps.log_s0);
  EXPECT_EQ(a.roi, b.roi);
  PhantomSpec other = spec();
  other.seed = 4;
  EXPECT_NE(make_phantom(other).maps.log_s0, a.maps.log_s0);
}

TEST(NoiselessSeries, FollowsModel) {
  const PhantomTruth t = make_phantom(spec());
  const BValueSeries s = noiseless_series(t.maps, default_bvalues());
  ASSERT_EQ(s.size(), 6u);
  for (std::size_t b = 0; b < s.size(); ++b)
    for (std::size_t i = 0; i < s[b].size(); i += 97)
      EXPECT_NEAR(s[b][i], std::exp(t.maps.log_s0[i] - default_bvalues()[b] * t.maps.adc[i]), 1e-14);
}

TEST(AddNoise, ZeroSigmaIsIdentityAndNoiseHasRequestedSpread) {
  const PhantomTruth t = make_phantom(spec({40, 40, 10}));
  const BValueSeries clean = noiseless_series(t.maps, default_bvalues());
  EXPECT_EQ(add_noise(clean, 0.0, 1), clean);
  const BValueSeries noisy = add_noise(clean, 0.02, 1);
  const double sd = 0.02 * max_value(clean[0]);
  double acc = 0, acc2 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < clean[0].size(); ++i) {
    const double e = noisy[0][i] - clean[0][i];
    acc += e;
    acc2 += e * e;
    ++n;
  }
  EXPECT_NEAR(acc / n, 0.0, 5 * sd / std::sqrt(double(n)));
  EXPECT_NEAR(std::sqrt(acc2 / n), sd, 0.05 * sd);
  for (std::size_t b = 0; b < noisy.size(); ++b)
    for (double v : noisy[b].data()) EXPECT_GE(v, 0.0);
  EXPECT_EQ(add_noise(clean, 0.02, 1), noisy);
  EXPECT_THROW(add_noise(clean, -0.1, 1), InvalidArgument);
}

TEST(RandomSmoothField, PeakMatchesAmplitude) {
  const Dims d{24, 20, 10};
  const DisplacementField u = random_smooth_field(d, 3.0, 12.0, 5);
  double peak = 0;
  for (const auto& v : u.data()) peak = std::max(peak, v.norm());
  EXPECT_NEAR(peak, 3.0, 1e-12);
  EXPECT_EQ(random_smooth_field(d, 0.0, 12.0, 5), DisplacementField(d));
  EXPECT_EQ(random_smooth_field(d, 3.0, 12.0, 5), u);
  // Smooth: neighbouring displacements differ by much less than the peak.
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 1; x < d.nx; ++x) EXPECT_LT((u.at(x, y, z) - u.at(x - 1, y, z)).norm(), 1.5);
}

TEST(ApplySyntheticMotion, ReferenceStaysAndOthersAreWarped) {
  PhantomSpec s = spec();
  s.motion_amplitude = 2.0;
  const PhantomTruth t = make_phantom(s);
  const BValueSeries clean = noiseless_series(t.maps, s.bvalues);
  const MotionResult m = apply_synthetic_motion(clean, s, 7);
  EXPECT_EQ(m.series[0], clean[0]);
  EXPECT_EQ(m.true_fields[0], DisplacementField(s.dims));
  for (std::size_t b = 1; b < clean.size(); ++b) {
    EXPECT_EQ(m.series[b], warp(clean[b], m.true_fields[b]));
    EXPECT_NE(m.series[b], clean[b]);
  }
}

TEST(SimulateCase, StaticNoiselessMatchesTruth) {
  PhantomSpec s = spec();
  s.noise_sigma = 0;
  const PhantomCase pc = simulate_case(s);
  EXPECT_EQ(pc.observed, pc.clean);
  const double truth_mean = roi_mean(pc.truth.maps.adc, pc.truth.roi);
  // ROI-mean signal of a slightly heterogeneous ROI is close to mono-exponential.
  EXPECT_NEAR(pc.reference_adc, truth_mean, 0.02 * truth_mean);
}

TEST(SimulateCase, MotionEvaluatesContinuousModel) {
  PhantomSpec s = spec();
  s.noise_sigma = 0;
  s.motion_amplitude = 3.0;
  const PhantomCase pc = simulate_case(s);
  const PhantomModel m(s);
  for (std::size_t b = 1; b < 6; ++b) {
    double peak = 0;
    for (const auto& v : pc.true_fields[b].data()) peak = std::max(peak, v.norm());
    EXPECT_NEAR(peak, 3.0, 1e-12);
    for (std::size_t i = 0; i < pc.observed[b].size(); i += 131) {
      const Vec3 p = voxel_point(s.dims, i) + pc.true_fields[b][i];
      EXPECT_DOUBLE_EQ(pc.observed[b][i], m.signal(p, s.bvalues[b]));
    }
  }
  // Interpolating the clean grid should agree closely with the continuous model.
  const ScalarVolume w = warp(pc.clean[3], pc.true_fields[3]);
  double err = 0;
  for (std::size_t i = 0; i < w.size(); ++i) err = std::max(err, std::abs(w[i] - pc.observed[3][i]));
  EXPECT_LT(err, 0.2 * max_value(pc.clean[3]));
  EXPECT_EQ(pc.observed[0], pc.clean[0]);
}

TEST(SimulateCase, OutlierScalesOneVolume) {
  PhantomSpec s = spec();
  s.noise_sigma = 0;
  s.outlier_index = 4;
  s.outlier_factor = 2.0;
  const PhantomCase pc = simulate_case(s);
  for (std::size_t b = 0; b < 6; ++b)
    for (std::size_t i = 0; i < pc.clean[b].size(); i += 53)
      EXPECT_DOUBLE_EQ(pc.observed[b][i], (b == 4 ? 2.0 : 1.0) * pc.clean[b][i]);
}

TEST(SimulateCase, SeedControlsEverything) {
  PhantomSpec s = spec();
  s.motion_amplitude = 2;
  s.noise_sigma = 0.02;
  const PhantomCase a = simulate_case(s), b = simulate_case(s);
  EXPECT_EQ(a.observed, b.observed);
  EXPECT_EQ(a.true_fields, b.true_fields);
  EXPECT_EQ(a.reference_adc, b.reference_adc);
  s.seed = 99;
  EXPECT_NE(simulate_case(s).observed, a.observed);
}

TEST(RoiMean, Basics) {
  const Dims d{3, 1, 1};
  ScalarVolume v(d);
  v[0] = 1;
  v[1] = 2;
  v[2] = 6;
  RoiMask roi(d);
  roi[1] = roi[2] = 1;
  EXPECT_DOUBLE_EQ(roi_mean(v, roi), 4.0);
  EXPECT_THROW(roi_mean(v, RoiMask(d)), EmptyRoi);
}
