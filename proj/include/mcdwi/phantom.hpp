#pragma once

// Synthetic ground truth: an ellipsoidal "lung" with its own ADC/S0 inside a
// background tissue, mono-exponential series, smooth per-b-value motion,
// Gaussian noise, and GA/ADC cohorts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/maturity.hpp"
#include "mcdwi/signal_model.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

inline const std::vector<double>& default_bvalues() {
  static const std::vector<double> b{0.0, 50.0, 100.0, 200.0, 400.0, 600.0};
  return b;
}

struct PhantomSpec {
  Dims dims{96, 96, 16};
  std::vector<double> bvalues = default_bvalues();
  double lung_adc = 2.5e-3;
  double background_adc = 1.0e-3;
  double lung_s0 = 1.0;
  double background_s0 = 0.6;
  // Relative amplitude and wavelength (voxels) of the smooth S0 texture.
  double texture_amplitude = 0.2;
  double texture_scale = 8.0;
  // Ellipsoid in voxel coordinates; negative entries are derived from dims.
  Vec3 roi_center{-1.0, -1.0, -1.0};
  Vec3 roi_radii{-1.0, -1.0, -1.0};
  double boundary_width = 1.0;  // voxels
  // The ROI stops this far (voxels) inside the lung surface.
  double roi_inset = 1.0;
  double noise_sigma = 0.01;    // fraction of max S0
  double motion_amplitude = 0.0;  // max |u| in voxels, per moved b-value
  double motion_scale = 24.0;     // shortest motion wavelength, voxels
  // Multiplies one b-value volume by outlier_factor when >= 0.
  int outlier_index = -1;
  double outlier_factor = 2.0;
  std::uint64_t seed = 0;

  Vec3 center() const {
    return {roi_center.x >= 0 ? roi_center.x : 0.5 * (dims.nx - 1), roi_center.y >= 0 ? roi_center.y : 0.5 * (dims.ny - 1),
            roi_center.z >= 0 ? roi_center.z : 0.5 * (dims.nz - 1)};
  }
  Vec3 radii() const {
    return {roi_radii.x >= 0 ? roi_radii.x : 0.3125 * dims.nx, roi_radii.y >= 0 ? roi_radii.y : 0.25 * dims.ny,
            roi_radii.z >= 0 ? roi_radii.z : 0.375 * dims.nz};
  }

  void validate() const {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw InvalidArgument("phantom dims must be >= 1");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(motion_amplitude >= 0.0)) throw InvalidArgument("motion_amplitude must be >= 0");
    if (!(motion_scale > 0.0) || !(texture_scale > 0.0)) throw InvalidArgument("length scales must be > 0");
    if (!(boundary_width > 0.0)) throw InvalidArgument("boundary_width must be > 0");
    if (!(roi_inset >= 0.0)) throw InvalidArgument("roi_inset must be >= 0");
    if (!(lung_s0 > 0.0) || !(background_s0 >= 0.0)) throw InvalidArgument("S0 levels must be positive");
    const Vec3 c = center(), r = radii();
    for (int a = 0; a < 3; ++a) {
      if (!(r[a] > 0.0)) throw InvalidArgument("ROI radii must be > 0");
      if (c[a] - r[a] < -0.5 || c[a] + r[a] > dims[a] - 0.5) throw InvalidArgument("ROI ellipsoid out of bounds");
    }
    if (outlier_index >= static_cast<int>(bvalues.size())) throw InvalidArgument("outlier_index out of range");
  }
};

struct PhantomTruth {
  ParameterMaps maps;  // log S0 and ADC
  RoiMask roi;
};

namespace detail {

struct FourierMode {
  Vec3 k;  // radians per voxel
  double phase;
  double amp;
};

inline std::vector<FourierMode> random_modes(std::mt19937_64& rng, int count, double wavelength) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FourierMode> modes;
  for (int m = 0; m < count; ++m) {
    Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
    const double n = std::max(dir.norm(), 1e-12);
    // Wavelengths between wavelength and 2 * wavelength.
    const double kmag = 2.0 * std::numbers::pi / (wavelength * (1.0 + uni(rng)));
    modes.push_back({(kmag / n) * dir, 2.0 * std::numbers::pi * uni(rng), 0.5 + uni(rng)});
  }
  return modes;
}

inline double eval_modes(const std::vector<FourierMode>& modes, const Vec3& p) {
  double s = 0.0;
  for (const auto& m : modes) s += m.amp * std::cos(m.k.x * p.x + m.k.y * p.y + m.k.z * p.z + m.phase);
  return s;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Continuous phantom: evaluates log S0 and ADC at any point, so moved images
// can be generated without resampling blur.
class PhantomModel {
 public:
  explicit PhantomModel(const PhantomSpec& spec) : spec_(spec), center_(spec.center()), radii_(spec.radii()) {
    spec.validate();
    std::mt19937_64 rng(detail::mix_seed(spec.seed, 0));
    texture_ = detail::random_modes(rng, 8, spec.texture_scale);
    for (const auto& m : texture_) texture_norm_ += m.amp;
  }

  // First-order signed distance to the ellipsoid surface in voxels (negative inside).
  double signed_distance(const Vec3& p) const {
    const Vec3& c = center_;
    const Vec3& r = radii_;
    const Vec3 q{(p.x - c.x) / r.x, (p.y - c.y) / r.y, (p.z - c.z) / r.z};
    const double rho = q.norm();
    if (rho == 0.0) return -std::min({r.x, r.y, r.z});
    const Vec3 grad{q.x / r.x, q.y / r.y, q.z / r.z};
    return (rho - 1.0) * rho / grad.norm();
  }

  double lung_fraction(const Vec3& p) const {
    return 0.5 * (1.0 - std::tanh(signed_distance(p) / spec_.boundary_width));
  }

  double adc(const Vec3& p) const {
    return spec_.background_adc + (spec_.lung_adc - spec_.background_adc) * lung_fraction(p);
  }

  double s0(const Vec3& p) const {
    const double base = spec_.background_s0 + (spec_.lung_s0 - spec_.background_s0) * lung_fraction(p);
    return base * (1.0 + spec_.texture_amplitude * detail::eval_modes(texture_, p) / texture_norm_);
  }

  double signal(const Vec3& p, double b) const { return forward_signal(s0(p), adc(p), b); }

  bool in_roi(const Vec3& p) const { return signed_distance(p) <= -spec_.roi_inset; }

 private:
  PhantomSpec spec_;
  Vec3 center_, radii_;
  std::vector<detail::FourierMode> texture_;
  double texture_norm_ = 0.0;
};

inline PhantomTruth make_phantom(const PhantomSpec& spec) {
  const PhantomModel model(spec);
  const Dims& d = spec.dims;
  PhantomTruth out{{ScalarVolume(d), ScalarVolume(d)}, RoiMask(d)};
  for (std::size_t i = 0; i < d.count(); ++i) {
    const Vec3 p = voxel_point(d, i);
    out.maps.adc[i] = model.adc(p);
    out.maps.log_s0[i] = std::log(std::max(model.s0(p), 1e-12));
    out.roi[i] = model.in_roi(p) ? 1 : 0;
  }
  if (roi_count(out.roi) == 0) throw EmptyRoi();
  return out;
}

inline BValueSeries noiseless_series(const ParameterMaps& maps, std::span<const double> bvalues) {
  return reconstruct(maps, bvalues);
}

// Adds N(0, (sigma * max S0)^2) to every voxel and clips at zero.
inline BValueSeries add_noise(const BValueSeries& series, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  if (sigma == 0.0) return series;
  const double sd = sigma * max_value(series[0]);
  std::vector<ScalarVolume> vols;
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::mt19937_64 rng(detail::mix_seed(seed, 100 + i));
    std::normal_distribution<double> gauss(0.0, sd);
    ScalarVolume v = series[i];
    for (double& s : v.data()) s = std::max(0.0, s + gauss(rng));
    vols.push_back(std::move(v));
  }
  return BValueSeries(std::vector<double>(series.bvalues().begin(), series.bvalues().end()), std::move(vols));
}

inline BValueSeries simulate_series(const ParameterMaps& maps, const RoiMask& roi, std::span<const double> bvalues,
                                    double noise_sigma, std::uint64_t seed) {
  require_same_dims(maps.adc.dims(), roi.dims(), "simulate_series");
  return add_noise(noiseless_series(maps, bvalues), noise_sigma, seed);
}

// Smooth random field with max_p |u(p)| == amplitude.
inline DisplacementField random_smooth_field(const Dims& d, double amplitude, double scale, std::uint64_t seed) {
  DisplacementField u(d);
  if (amplitude == 0.0) return u;
  std::mt19937_64 rng(seed);
  std::array<std::vector<detail::FourierMode>, 3> modes;
  for (auto& m : modes) m = detail::random_modes(rng, 4, scale);
  double peak = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Vec3 p = voxel_point(d, i);
    u[i] = {detail::eval_modes(modes[0], p), detail::eval_modes(modes[1], p), detail::eval_modes(modes[2], p)};
    peak = std::max(peak, u[i].norm());
  }
  if (peak > 0.0) {
    for (auto& v : u.data()) v *= amplitude / peak;
  }
  return u;
}

// The random field that moves b-value index `bi` (> 0).
inline DisplacementField motion_field(const PhantomSpec& spec, std::uint64_t seed, std::size_t bi) {
  return random_smooth_field(spec.dims, spec.motion_amplitude, spec.motion_scale, detail::mix_seed(seed, 200 + bi));
}

struct MotionResult {
  BValueSeries series;
  std::vector<DisplacementField> true_fields;  // zero for b = 0
};

// Warps every b > 0 volume by its own smooth random field; b = 0 stays put.
inline MotionResult apply_synthetic_motion(const BValueSeries& series, const PhantomSpec& spec, std::uint64_t seed) {
  if (!(spec.motion_amplitude >= 0.0)) throw InvalidArgument("motion amplitude must be >= 0");
  MotionResult out;
  std::vector<ScalarVolume> vols;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (i == 0 || spec.motion_amplitude == 0.0) {
      out.true_fields.emplace_back(series.dims());
      vols.push_back(series[i]);
      continue;
    }
    out.true_fields.push_back(motion_field(spec, seed, i));
    vols.push_back(warp(series[i], out.true_fields.back()));
  }
  out.series = BValueSeries(std::vector<double>(series.bvalues().begin(), series.bvalues().end()), std::move(vols));
  return out;
}

struct PhantomCase {
  PhantomTruth truth;
  BValueSeries clean;     // noiseless and motion-free
  BValueSeries observed;  // moved, corrupted and noisy
  std::vector<DisplacementField> true_fields;
  double reference_adc;   // IRLS ADC of the clean ROI-mean signal
};

// Full generative chain: truth -> moved images -> outlier -> noise. Moved
// images are evaluated on the continuous phantom at p + u(p), which equals
// warping the clean series without interpolation blur.
inline PhantomCase simulate_case(const PhantomSpec& spec) {
  const PhantomModel model(spec);
  PhantomCase out{make_phantom(spec), {}, {}, {}, 0.0};
  out.clean = noiseless_series(out.truth.maps, spec.bvalues);
  const std::uint64_t motion_seed = detail::mix_seed(spec.seed, 1);
  std::vector<ScalarVolume> vols;
  for (std::size_t i = 0; i < spec.bvalues.size(); ++i) {
    if (i == 0 || spec.motion_amplitude == 0.0) {
      out.true_fields.emplace_back(spec.dims);
      vols.push_back(out.clean[i]);
      continue;
    }
    out.true_fields.push_back(motion_field(spec, motion_seed, i));
    const DisplacementField& u = out.true_fields.back();
    ScalarVolume v(spec.dims);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = model.signal(voxel_point(spec.dims, j) + u[j], spec.bvalues[i]);
    vols.push_back(std::move(v));
  }
  if (spec.outlier_index >= 0) {
    for (double& s : vols[static_cast<std::size_t>(spec.outlier_index)].data()) s *= spec.outlier_factor;
  }
  out.observed = add_noise(BValueSeries(spec.bvalues, std::move(vols)), spec.noise_sigma, detail::mix_seed(spec.seed, 2));
  out.reference_adc = irls_fit(roi_mean_signal(out.clean, out.truth.roi), spec.bvalues).adc;
  return out;
}

// Mean of the ground-truth ADC map over the ROI.
inline double roi_mean(const ScalarVolume& vol, const RoiMask& roi) {
  require_same_dims(vol.dims(), roi.dims(), "roi_mean");
  const std::size_t n = roi_count(roi);
  if (n == 0) throw EmptyRoi();
  double acc = 0.0;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (roi[i]) acc += vol[i];
  }
  return acc / static_cast<double>(n);
}

struct GaRange {
  double lo = 20.0;
  double hi = 38.0;
};

// GA ~ U(range); ADC = predict_adc(GA) + N(0, adc_noise^2).
inline std::vector<CohortPoint> make_cohort(int n, GaRange range, const SaturationFit& params, double adc_noise,
                                            std::uint64_t seed) {
  if (n < 3) throw InvalidArgument("make_cohort: need n >= 3");
  if (!(adc_noise >= 0.0)) throw InvalidArgument("make_cohort: adc_noise must be >= 0");
  std::mt19937_64 rng(detail::mix_seed(seed, 300));
  std::uniform_real_distribution<double> ga_dist(range.lo, range.hi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<CohortPoint> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double ga = range.hi > range.lo ? ga_dist(rng) : range.lo;
    const double eps = noise(rng);
    char id[32];
    std::snprintf(id, sizeof id, "case_%03d", i);
    pts.push_back({id, ga, predict_adc(ga, params) + adc_noise * eps, 1.0});
  }
  return pts;
}

}  // namespace mcdwi
