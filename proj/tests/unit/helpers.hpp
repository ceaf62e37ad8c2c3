#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mcdwi/signal_model.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi::testing {

inline const std::vector<double> kBValues{0, 50, 100, 200, 400, 600};

// x + 2y + 3z, handy for exact interpolation checks.
inline ScalarVolume ramp_volume(Dims d, double ax = 1.0, double ay = 2.0, double az = 3.0) {
  ScalarVolume v(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) v.at(x, y, z) = ax * x + ay * y + az * z;
  return v;
}

inline ScalarVolume random_volume(Dims d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ScalarVolume v(d);
  for (double& x : v.data()) x = u(rng);
  return v;
}

// Smooth positive volume: a few low-frequency cosines around a base level.
inline ScalarVolume smooth_volume(Dims d, std::uint64_t seed, double base = 1.0, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 6.283185307179586);
  const double p1 = u(rng), p2 = u(rng), p3 = u(rng);
  ScalarVolume v(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        v.at(x, y, z) = base + amp * (std::cos(0.31 * x + p1) * std::cos(0.23 * y + p2) + 0.5 * std::cos(0.41 * z + 0.17 * x + p3));
      }
  return v;
}

inline DisplacementField random_field(Dims d, std::uint64_t seed, double amp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  DisplacementField f(d);
  for (auto& v : f.data()) v = {u(rng), u(rng), u(rng)};
  return f;
}

inline BValueSeries model_series(const ParameterMaps& maps, const std::vector<double>& b = kBValues) {
  return reconstruct(maps, b);
}

inline ParameterMaps constant_maps(Dims d, double s0, double adc) {
  return {ScalarVolume(d, std::log(s0)), ScalarVolume(d, adc)};
}

inline ParameterMaps smooth_maps(Dims d, std::uint64_t seed) {
  ParameterMaps m{smooth_volume(d, seed, 0.0, 0.2), smooth_volume(d, seed + 1, 2.0e-3, 5e-4)};
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace mcdwi::testing
