#pragma once

// Dense 3D grids, trilinear sampling with analytic derivatives, warping and
// finite-difference Jacobians of displacement fields.
//
// All coordinates are in voxel units. Grid storage is x-fastest:
// index = x + nx * (y + ny * z).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdwi/error.hpp"

namespace mcdwi {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 v) { return v *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

struct Dims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  constexpr std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  constexpr std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
  }
  constexpr int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const {
    return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
  }
};

// Voxel size in mm. Carried as metadata; all computations are in voxel units.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) {
    throw DimensionMismatch(std::string(what) + ": dimension mismatch (" + a.str() + " vs " + b.str() + ")");
  }
}

// A dense grid of values. The element type selects the role: double for
// scalar images, Vec3 for displacement fields, uint8_t for masks.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  explicit Grid(Dims dims, T fill = T{}, Spacing spacing = {}) : dims_(dims), spacing_(spacing) {
    check_dims(dims);
    data_.assign(dims.count(), fill);
  }

  Grid(Dims dims, std::vector<T> data, Spacing spacing = {})
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_dims(dims);
    if (data_.size() != dims.count()) {
      throw DimensionMismatch("grid data length " + std::to_string(data_.size()) + " does not match dims " +
                              dims.str());
    }
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(Spacing s) { spacing_ = s; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int x, int y, int z) { return data_[dims_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static void check_dims(const Dims& d) {
    if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw InvalidArgument("grid dims must all be >= 1, got " + d.str());
  }

  Dims dims_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

using ScalarVolume = Grid<double>;
using DisplacementField = Grid<Vec3>;
using RoiMask = Grid<std::uint8_t>;

inline std::size_t roi_count(const RoiMask& roi) {
  return static_cast<std::size_t>(std::count_if(roi.data().begin(), roi.data().end(), [](auto v) { return v != 0; }));
}

inline double max_value(const ScalarVolume& v) { return *std::max_element(v.data().begin(), v.data().end()); }
inline double min_value(const ScalarVolume& v) { return *std::min_element(v.data().begin(), v.data().end()); }

// One volume per b-value, sorted ascending with b[0] == 0.
class BValueSeries {
 public:
  BValueSeries() = default;

  BValueSeries(std::vector<double> bvalues, std::vector<ScalarVolume> volumes)
      : bvalues_(std::move(bvalues)), volumes_(std::move(volumes)) {
    if (bvalues_.size() < 2) throw InvalidArgument("a b-value series needs at least two b-values");
    if (bvalues_.size() != volumes_.size()) throw DimensionMismatch("b-value count does not match volume count");
    if (bvalues_.front() != 0.0) throw InvalidArgument("first b-value must be 0");
    for (std::size_t i = 1; i < bvalues_.size(); ++i) {
      if (!(bvalues_[i] > bvalues_[i - 1])) throw InvalidArgument("b-values must be strictly increasing");
    }
    for (const auto& v : volumes_) {
      require_same_dims(v.dims(), volumes_.front().dims(), "b-value series");
      for (double s : v.data()) {
        if (!(s >= 0.0)) throw InvalidArgument("signal values must be non-negative and finite");
      }
    }
  }

  std::size_t size() const { return bvalues_.size(); }
  const Dims& dims() const { return volumes_.front().dims(); }
  std::span<const double> bvalues() const { return bvalues_; }
  double bvalue(std::size_t i) const { return bvalues_[i]; }
  const ScalarVolume& operator[](std::size_t i) const { return volumes_[i]; }
  const std::vector<ScalarVolume>& volumes() const { return volumes_; }

  friend bool operator==(const BValueSeries&, const BValueSeries&) = default;

 private:
  std::vector<double> bvalues_;
  std::vector<ScalarVolume> volumes_;
};

namespace detail {

// Per-axis interpolation stencil: lower index, upper index, fractional weight
// of the upper index, and whether the coordinate moves the sample (false when
// clamped or when the axis has a single voxel).
struct AxisStencil {
  int i0;
  int i1;
  double t;
  bool live;
};

// Exact at t = 0 and t = 1, so on-grid samples reproduce voxel values.
inline double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

inline AxisStencil axis_stencil(double c, int n) {
  if (n == 1) return {0, 0, 0.0, false};
  bool live = true;
  const double hi = static_cast<double>(n - 1);
  if (c < 0.0) {
    c = 0.0;
    live = false;
  } else if (c > hi) {
    c = hi;
    live = false;
  }
  int i0 = static_cast<int>(std::floor(c));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, c - i0, live};
}

}  // namespace detail

struct SampleWithGradient {
  double value;
  Vec3 gradient;  // d value / d point
};

// Trilinear interpolation with clamp-to-edge outside the grid.
inline double trilinear_sample(const ScalarVolume& vol, const Vec3& p) {
  const Dims& d = vol.dims();
  const auto sx = detail::axis_stencil(p.x, d.nx);
  const auto sy = detail::axis_stencil(p.y, d.ny);
  const auto sz = detail::axis_stencil(p.z, d.nz);
  const double* v = vol.data().data();
  const std::size_t sy_stride = static_cast<std::size_t>(d.nx);
  const std::size_t sz_stride = sy_stride * static_cast<std::size_t>(d.ny);
  const std::size_t b00 = d.index(sx.i0, sy.i0, sz.i0);
  const std::size_t dx = static_cast<std::size_t>(sx.i1 - sx.i0);
  const std::size_t dy = (sy.i1 - sy.i0) * sy_stride;
  const std::size_t dz = (sz.i1 - sz.i0) * sz_stride;

  using detail::lerp;
  const double c00 = lerp(v[b00], v[b00 + dx], sx.t);
  const double c10 = lerp(v[b00 + dy], v[b00 + dy + dx], sx.t);
  const double c01 = lerp(v[b00 + dz], v[b00 + dz + dx], sx.t);
  const double c11 = lerp(v[b00 + dz + dy], v[b00 + dz + dy + dx], sx.t);
  return lerp(lerp(c00, c10, sy.t), lerp(c01, c11, sy.t), sz.t);
}

// Same sample plus its derivative with respect to the sampling point. Within
// an interpolation cell the derivative is exact; on a cell face the upper
// cell's one-sided derivative is returned; clamped axes contribute zero.
inline SampleWithGradient trilinear_sample_with_gradient(const ScalarVolume& vol, const Vec3& p) {
  const Dims& d = vol.dims();
  const auto sx = detail::axis_stencil(p.x, d.nx);
  const auto sy = detail::axis_stencil(p.y, d.ny);
  const auto sz = detail::axis_stencil(p.z, d.nz);
  const double* v = vol.data().data();
  const std::size_t sy_stride = static_cast<std::size_t>(d.nx);
  const std::size_t sz_stride = sy_stride * static_cast<std::size_t>(d.ny);
  const std::size_t b000 = d.index(sx.i0, sy.i0, sz.i0);
  const std::size_t dx = static_cast<std::size_t>(sx.i1 - sx.i0);
  const std::size_t dy = (sy.i1 - sy.i0) * sy_stride;
  const std::size_t dz = (sz.i1 - sz.i0) * sz_stride;

  const double v000 = v[b000], v100 = v[b000 + dx];
  const double v010 = v[b000 + dy], v110 = v[b000 + dy + dx];
  const double v001 = v[b000 + dz], v101 = v[b000 + dz + dx];
  const double v011 = v[b000 + dz + dy], v111 = v[b000 + dz + dy + dx];

  using detail::lerp;
  const double tx = sx.t, ty = sy.t, tz = sz.t;
  const double c00 = lerp(v000, v100, tx);
  const double c10 = lerp(v010, v110, tx);
  const double c01 = lerp(v001, v101, tx);
  const double c11 = lerp(v011, v111, tx);
  const double c0 = lerp(c00, c10, ty);
  const double c1 = lerp(c01, c11, ty);

  SampleWithGradient out{lerp(c0, c1, tz), {}};
  if (sz.live) out.gradient.z = c1 - c0;
  if (sy.live) out.gradient.y = (c10 - c00) + tz * ((c11 - c01) - (c10 - c00));
  if (sx.live) {
    const double e00 = v100 - v000, e10 = v110 - v010, e01 = v101 - v001, e11 = v111 - v011;
    const double e0 = e00 + ty * (e10 - e00);
    const double e1 = e01 + ty * (e11 - e01);
    out.gradient.x = e0 + tz * (e1 - e0);
  }
  return out;
}

inline Vec3 voxel_point(const Dims& d, std::size_t i) {
  const std::size_t nx = static_cast<std::size_t>(d.nx), ny = static_cast<std::size_t>(d.ny);
  return {static_cast<double>(i % nx), static_cast<double>((i / nx) % ny), static_cast<double>(i / (nx * ny))};
}

// output(p) = vol(p + u(p)).
inline ScalarVolume warp(const ScalarVolume& vol, const DisplacementField& field) {
  require_same_dims(vol.dims(), field.dims(), "warp");
  ScalarVolume out(vol.dims(), 0.0, vol.spacing());
  const Dims& d = vol.dims();
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++i) {
        const Vec3& u = field[i];
        out[i] = trilinear_sample(vol, {x + u.x, y + u.y, z + u.z});
      }
    }
  }
  return out;
}

// Vector-valued trilinear sample of a displacement field, clamp-to-edge.
inline Vec3 trilinear_sample(const DisplacementField& field, const Vec3& p) {
  const Dims& d = field.dims();
  const auto sx = detail::axis_stencil(p.x, d.nx);
  const auto sy = detail::axis_stencil(p.y, d.ny);
  const auto sz = detail::axis_stencil(p.z, d.nz);
  Vec3 out{};
  for (int cz = 0; cz < 2; ++cz) {
    const double wz = cz ? sz.t : 1.0 - sz.t;
    const int iz = cz ? sz.i1 : sz.i0;
    for (int cy = 0; cy < 2; ++cy) {
      const double wy = cy ? sy.t : 1.0 - sy.t;
      const int iy = cy ? sy.i1 : sy.i0;
      for (int cx = 0; cx < 2; ++cx) {
        const double wx = cx ? sx.t : 1.0 - sx.t;
        const int ix = cx ? sx.i1 : sx.i0;
        out += (wx * wy * wz) * field.at(ix, iy, iz);
      }
    }
  }
  return out;
}

// Field equivalent to warping by `first` and then by `second`:
// vol∘first∘second (p) = vol(p + second(p) + first(p + second(p))).
inline DisplacementField compose_fields(const DisplacementField& first, const DisplacementField& second) {
  require_same_dims(first.dims(), second.dims(), "compose_fields");
  DisplacementField out(first.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3 q = voxel_point(out.dims(), i) + second[i];
    out[i] = second[i] + trilinear_sample(first, q);
  }
  return out;
}

// jac[c][a] = d u_c / d axis_a.
struct Jacobian {
  std::array<std::array<double, 3>, 3> d{};
  double frobenius_sq() const {
    double s = 0.0;
    for (const auto& row : d) {
      for (double v : row) s += v * v;
    }
    return s;
  }
};

namespace detail {

// Finite difference of a strided sequence at position i: central in the
// interior, one-sided at the ends, zero for a single sample.
template <typename Get>
double axis_difference(int i, int n, Get&& get) {
  if (n == 1) return 0.0;
  if (i == 0) return get(1) - get(0);
  if (i == n - 1) return get(n - 1) - get(n - 2);
  return 0.5 * (get(i + 1) - get(i - 1));
}

}  // namespace detail

inline std::vector<Jacobian> spatial_gradient(const DisplacementField& field) {
  const Dims& d = field.dims();
  std::vector<Jacobian> jac(field.size());
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++i) {
        for (int c = 0; c < 3; ++c) {
          jac[i].d[c][0] = detail::axis_difference(x, d.nx, [&](int k) { return field.at(k, y, z)[c]; });
          jac[i].d[c][1] = detail::axis_difference(y, d.ny, [&](int k) { return field.at(x, k, z)[c]; });
          jac[i].d[c][2] = detail::axis_difference(z, d.nz, [&](int k) { return field.at(x, y, k)[c]; });
        }
      }
    }
  }
  return jac;
}

struct NormalizedSeries {
  BValueSeries series;
  double scale;
};

// Divides every volume by max(S_0). Fitted ADC is unchanged; log S0 shifts
// by -log(scale).
inline NormalizedSeries normalize_series(const BValueSeries& series) {
  const double scale = max_value(series[0]);
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DegenerateSeries();
  if (scale == 1.0) return {series, 1.0};
  std::vector<ScalarVolume> vols;
  vols.reserve(series.size());
  for (const auto& v : series.volumes()) {
    ScalarVolume n = v;
    for (double& s : n.data()) s /= scale;
    vols.push_back(std::move(n));
  }
  return {BValueSeries(std::vector<double>(series.bvalues().begin(), series.bvalues().end()), std::move(vols)), scale};
}

}  // namespace mcdwi
