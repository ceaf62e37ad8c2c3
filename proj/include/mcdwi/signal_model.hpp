#pragma once

// Mono-exponential decay S(b) = S0 * exp(-b * ADC), fitted in the log domain
// with ordinary or iteratively reweighted least squares.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

inline constexpr double kDefaultLogFloor = 1e-6;
// Lower bound on |residual| in the IRLS weight update.
inline constexpr double kIrlsResidualFloor = 1e-4;

inline double forward_signal(double s0, double adc, double b) { return s0 * std::exp(-b * adc); }

inline double floored_log(double s, double floor_eps) { return std::log(std::max(s, floor_eps)); }

struct ParameterMaps {
  ScalarVolume log_s0;
  ScalarVolume adc;  // mm²/s
};

struct LineFit {
  double log_s0 = 0.0;
  double adc = 0.0;
};

// Weighted least-squares solution of log_signal_i ≈ log_s0 - b_i * adc using
// the explicit inverse of the 2x2 normal matrix (in centred form).
inline LineFit fit_log_line(std::span<const double> log_signal, std::span<const double> bvalues,
                            std::span<const double> weights) {
  const std::size_t n = bvalues.size();
  if (n < 2 || log_signal.size() != n || weights.size() != n) throw InvalidArgument("fit_log_line: length mismatch");
  double sw = 0.0, swb = 0.0, swy = 0.0, bmax2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += weights[i];
    swb += weights[i] * bvalues[i];
    swy += weights[i] * log_signal[i];
    bmax2 = std::max(bmax2, bvalues[i] * bvalues[i]);
  }
  if (!(sw > 0.0)) throw DegenerateDesign();
  const double bbar = swb / sw;
  const double ybar = swy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double db = bvalues[i] - bbar;
    sxx += weights[i] * db * db;
    sxy += weights[i] * db * (log_signal[i] - ybar);
  }
  if (!(sxx > 1e-12 * sw * bmax2) || !std::isfinite(sxx)) throw DegenerateDesign();
  const double adc = -sxy / sxx;
  return {ybar + adc * bbar, adc};
}

inline double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size() || observed.size() < 2) {
    throw InvalidArgument("r_squared: need two equal-length sequences of length >= 2");
  }
  const double mean = std::accumulate(observed.begin(), observed.end(), 0.0) / static_cast<double>(observed.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ss_tot += (observed[i] - mean) * (observed[i] - mean);
    ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
  }
  if (!(ss_tot > 0.0)) throw UndefinedRSquared();
  return 1.0 - ss_res / ss_tot;
}

// Per-voxel unweighted log-linear fit over every voxel of the series.
inline ParameterMaps lls_fit(const BValueSeries& series, double floor_eps = kDefaultLogFloor) {
  if (!(floor_eps > 0.0)) throw InvalidArgument("lls_fit: floor_eps must be positive");
  const std::size_t nb = series.size();
  const auto bv = series.bvalues();
  const double bbar = std::accumulate(bv.begin(), bv.end(), 0.0) / static_cast<double>(nb);
  double sxx = 0.0, bmax2 = 0.0;
  std::vector<double> db(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    db[i] = bv[i] - bbar;
    sxx += db[i] * db[i];
    bmax2 = std::max(bmax2, bv[i] * bv[i]);
  }
  if (!(sxx > 1e-12 * static_cast<double>(nb) * bmax2)) throw DegenerateDesign();

  const Dims& d = series.dims();
  ParameterMaps maps{ScalarVolume(d, 0.0, series[0].spacing()), ScalarVolume(d, 0.0, series[0].spacing())};
  std::vector<const double*> src(nb);
  for (std::size_t i = 0; i < nb; ++i) src[i] = series[i].data().data();

  const std::size_t nvox = d.count();
  for (std::size_t v = 0; v < nvox; ++v) {
    double ysum = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
      const double y = floored_log(src[i][v], floor_eps);
      ysum += y;
      sxy += db[i] * y;
    }
    const double adc = -sxy / sxx;
    maps.adc[v] = adc;
    maps.log_s0[v] = ysum / static_cast<double>(nb) + adc * bbar;
  }
  return maps;
}

struct FitDiagnostics {
  double r2 = 0.0;               // log domain; NaN when the observations have zero variance
  std::vector<double> weights;   // weights of the final solve
  std::vector<double> residuals; // log(S_i) - predicted, per b-value
  int iterations = 0;
};

struct IrlsOptions {
  int max_iter = 50;
  double tol = 1e-6;  // relative ADC change
  double floor_eps = kDefaultLogFloor;
};

struct IrlsResult {
  double log_s0 = 0.0;
  double adc = 0.0;
  FitDiagnostics diagnostics;
};

// Robust log-linear fit. Starts from unit weights; after each solve the
// weights become 1 / max(|residual_i|, 1e-4).
inline IrlsResult irls_fit(std::span<const double> signals, std::span<const double> bvalues,
                           const IrlsOptions& opts = {}) {
  const std::size_t n = bvalues.size();
  if (n < 2 || signals.size() != n) throw InvalidArgument("irls_fit: need >= 2 signals matching the b-values");
  if (opts.max_iter < 1) throw InvalidArgument("irls_fit: max_iter must be >= 1");

  std::vector<double> y(n), w(n, 1.0), r(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = floored_log(signals[i], opts.floor_eps);

  IrlsResult out;
  LineFit fit{};
  for (int it = 1; it <= opts.max_iter; ++it) {
    const LineFit next = fit_log_line(y, bvalues, w);
    out.diagnostics.iterations = it;
    const bool settled = it > 1 && std::abs(next.adc - fit.adc) <= opts.tol * std::abs(fit.adc);
    fit = next;
    for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - (fit.log_s0 - bvalues[i] * fit.adc);
    if (settled || it == opts.max_iter) break;
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::max(std::abs(r[i]), kIrlsResidualFloor);
  }

  out.log_s0 = fit.log_s0;
  out.adc = fit.adc;
  out.diagnostics.weights = w;
  out.diagnostics.residuals = r;
  std::vector<double> pred(n);
  for (std::size_t i = 0; i < n; ++i) pred[i] = fit.log_s0 - bvalues[i] * fit.adc;
  try {
    out.diagnostics.r2 = r_squared(y, pred);
  } catch (const UndefinedRSquared&) {
    out.diagnostics.r2 = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// Per-voxel IRLS over the whole series.
inline ParameterMaps irls_fit_maps(const BValueSeries& series, const IrlsOptions& opts = {}) {
  const Dims& d = series.dims();
  const std::size_t nb = series.size();
  ParameterMaps maps{ScalarVolume(d, 0.0, series[0].spacing()), ScalarVolume(d, 0.0, series[0].spacing())};
  std::vector<double> s(nb);
  for (std::size_t v = 0; v < d.count(); ++v) {
    for (std::size_t i = 0; i < nb; ++i) s[i] = series[i][v];
    const IrlsResult fit = irls_fit(s, series.bvalues(), opts);
    maps.log_s0[v] = fit.log_s0;
    maps.adc[v] = fit.adc;
  }
  return maps;
}

// R_i(p) = exp(log_s0(p)) * exp(-b_i * adc(p)).
inline BValueSeries reconstruct(const ParameterMaps& maps, std::span<const double> bvalues) {
  require_same_dims(maps.log_s0.dims(), maps.adc.dims(), "reconstruct");
  std::vector<ScalarVolume> vols;
  vols.reserve(bvalues.size());
  for (double b : bvalues) {
    ScalarVolume r(maps.adc.dims(), 0.0, maps.adc.spacing());
    for (std::size_t v = 0; v < r.size(); ++v) r[v] = std::exp(maps.log_s0[v] - b * maps.adc[v]);
    vols.push_back(std::move(r));
  }
  return BValueSeries(std::vector<double>(bvalues.begin(), bvalues.end()), std::move(vols));
}

// Mean signal over the ROI, one value per b-value.
inline std::vector<double> roi_mean_signal(const BValueSeries& series, const RoiMask& roi) {
  require_same_dims(series.dims(), roi.dims(), "roi_mean_signal");
  const std::size_t count = roi_count(roi);
  if (count == 0) throw EmptyRoi();
  std::vector<double> mean(series.size(), 0.0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    double acc = 0.0;
    for (std::size_t v = 0; v < roi.size(); ++v) {
      if (roi[v]) acc += series[i][v];
    }
    mean[i] = acc / static_cast<double>(count);
  }
  return mean;
}

inline std::size_t count_negative(const ScalarVolume& adc) {
  return static_cast<std::size_t>(std::count_if(adc.data().begin(), adc.data().end(), [](double a) { return a < 0.0; }));
}

}  // namespace mcdwi
