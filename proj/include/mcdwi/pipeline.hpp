#pragma once

// Outer motion-compensation loop. Each iteration normalizes the current
// series, fits per-voxel LLS maps, reconstructs model images, registers every
// b-value image to its own reconstruction and warps it. The ROI-mean signal
// is fitted with IRLS every iteration; the iteration with the highest IRLS
// R² is kept.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/objective.hpp"
#include "mcdwi/registration.hpp"
#include "mcdwi/signal_model.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

struct PipelineConfig {
  LossWeights weights{};
  InnerOptConfig inner{};
  int max_outer_iters = 50;
  int converge_window = 5;
  double adc_change_tol = 1e-3;
  double floor_eps = kDefaultLogFloor;
  IrlsOptions irls{};
  // Skip registration entirely (uncompensated baseline).
  bool freeze_fields = false;
  // Regenerate each iteration's series from the original images and the
  // accumulated field instead of warping the previous iteration's images.
  bool resample_from_original = false;
  // b-value index whose image defines the reference frame and is never
  // warped; -1 registers every image, leaving the common frame free to drift.
  int reference_index = 0;

  void validate() const {
    weights.validate();
    inner.validate();
    if (max_outer_iters < 1) throw InvalidArgument("max_outer_iters must be >= 1");
    if (converge_window < 1) throw InvalidArgument("converge_window must be >= 1");
    if (!(adc_change_tol >= 0.0)) throw InvalidArgument("adc_change_tol must be >= 0");
    if (!(floor_eps > 0.0)) throw InvalidArgument("floor_eps must be > 0");
    if (reference_index < -1) throw InvalidArgument("reference_index must be >= -1");
  }
};

struct RegistrationSummary {
  LossBreakdown initial;
  LossBreakdown best;
  int steps = 0;
  int lr_drops = 0;
  double mean_displacement = 0.0;  // voxels, ROI mean of |u| over b-values
};

// Describes the series entering outer iteration `index`; record 0 is the
// uncompensated input.
struct IterationRecord {
  int index = 0;
  double roi_adc = 0.0;     // IRLS on the ROI-mean signal, mm²/s
  double roi_log_s0 = 0.0;  // in input intensity units
  double roi_r2 = 0.0;      // IRLS log-domain R²
  std::vector<double> roi_signal;  // ROI-mean signal per b-value, input units
  double scale = 1.0;              // normalization divisor used this iteration
  std::size_t negative_adc_voxels = 0;
  std::optional<RegistrationSummary> registration;  // absent on the final record
};

struct CaseResult {
  std::vector<double> bvalues;
  std::vector<IterationRecord> records;
  int best_iteration = 0;
  ParameterMaps best_maps;                      // LLS maps, input intensity units
  std::vector<DisplacementField> best_fields;   // accumulated, one per b-value
  BValueSeries best_series;                     // iteration-faithful images
  BValueSeries best_series_resampled;           // original warped once by best_fields
  std::vector<std::vector<double>> adc_slices;  // central-slice LLS ADC per iteration
  bool converged = false;
  bool failed = false;
  std::string failure;
  std::vector<LossBreakdown> failure_trace;

  const IterationRecord& best() const { return records.at(static_cast<std::size_t>(best_iteration)); }
};

// True iff the last `window` relative changes of the history are all <= tol.
inline bool check_convergence(std::span<const double> history, int window, double tol) {
  if (window < 1) throw InvalidArgument("check_convergence: window must be >= 1");
  const std::size_t w = static_cast<std::size_t>(window);
  if (history.size() < w + 1) return false;
  for (std::size_t j = history.size() - w; j < history.size(); ++j) {
    if (!(std::abs(history[j] - history[j - 1]) <= tol * std::abs(history[j - 1]))) return false;
  }
  return true;
}

// Index of the maximal value, earliest on ties; NaN never wins.
inline int argmax_first(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)] || std::isnan(values[static_cast<std::size_t>(best)])) {
      if (!std::isnan(values[i])) best = static_cast<int>(i);
    }
  }
  return best;
}

namespace detail {

inline BValueSeries warp_series(const BValueSeries& s, std::span<const DisplacementField> fields) {
  std::vector<ScalarVolume> vols;
  vols.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) vols.push_back(warp(s[i], fields[i]));
  return BValueSeries(std::vector<double>(s.bvalues().begin(), s.bvalues().end()), std::move(vols));
}

inline std::vector<double> central_slice(const ScalarVolume& v) {
  const Dims& d = v.dims();
  const int z = d.nz / 2;
  std::vector<double> out(static_cast<std::size_t>(d.nx) * d.ny);
  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) out[static_cast<std::size_t>(x) + static_cast<std::size_t>(d.nx) * y] = v.at(x, y, z);
  }
  return out;
}

inline double roi_mean_displacement(std::span<const DisplacementField> fields, const RoiMask& roi) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& f : fields) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (roi[i]) {
        acc += f[i].norm();
        ++n;
      }
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace detail

inline CaseResult run_case(const BValueSeries& series, const RoiMask& roi, const PipelineConfig& cfg) {
  cfg.validate();
  require_same_dims(series.dims(), roi.dims(), "run_case (roi)");
  if (roi_count(roi) == 0) throw EmptyRoi();
  if (cfg.reference_index >= static_cast<int>(series.size())) throw InvalidArgument("reference_index out of range");
  const Dims& d = series.dims();
  const std::size_t nb = series.size();

  CaseResult out;
  out.bvalues.assign(series.bvalues().begin(), series.bvalues().end());

  BValueSeries current = series;
  std::vector<DisplacementField> accumulated(nb, DisplacementField(d));
  std::vector<double> adc_history, r2_history;
  const std::vector<DisplacementField> zero_fields(nb, DisplacementField(d));

  for (int k = 0; k < cfg.max_outer_iters; ++k) {
    const NormalizedSeries norm = normalize_series(current);
    const ParameterMaps maps = lls_fit(norm.series, cfg.floor_eps);

    IterationRecord rec;
    rec.index = k;
    rec.scale = norm.scale;
    const IrlsResult roi_fit = irls_fit(roi_mean_signal(norm.series, roi), out.bvalues, cfg.irls);
    rec.roi_adc = roi_fit.adc;
    rec.roi_log_s0 = roi_fit.log_s0 + std::log(norm.scale);
    rec.roi_r2 = roi_fit.diagnostics.r2;
    rec.roi_signal = roi_mean_signal(current, roi);
    rec.negative_adc_voxels = count_negative(maps.adc);
    adc_history.push_back(rec.roi_adc);
    r2_history.push_back(rec.roi_r2);
    out.adc_slices.push_back(detail::central_slice(maps.adc));

    if (argmax_first(r2_history) == k) {
      out.best_iteration = k;
      out.best_maps = maps;
      for (double& v : out.best_maps.log_s0.data()) v += std::log(norm.scale);
      out.best_fields = accumulated;
      out.best_series = current;
    }
    out.records.push_back(std::move(rec));

    if (check_convergence(adc_history, cfg.converge_window, cfg.adc_change_tol)) {
      out.converged = true;
      break;
    }
    if (k == cfg.max_outer_iters - 1 || cfg.freeze_fields) continue;

    const BValueSeries fixed = reconstruct(maps, out.bvalues);
    const LossProblem problem(fixed, norm.series, cfg.weights.alpha2 > 0.0 ? &maps : nullptr, roi, cfg.weights,
                              cfg.floor_eps);
    InnerResult inner;
    try {
      InnerOptConfig inner_cfg = cfg.inner;
      inner_cfg.frozen_field = cfg.reference_index;
      inner = optimize_fields(problem, zero_fields, inner_cfg);
    } catch (const Diverged& e) {
      out.failed = true;
      out.failure = e.what();
      out.failure_trace = e.trace();
      break;
    }

    RegistrationSummary reg;
    reg.initial = inner.trace.front();
    reg.best = inner.trace[inner.best_step];
    reg.steps = static_cast<int>(inner.trace.size()) - 1;
    reg.lr_drops = inner.lr_drops;
    reg.mean_displacement = detail::roi_mean_displacement(inner.fields, roi);
    out.records.back().registration = reg;

    for (std::size_t i = 0; i < nb; ++i) accumulated[i] = compose_fields(accumulated[i], inner.fields[i]);
    current = cfg.resample_from_original ? detail::warp_series(series, accumulated)
                                         : detail::warp_series(current, inner.fields);
  }

  out.best_series_resampled = detail::warp_series(series, out.best_fields);
  return out;
}

}  // namespace mcdwi
