#pragma once

// ADC vs gestational age saturation model, ADC = ADC_sat * (1 - exp(-alpha * GA)),
// fitted by a log-spaced grid over alpha followed by Gauss-Newton.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mcdwi/error.hpp"

namespace mcdwi {

struct CohortPoint {
  std::string case_id;
  double ga = 0.0;      // weeks
  double adc = 0.0;     // mm²/s
  double fit_r2 = 0.0;  // per-case mono-exponential fit quality
};

enum class SaturationModel {
  TwoParameter,    // adc_sat * (1 - exp(-alpha * ga))
  ThreeParameter,  // adc_sat * (1 - offset * exp(-alpha * ga))
};

struct SaturationFit {
  double adc_sat = 0.0;  // mm²/s
  double alpha = 0.0;    // 1/weeks
  double offset = 1.0;   // fixed to 1 for the two-parameter model
  double r2 = 0.0;
  // Set when the fit is not meaningful: non-positive parameters, no ADC
  // variance to explain, or alpha pinned far outside the search range.
  bool flagged = false;
  SaturationModel model = SaturationModel::TwoParameter;
};

inline double predict_adc(double ga, const SaturationFit& fit) {
  return fit.adc_sat * (1.0 - fit.offset * std::exp(-fit.alpha * ga));
}

struct SaturationOptions {
  SaturationModel model = SaturationModel::TwoParameter;
  double alpha_min = 1e-3;
  double alpha_max = 1.0;
  int grid_points = 400;
  int max_gauss_newton = 200;
};

namespace detail {

inline double saturation_sse(std::span<const CohortPoint> pts, const SaturationFit& f) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double r = p.adc - predict_adc(p.ga, f);
    s += r * r;
  }
  return s;
}

// Best linear coefficients for a fixed alpha.
inline SaturationFit saturation_linear_solve(std::span<const CohortPoint> pts, double alpha, SaturationModel model) {
  SaturationFit f;
  f.alpha = alpha;
  f.model = model;
  if (model == SaturationModel::TwoParameter) {
    double num = 0.0, den = 0.0;
    for (const auto& p : pts) {
      const double basis = 1.0 - std::exp(-alpha * p.ga);
      num += basis * p.adc;
      den += basis * basis;
    }
    f.adc_sat = den > 0.0 ? num / den : 0.0;
    return f;
  }
  // adc = c0 + c1 * e, e = exp(-alpha * ga); adc_sat = c0, offset = -c1 / c0.
  Eigen::Matrix2d ata = Eigen::Matrix2d::Zero();
  Eigen::Vector2d aty = Eigen::Vector2d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector2d row(1.0, std::exp(-alpha * p.ga));
    ata += row * row.transpose();
    aty += row * p.adc;
  }
  const Eigen::Vector2d c = ata.ldlt().solve(aty);
  f.adc_sat = c(0);
  f.offset = c(0) != 0.0 ? -c(1) / c(0) : 0.0;
  return f;
}

}  // namespace detail

inline SaturationFit fit_saturation(std::span<const CohortPoint> pts, const SaturationOptions& opts = {}) {
  if (pts.size() < 3) throw DegenerateCohort("need at least 3 points");
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.ga < b.ga; });
  if (!(hi->ga > lo->ga)) throw DegenerateCohort("all gestational ages are equal");
  for (const auto& p : pts) {
    if (!std::isfinite(p.ga) || !std::isfinite(p.adc)) throw DegenerateCohort("non-finite point " + p.case_id);
  }

  SaturationFit best;
  double best_sse = std::numeric_limits<double>::infinity();
  const double log_lo = std::log(opts.alpha_min), log_hi = std::log(opts.alpha_max);
  for (int g = 0; g < opts.grid_points; ++g) {
    const double t = opts.grid_points > 1 ? static_cast<double>(g) / (opts.grid_points - 1) : 0.0;
    const SaturationFit f = detail::saturation_linear_solve(pts, std::exp(log_lo + t * (log_hi - log_lo)), opts.model);
    const double sse = detail::saturation_sse(pts, f);
    if (sse < best_sse) {
      best_sse = sse;
      best = f;
    }
  }

  // Gauss-Newton with step halving on (adc_sat, alpha[, offset]).
  const bool three = opts.model == SaturationModel::ThreeParameter;
  const int np = three ? 3 : 2;
  for (int it = 0; it < opts.max_gauss_newton; ++it) {
    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(np, np);
    Eigen::VectorXd jtr = Eigen::VectorXd::Zero(np);
    for (const auto& p : pts) {
      const double e = std::exp(-best.alpha * p.ga);
      Eigen::VectorXd j(np);
      j(0) = 1.0 - best.offset * e;
      j(1) = best.adc_sat * best.offset * p.ga * e;
      if (three) j(2) = -best.adc_sat * e;
      const double r = p.adc - predict_adc(p.ga, best);
      jtj += j * j.transpose();
      jtr += j * r;
    }
    const Eigen::VectorXd step = jtj.ldlt().solve(jtr);
    if (!step.allFinite()) break;
    bool improved = false;
    double scale = 1.0;
    for (int h = 0; h < 30; ++h, scale *= 0.5) {
      SaturationFit trial = best;
      trial.adc_sat += scale * step(0);
      trial.alpha += scale * step(1);
      if (three) trial.offset += scale * step(2);
      const double sse = detail::saturation_sse(pts, trial);
      if (sse < best_sse) {
        best = trial;
        best_sse = sse;
        improved = true;
        break;
      }
    }
    const double rel = std::abs(step(0)) / std::max(std::abs(best.adc_sat), 1e-300) +
                       std::abs(step(1)) / std::max(std::abs(best.alpha), 1e-300);
    if (!improved || rel < 1e-15) break;
  }

  const double mean =
      std::accumulate(pts.begin(), pts.end(), 0.0, [](double s, const CohortPoint& p) { return s + p.adc; }) /
      static_cast<double>(pts.size());
  double ss_tot = 0.0;
  for (const auto& p : pts) ss_tot += (p.adc - mean) * (p.adc - mean);
  // Relative to the data scale, a variance this small is numerically zero.
  const bool no_variance = !(ss_tot > 1e-24 * std::max(mean * mean, 1e-300) * static_cast<double>(pts.size()));
  best.r2 = no_variance ? 0.0 : 1.0 - best_sse / ss_tot;
  best.flagged = no_variance || !(best.adc_sat > 0.0) || !(best.alpha > 0.0) || best.alpha > 10.0 * opts.alpha_max;
  return best;
}

}  // namespace mcdwi
