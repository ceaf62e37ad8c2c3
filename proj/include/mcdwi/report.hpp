#pragma once

// Case and cohort reports: CSV tables, float32 volume containers and small
// hand-written SVG plots. Output bytes depend only on the inputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mcdwi/io.hpp"
#include "mcdwi/maturity.hpp"
#include "mcdwi/pipeline.hpp"

namespace mcdwi {

// Nine significant digits, '.' decimal point, "nan"/"inf" spelled out.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError(IoErrorKind::Unwritable, dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError(IoErrorKind::Unwritable, dir.string());
  }
  fs::remove(probe, ec);
}

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Linear axes mapping data coordinates into a fixed 640x420 canvas.
struct PlotFrame {
  double x0, x1, y0, y1;
  static constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }

  std::string header(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << svg_num(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
      s << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << svg_num(kHeight - kBottom + 16)
        << "\" text-anchor=\"middle\">" << format_number(std::round(xv * 1e4) / 1e4) << "</text>\n";
      s << "<text x=\"" << svg_num(kLeft - 6) << "\" y=\"" << svg_num(py(yv) + 4) << "\" text-anchor=\"end\">"
        << format_number(std::round(yv * 1e6) / 1e6) << "</text>\n";
    }
    s << "<text x=\"" << svg_num(kWidth / 2) << "\" y=\"" << svg_num(kHeight - 12) << "\" text-anchor=\"middle\">"
      << xlabel << "</text>\n";
    s << "<text x=\"16\" y=\"" << svg_num(kHeight / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << svg_num(kHeight / 2) << ")\">" << ylabel << "</text>\n";
    return s.str();
  }
};

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0 ? 0.1 * std::abs(lo) : 1.0;
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string polyline(const PlotFrame& f, std::span<const double> xs, std::span<const double> ys,
                            const std::string& colour) {
  std::ostringstream s;
  s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? " " : "") << svg_num(f.px(xs[i])) << "," << svg_num(f.py(ys[i]));
  s << "\"/>\n";
  return s.str();
}

}  // namespace detail

// ROI-mean signal against b for the input, best and last iterations, each with
// its fitted mono-exponential curve.
inline std::string decay_plot_svg(const CaseResult& result) {
  std::vector<int> shown{0};
  if (result.best_iteration != 0) shown.push_back(result.best_iteration);
  const int last = static_cast<int>(result.records.size()) - 1;
  if (last != 0 && last != result.best_iteration) shown.push_back(last);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int k : shown) {
    for (double s : result.records[static_cast<std::size_t>(k)].roi_signal) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  }
  const auto [y0, y1] = detail::padded_range(lo, hi);
  const double bmax = result.bvalues.back();
  const detail::PlotFrame f{0.0, bmax > 0 ? bmax : 1.0, y0, y1};
  static const char* colours[] = {"#d62728", "#1f77b4", "#2ca02c"};

  std::ostringstream s;
  s << f.header("ROI-mean signal vs b-value", "b (s/mm^2)", "ROI mean signal");
  for (std::size_t n = 0; n < shown.size(); ++n) {
    const IterationRecord& r = result.records[static_cast<std::size_t>(shown[n])];
    std::vector<double> xs, ys;
    for (int t = 0; t <= 60; ++t) {
      const double b = f.x1 * t / 60.0;
      xs.push_back(b);
      ys.push_back(std::exp(r.roi_log_s0 - b * r.roi_adc));
    }
    s << detail::polyline(f, xs, ys, colours[n]);
    for (std::size_t i = 0; i < result.bvalues.size(); ++i) {
      s << "<circle cx=\"" << detail::svg_num(f.px(result.bvalues[i])) << "\" cy=\""
        << detail::svg_num(f.py(r.roi_signal[i])) << "\" r=\"3.5\" fill=\"" << colours[n] << "\"/>\n";
    }
    s << "<text x=\"" << detail::svg_num(f.kWidth - 230) << "\" y=\"" << 60 + 16 * n << "\" fill=\"" << colours[n]
      << "\">iteration " << r.index << ": ADC " << format_number(r.roi_adc) << ", R2 " << format_number(r.roi_r2)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Cohort ADC against GA with the fitted saturation curve; darker points have
// a higher per-case fit R².
inline std::string cohort_plot_svg(std::span<const CohortPoint> pts, const SaturationFit& fit, const std::string& title) {
  double glo = std::numeric_limits<double>::infinity(), ghi = -glo, alo = glo, ahi = -glo;
  for (const auto& p : pts) {
    glo = std::min(glo, p.ga);
    ghi = std::max(ghi, p.ga);
    alo = std::min(alo, p.adc);
    ahi = std::max(ahi, p.adc);
  }
  if (pts.empty()) glo = 0, ghi = 1, alo = 0, ahi = 1;
  const auto [x0, x1] = detail::padded_range(glo, ghi);
  const auto [y0, y1] = detail::padded_range(alo, ahi);
  const detail::PlotFrame f{x0, x1, y0, y1};
  double rlo = std::numeric_limits<double>::infinity(), rhi = -rlo;
  for (const auto& p : pts) {
    if (std::isfinite(p.fit_r2)) {
      rlo = std::min(rlo, p.fit_r2);
      rhi = std::max(rhi, p.fit_r2);
    }
  }

  std::ostringstream s;
  s << f.header(title + " (R2 = " + format_number(fit.r2) + ")", "GA (weeks)", "ADC (mm^2/s)");
  std::vector<double> xs, ys;
  for (int t = 0; t <= 80; ++t) {
    const double g = x0 + (x1 - x0) * t / 80.0;
    xs.push_back(g);
    ys.push_back(std::clamp(predict_adc(g, fit), y0, y1));
  }
  s << detail::polyline(f, xs, ys, "#444444");
  for (const auto& p : pts) {
    const double t = (std::isfinite(p.fit_r2) && rhi > rlo) ? (p.fit_r2 - rlo) / (rhi - rlo) : 1.0;
    const int grey = static_cast<int>(std::lround(200.0 * (1.0 - t)));
    char colour[16];
    std::snprintf(colour, sizeof colour, "#%02x%02x%02x", grey, grey, std::min(255, grey + 40));
    s << "<circle cx=\"" << detail::svg_num(f.px(p.ga)) << "\" cy=\"" << detail::svg_num(f.py(p.adc))
      << "\" r=\"4\" fill=\"" << colour << "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline std::string iterations_csv(const CaseResult& r) {
  std::ostringstream s;
  s << "iteration,roi_adc_mm2s,roi_log_s0,irls_r2,scale,negative_adc_voxels,similarity,smooth,model_fit,total,"
       "inner_steps,lr_drops,mean_displacement_vox,is_best\n";
  for (const auto& rec : r.records) {
    s << rec.index << ',' << format_number(rec.roi_adc) << ',' << format_number(rec.roi_log_s0) << ','
      << format_number(rec.roi_r2) << ',' << format_number(rec.scale) << ',' << rec.negative_adc_voxels << ',';
    if (rec.registration) {
      const auto& g = *rec.registration;
      s << format_number(g.best.similarity) << ',' << format_number(g.best.smooth) << ','
        << format_number(g.best.model_fit) << ',' << format_number(g.best.total) << ',' << g.steps << ','
        << g.lr_drops << ',' << format_number(g.mean_displacement);
    } else {
      s << ",,,,,,";
    }
    s << ',' << (rec.index == r.best_iteration ? 1 : 0) << '\n';
  }
  return s.str();
}

inline std::string decay_csv(const CaseResult& r) {
  std::ostringstream s;
  s << "iteration,bvalue,roi_mean_signal,fitted_signal\n";
  for (const auto& rec : r.records) {
    for (std::size_t i = 0; i < r.bvalues.size(); ++i) {
      s << rec.index << ',' << format_number(r.bvalues[i]) << ',' << format_number(rec.roi_signal[i]) << ','
        << format_number(std::exp(rec.roi_log_s0 - r.bvalues[i] * rec.roi_adc)) << '\n';
    }
  }
  return s.str();
}

inline nlohmann::json case_summary_json(const CaseResult& r) {
  nlohmann::json j;
  j["records"] = r.records.size();
  j["best_iteration"] = r.best_iteration;
  j["converged"] = r.converged;
  j["failed"] = r.failed;
  if (r.failed) j["failure"] = r.failure;
  if (!r.records.empty()) {
    j["roi_adc_best_mm2s"] = r.best().roi_adc;
    j["irls_r2_best"] = r.best().roi_r2;
    j["roi_adc_input_mm2s"] = r.records.front().roi_adc;
    j["irls_r2_input"] = r.records.front().roi_r2;
  }
  return j;
}

inline std::string loss_trace_csv(std::span<const LossBreakdown> trace) {
  std::ostringstream s;
  s << "step,similarity,smooth,model_fit,total\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    s << i << ',' << format_number(trace[i].similarity) << ',' << format_number(trace[i].smooth) << ','
      << format_number(trace[i].model_fit) << ',' << format_number(trace[i].total) << '\n';
  }
  return s.str();
}

// Writes the full result of one case into `out_dir`.
inline void write_report(const CaseResult& r, const fs::path& out_dir) {
  detail::ensure_dir(out_dir);
  detail::write_text(out_dir / "iterations.csv", iterations_csv(r));
  detail::write_text(out_dir / "decay.csv", decay_csv(r));
  detail::write_text(out_dir / "summary.json", case_summary_json(r).dump(2) + "\n");
  if (r.failed) detail::write_text(out_dir / "failure_trace.csv", loss_trace_csv(r.failure_trace));
  if (r.records.empty()) return;
  detail::write_text(out_dir / "decay.svg", decay_plot_svg(r));

  write_volume(r.best_maps.adc, out_dir / "best_adc.json");
  write_volume(r.best_maps.log_s0, out_dir / "best_log_s0.json");
  for (std::size_t i = 0; i < r.bvalues.size(); ++i) {
    char name[48];
    const int b = static_cast<int>(std::lround(r.bvalues[i]));
    std::snprintf(name, sizeof name, "field_b%04d.json", b);
    write_field(r.best_fields[i], out_dir / name);
    std::snprintf(name, sizeof name, "warped_b%04d.json", b);
    write_volume(r.best_series[i], out_dir / name, r.bvalues[i]);
    std::snprintf(name, sizeof name, "resampled_b%04d.json", b);
    write_volume(r.best_series_resampled[i], out_dir / name, r.bvalues[i]);
  }
  // Central-slice ADC map of every iteration stacked along z.
  const Dims d = r.best_maps.adc.dims();
  std::vector<double> stack;
  for (const auto& slice : r.adc_slices) stack.insert(stack.end(), slice.begin(), slice.end());
  write_volume(ScalarVolume({d.nx, d.ny, static_cast<int>(r.adc_slices.size())}, std::move(stack)),
               out_dir / "adc_slices.json");
}

inline std::string cohort_csv(std::span<const CohortPoint> pts) {
  std::ostringstream s;
  s << "case_id,ga_weeks,adc_mm2s,fit_r2\n";
  for (const auto& p : pts) {
    s << p.case_id << ',' << format_number(p.ga) << ',' << format_number(p.adc) << ',' << format_number(p.fit_r2)
      << '\n';
  }
  return s.str();
}

struct MethodCohort {
  std::string method;
  std::vector<CohortPoint> points;
  SaturationFit fit;
};

inline std::string saturation_summary_csv(std::span<const MethodCohort> methods) {
  std::ostringstream s;
  s << "method,r2,adc_sat_mm2s,alpha_per_week,offset,flagged,n_cases\n";
  for (const auto& m : methods) {
    s << m.method << ',' << format_number(m.fit.r2) << ',' << format_number(m.fit.adc_sat) << ','
      << format_number(m.fit.alpha) << ',' << format_number(m.fit.offset) << ',' << (m.fit.flagged ? 1 : 0) << ','
      << m.points.size() << '\n';
  }
  return s.str();
}

// Writes one cohort table and scatter plot per method plus the shared
// saturation summary.
inline void write_report(std::span<const MethodCohort> methods, const fs::path& out_dir) {
  detail::ensure_dir(out_dir);
  for (const auto& m : methods) {
    detail::write_text(out_dir / ("cohort_" + m.method + ".csv"), cohort_csv(m.points));
    detail::write_text(out_dir / ("scatter_" + m.method + ".svg"), cohort_plot_svg(m.points, m.fit, m.method));
  }
  detail::write_text(out_dir / "saturation_summary.csv", saturation_summary_csv(methods));
}

}  // namespace mcdwi
