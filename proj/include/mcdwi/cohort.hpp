#pragma once

// Cohort study: every case is analysed without compensation, with the
// model-fit term disabled and with the full loss; each arm's ROI ADC values
// are then regressed on gestational age.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mcdwi/maturity.hpp"
#include "mcdwi/phantom.hpp"
#include "mcdwi/pipeline.hpp"
#include "mcdwi/report.hpp"

namespace mcdwi {

enum class CohortArm { NoCompensation, NoModelFit, Full };

inline constexpr CohortArm kCohortArms[] = {CohortArm::NoCompensation, CohortArm::NoModelFit, CohortArm::Full};

inline const char* arm_name(CohortArm a) {
  switch (a) {
    case CohortArm::NoCompensation: return "no_compensation";
    case CohortArm::NoModelFit: return "no_model_fit";
    case CohortArm::Full: return "full";
  }
  return "?";
}

inline PipelineConfig arm_config(CohortArm arm, PipelineConfig base) {
  if (arm == CohortArm::NoCompensation) {
    base.freeze_fields = true;
    base.max_outer_iters = 1;
  } else if (arm == CohortArm::NoModelFit) {
    base.weights.alpha2 = 0.0;
  }
  return base;
}

struct CohortCase {
  std::string case_id;
  double ga = 0.0;
  BValueSeries series;
  RoiMask roi;
};

struct CohortCaseResult {
  std::string case_id;
  double ga = 0.0;
  // One entry per arm in kCohortArms order; empty when that arm failed.
  std::optional<CaseResult> arms[3];
  std::string errors;
};

// Case specs for a simulated cohort: gestational ages and lung ADC values
// come from the saturation curve plus biological scatter, each case gets its
// own phantom seed.
inline std::vector<PhantomSpec> cohort_specs(const PhantomSpec& base, int n, GaRange range,
                                             const SaturationFit& curve, double biological_sd, std::uint64_t seed,
                                             std::vector<CohortPoint>* truth = nullptr) {
  const std::vector<CohortPoint> pts = make_cohort(n, range, curve, biological_sd, seed);
  std::vector<PhantomSpec> specs;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    PhantomSpec s = base;
    s.lung_adc = pts[i].adc;
    s.seed = detail::mix_seed(seed, 1000 + i);
    specs.push_back(std::move(s));
  }
  if (truth) *truth = pts;
  return specs;
}

using CohortProgress = std::function<void(const CohortCaseResult&)>;

// Runs all arms on all cases over `workers` threads. Results are indexed
// like the input, so the output does not depend on scheduling.
inline std::vector<CohortCaseResult> run_cohort(const std::vector<CohortCase>& cases, const PipelineConfig& cfg,
                                                int workers, const CohortProgress& progress = {}) {
  std::vector<CohortCaseResult> out(cases.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  const auto work = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      CohortCaseResult& r = out[i];
      r.case_id = cases[i].case_id;
      r.ga = cases[i].ga;
      for (std::size_t a = 0; a < 3; ++a) {
        try {
          CaseResult res = run_case(cases[i].series, cases[i].roi, arm_config(kCohortArms[a], cfg));
          if (res.failed) {
            r.errors += std::string(arm_name(kCohortArms[a])) + ": " + res.failure + "; ";
          } else {
            r.arms[a] = std::move(res);
          }
        } catch (const std::exception& e) {
          r.errors += std::string(arm_name(kCohortArms[a])) + ": " + e.what() + "; ";
        }
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(r);
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(cases.size())));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(work);
    work();
  }
  return out;
}

// Per-arm cohort tables sorted by case id, with their saturation fits. An arm
// with fewer than three successful cases gets a flagged empty fit.
inline std::vector<MethodCohort> summarize_cohort(std::vector<CohortCaseResult> results,
                                                  const SaturationOptions& opts = {}) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  std::vector<MethodCohort> out;
  for (std::size_t a = 0; a < 3; ++a) {
    MethodCohort m;
    m.method = arm_name(kCohortArms[a]);
    for (const auto& r : results) {
      if (!r.arms[a]) continue;
      const IterationRecord& best = r.arms[a]->best();
      m.points.push_back({r.case_id, r.ga, best.roi_adc, best.roi_r2});
    }
    try {
      m.fit = fit_saturation(m.points, opts);
    } catch (const DegenerateCohort&) {
      m.fit = SaturationFit{};
      m.fit.r2 = std::numeric_limits<double>::quiet_NaN();
      m.fit.flagged = true;
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace mcdwi
