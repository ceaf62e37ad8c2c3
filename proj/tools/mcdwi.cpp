// mcdwi command-line driver: simulate, fit, morph and cohort subcommands.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mcdwi/cohort.hpp"
#include "mcdwi/config.hpp"
#include "mcdwi/io.hpp"
#include "mcdwi/phantom.hpp"
#include "mcdwi/pipeline.hpp"
#include "mcdwi/report.hpp"
#include "mcdwi/signal_model.hpp"

namespace {

using namespace mcdwi;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(w) {}
};

struct NumericalFailure : Error {
  explicit NumericalFailure(const std::string& w) : Error(w) {}
};

// Options shared by every subcommand.
struct CommonArgs {
  std::string config_path;
  std::map<std::string, std::string> leaves;  // dotted path -> raw text
  std::string seed, out, dims, motion_amplitude, max_outer, alpha2, workers, method;
  std::string case_path;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "random seed");
  sub->add_option("--out", a.out, "output directory");
  sub->add_option("--dims", a.dims, "volume size, e.g. 96,96,16");
  sub->add_option("--motion-amplitude", a.motion_amplitude, "max phantom displacement in voxels");
  sub->add_option("--max-outer", a.max_outer, "outer iteration cap");
  for (const std::string& path : config_leaf_paths()) {
    if (path.find('.') == std::string::npos) continue;  // top-level leaves have their own flags
    sub->add_option("--" + path, a.leaves[path], "override " + path)->group("Config overrides");
  }
}

std::string dims_json(std::string text) {
  for (char& c : text) {
    if (c == 'x' || c == 'X') c = ',';
  }
  return "[" + text + "]";
}

RunConfig resolve_config(const CommonArgs& a) {
  json patch = json::object();
  if (!a.config_path.empty()) {
    patch = detail::parse_json(a.config_path);
    if (!patch.is_object()) throw ConfigError(a.config_path + " must hold an object");
  }
  const auto set = [&](const std::string& path, const std::string& value) {
    if (!value.empty()) set_config_path(patch, path, value);
  };
  for (const auto& [path, value] : a.leaves) set(path, value);
  set("seed", a.seed);
  set("out", a.out);
  if (!a.dims.empty()) set("phantom.dims", dims_json(a.dims));
  set("phantom.motion_amplitude", a.motion_amplitude);
  set("pipeline.max_outer_iters", a.max_outer);
  set("pipeline.alpha2", a.alpha2);
  set("cohort.workers", a.workers);
  set("method", a.method);
  RunConfig cfg = from_json(patch);
  validate(cfg);
  return cfg;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.out;
  detail::ensure_dir(out);
  detail::write_text(out / "effective_config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

void log(const std::string& msg) { std::cerr << "[mcdwi] " << msg << "\n"; }

LoadedCase load_case(const std::string& path) {
  if (path.empty()) throw UsageError("--case <manifest.json> is required");
  fs::path p = path;
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw IoError(IoErrorKind::MissingFile, p.string());
  return read_case(p);
}

std::string variant_name(const PipelineConfig& p) {
  if (p.freeze_fields) return "no_compensation";
  return p.weights.alpha2 == 0.0 ? "no_model_fit" : "full";
}

// ------------------------------------------------------------------ simulate

int cmd_simulate(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const PhantomCase pc = simulate_case(cfg.phantom);
  json truth = {{"lung_adc_mm2s", cfg.phantom.lung_adc},
                {"reference_roi_adc_mm2s", pc.reference_adc},
                {"motion_amplitude_vox", cfg.phantom.motion_amplitude},
                {"noise_sigma", cfg.phantom.noise_sigma},
                {"seed", cfg.phantom.seed},
                {"adc", "truth/adc.json"},
                {"log_s0", "truth/log_s0.json"}};
  json fields = json::array();
  detail::ensure_dir(out / "truth");
  write_volume(pc.truth.maps.adc, out / "truth" / "adc.json");
  write_volume(pc.truth.maps.log_s0, out / "truth" / "log_s0.json");
  for (std::size_t i = 0; i < pc.true_fields.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "truth/field_b%04d.json", static_cast<int>(std::lround(cfg.phantom.bvalues[i])));
    write_field(pc.true_fields[i], out / name);
    fields.push_back(name);
  }
  truth["fields"] = fields;
  const fs::path manifest = write_case(out, "phantom_" + std::to_string(cfg.phantom.seed), pc.observed,
                                       pc.truth.roi, std::nullopt, truth);
  log("wrote " + manifest.string());
  return kExitOk;
}

// ----------------------------------------------------------------------- fit

int cmd_fit(const RunConfig& cfg, const CommonArgs& a) {
  const LoadedCase c = load_case(a.case_path);
  const fs::path out = prepare_out(cfg);
  const NormalizedSeries norm = normalize_series(c.series);
  const double log_scale = std::log(norm.scale);

  ParameterMaps lls = lls_fit(norm.series, cfg.pipeline.floor_eps);
  for (double& v : lls.log_s0.data()) v += log_scale;
  IrlsOptions iopt = cfg.pipeline.irls;
  iopt.floor_eps = cfg.pipeline.floor_eps;
  ParameterMaps irls = irls_fit_maps(norm.series, iopt);
  for (double& v : irls.log_s0.data()) v += log_scale;
  write_volume(lls.adc, out / "lls_adc.json");
  write_volume(lls.log_s0, out / "lls_log_s0.json");
  write_volume(irls.adc, out / "irls_adc.json");
  write_volume(irls.log_s0, out / "irls_log_s0.json");

  const std::vector<double> mean = roi_mean_signal(norm.series, c.roi);
  const std::vector<double> b(c.series.bvalues().begin(), c.series.bvalues().end());
  double roi_adc = 0.0, roi_log_s0 = 0.0, roi_r2 = 0.0;
  if (cfg.method == "irls") {
    const IrlsResult r = irls_fit(mean, b, iopt);
    roi_adc = r.adc;
    roi_log_s0 = r.log_s0;
    roi_r2 = r.diagnostics.r2;
  } else {
    std::vector<double> y;
    for (double s : mean) y.push_back(floored_log(s, cfg.pipeline.floor_eps));
    const LineFit f = fit_log_line(y, b, std::vector<double>(b.size(), 1.0));
    roi_adc = f.adc;
    roi_log_s0 = f.log_s0;
    std::vector<double> pred;
    for (double bv : b) pred.push_back(f.log_s0 - bv * f.adc);
    roi_r2 = r_squared(y, pred);
  }
  json summary = {{"case_id", c.case_id},
                  {"method", cfg.method},
                  {"roi_adc_mm2s", roi_adc},
                  {"roi_log_s0", roi_log_s0 + log_scale},
                  {"roi_r2", roi_r2},
                  {"roi_voxels", roi_count(c.roi)},
                  {"negative_adc_voxels_lls", count_negative(lls.adc)}};
  detail::write_text(out / "fit_summary.json", summary.dump(2) + "\n");
  log(c.case_id + ": " + cfg.method + " ROI ADC " + format_number(roi_adc) + " mm^2/s");
  return kExitOk;
}

// --------------------------------------------------------------------- morph

int cmd_morph(const RunConfig& cfg, const CommonArgs& a) {
  const LoadedCase c = load_case(a.case_path);
  const fs::path out = prepare_out(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const CaseResult r = run_case(c.series, c.roi, cfg.pipeline);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_report(r, out);

  std::string csv = "case_id,variant,alpha1,alpha2,records,best_iteration,roi_adc_mm2s,irls_r2,converged,failed\n";
  csv += c.case_id + ',' + variant_name(cfg.pipeline) + ',' + format_number(cfg.pipeline.weights.alpha1) + ',' +
         format_number(cfg.pipeline.weights.alpha2) + ',' + std::to_string(r.records.size()) + ',' +
         std::to_string(r.best_iteration) + ',' + format_number(r.records.empty() ? NAN : r.best().roi_adc) + ',' +
         format_number(r.records.empty() ? NAN : r.best().roi_r2) + ',' + (r.converged ? "1" : "0") + ',' +
         (r.failed ? "1" : "0") + '\n';
  detail::write_text(out / "summary.csv", csv);

  if (r.failed) {
    log(c.case_id + ": registration " + r.failure + ", trace in failure_trace.csv");
    return kExitNumerical;
  }
  log(c.case_id + ": best iteration " + std::to_string(r.best_iteration) + " of " + std::to_string(r.records.size()) +
      ", ROI ADC " + format_number(r.best().roi_adc) + " mm^2/s (" + format_number(secs) + " s)");
  return kExitOk;
}

// -------------------------------------------------------------------- cohort

std::vector<CohortCase> load_cohort_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(IoErrorKind::MissingFile, dir.string());
  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "manifest.json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw UsageError("no manifest.json under " + dir.string());
  std::vector<CohortCase> cases;
  for (const auto& m : manifests) {
    LoadedCase c = read_case(m);
    if (!c.ga_weeks) throw UsageError(m.string() + ": cohort cases need ga_weeks");
    cases.push_back({c.case_id, *c.ga_weeks, std::move(c.series), std::move(c.roi)});
  }
  return cases;
}

std::vector<CohortCase> simulate_cohort(const RunConfig& cfg) {
  SaturationFit curve;
  curve.adc_sat = cfg.cohort.adc_sat;
  curve.alpha = cfg.cohort.alpha;
  std::vector<CohortPoint> truth;
  const std::vector<PhantomSpec> specs = cohort_specs(cfg.phantom, cfg.cohort.cases,
                                                      {cfg.cohort.ga_min, cfg.cohort.ga_max}, curve,
                                                      cfg.cohort.biological_sd, cfg.seed, &truth);
  std::vector<CohortCase> cases;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    PhantomCase pc = simulate_case(specs[i]);
    cases.push_back({truth[i].case_id, truth[i].ga, std::move(pc.observed), std::move(pc.truth.roi)});
  }
  return cases;
}

int cmd_cohort(const RunConfig& cfg, const CommonArgs& a) {
  std::vector<CohortCase> cases = a.case_path.empty() ? simulate_cohort(cfg) : load_cohort_dir(a.case_path);
  const fs::path out = prepare_out(cfg);
  log("running " + std::to_string(cases.size()) + " cases x 3 methods on " + std::to_string(cfg.cohort.workers) +
      " worker(s)");
  std::size_t done = 0;
  const auto results = run_cohort(cases, cfg.pipeline, cfg.cohort.workers, [&](const CohortCaseResult& r) {
    ++done;
    log(r.case_id + " done (" + std::to_string(done) + "/" + std::to_string(cases.size()) + ")" +
        (r.errors.empty() ? "" : " errors: " + r.errors));
  });

  bool any_ok = false;
  for (const auto& r : results) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (!r.arms[k]) continue;
      any_ok = true;
      const fs::path dir = out / "cases" / r.case_id / arm_name(kCohortArms[k]);
      detail::ensure_dir(dir);
      detail::write_text(dir / "iterations.csv", iterations_csv(*r.arms[k]));
      detail::write_text(dir / "decay.csv", decay_csv(*r.arms[k]));
      detail::write_text(dir / "summary.json", case_summary_json(*r.arms[k]).dump(2) + "\n");
    }
    if (!r.errors.empty()) detail::write_text(out / "cases" / (r.case_id + "_errors.txt"), r.errors + "\n");
  }
  const std::vector<MethodCohort> methods = summarize_cohort(results);
  write_report(methods, out);
  for (const auto& m : methods) log(m.method + ": ADC-GA R2 " + format_number(m.fit.r2));
  if (!any_ok) {
    log("every case failed");
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-compensated quantitative DWI: phantom simulation, ADC fitting and registration"};
  app.require_subcommand(1);
  CommonArgs sim_args, fit_args, morph_args, cohort_args;

  CLI::App* sim = app.add_subcommand("simulate", "write a phantom case with known maps and motion");
  add_common(sim, sim_args);

  CLI::App* fit = app.add_subcommand("fit", "fit ADC maps without motion compensation");
  add_common(fit, fit_args);
  fit->add_option("--case", fit_args.case_path, "case manifest or directory");
  fit->add_option("--method", fit_args.method, "lls or irls");

  CLI::App* morph = app.add_subcommand("morph", "joint fitting and registration of one case");
  add_common(morph, morph_args);
  morph->add_option("--case", morph_args.case_path, "case manifest or directory");
  morph->add_option("--alpha2", morph_args.alpha2, "model-fit weight; 0 disables the term");

  CLI::App* cohort = app.add_subcommand("cohort", "three-method cohort study and saturation fits");
  add_common(cohort, cohort_args);
  cohort->add_option("--cases", cohort_args.case_path, "directory of case manifests (default: simulate)");
  cohort->add_option("--workers", cohort_args.workers, "parallel cases");
  cohort->add_option("--alpha2", cohort_args.alpha2, "model-fit weight of the full method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(resolve_config(sim_args));
    if (fit->parsed()) return cmd_fit(resolve_config(fit_args), fit_args);
    if (morph->parsed()) return cmd_morph(resolve_config(morph_args), morph_args);
    if (cohort->parsed()) return cmd_cohort(resolve_config(cohort_args), cohort_args);
  } catch (const Diverged& e) {
    std::cerr << "mcdwi: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalFailure& e) {
    std::cerr << "mcdwi: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateDesign& e) {
    std::cerr << "mcdwi: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "mcdwi: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
