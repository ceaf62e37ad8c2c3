#pragma once

// Run configuration shared by the CLI subcommands. The JSON form is a tree
// of sections; every leaf has a default, unknown keys are rejected and each
// leaf can be overridden from a dotted path such as
// "pipeline.inner.learning_rate".

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcdwi/error.hpp"
#include "mcdwi/phantom.hpp"
#include "mcdwi/pipeline.hpp"

namespace mcdwi {

struct CohortConfig {
  int cases = 38;
  double ga_min = 20.0;
  double ga_max = 38.0;
  double adc_sat = 3.2e-3;  // mm²/s
  double alpha = 0.07;      // 1/weeks
  // Gaussian scatter added to the ADC of each phantom lung, mm²/s.
  double biological_sd = 1.5e-4;
  int workers = 1;
};

struct RunConfig {
  PipelineConfig pipeline{};
  PhantomSpec phantom{};
  CohortConfig cohort{};
  std::string method = "irls";  // fit subcommand: lls | irls
  std::string out = "out";
  std::uint64_t seed = 0;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& p = c.pipeline;
  const auto& s = c.phantom;
  json j;
  j["pipeline"] = {
      {"alpha1", p.weights.alpha1},
      {"alpha2", p.weights.alpha2},
      {"normalize_smoothness", p.weights.normalize_smoothness},
      {"max_outer_iters", p.max_outer_iters},
      {"converge_window", p.converge_window},
      {"adc_change_tol", p.adc_change_tol},
      {"floor_eps", p.floor_eps},
      {"freeze_fields", p.freeze_fields},
      {"resample_from_original", p.resample_from_original},
      {"reference_index", p.reference_index},
      {"inner",
       {{"learning_rate", p.inner.learning_rate},
        {"lr_drop_factor", p.inner.lr_drop_factor},
        {"max_inner_steps", p.inner.max_inner_steps},
        {"min_learning_rate", p.inner.min_learning_rate},
        {"adam_beta1", p.inner.adam_beta1},
        {"adam_beta2", p.inner.adam_beta2},
        {"adam_eps", p.inner.adam_eps},
        {"seed", p.inner.seed}}},
      {"irls", {{"max_iter", p.irls.max_iter}, {"tol", p.irls.tol}}},
  };
  j["phantom"] = {
      {"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
      {"bvalues", s.bvalues},
      {"lung_adc", s.lung_adc},
      {"background_adc", s.background_adc},
      {"lung_s0", s.lung_s0},
      {"background_s0", s.background_s0},
      {"texture_amplitude", s.texture_amplitude},
      {"texture_scale", s.texture_scale},
      {"roi_center", {s.roi_center.x, s.roi_center.y, s.roi_center.z}},
      {"roi_radii", {s.roi_radii.x, s.roi_radii.y, s.roi_radii.z}},
      {"boundary_width", s.boundary_width},
      {"roi_inset", s.roi_inset},
      {"noise_sigma", s.noise_sigma},
      {"motion_amplitude", s.motion_amplitude},
      {"motion_scale", s.motion_scale},
      {"outlier_index", s.outlier_index},
      {"outlier_factor", s.outlier_factor},
  };
  j["cohort"] = {
      {"cases", c.cohort.cases},       {"ga_min", c.cohort.ga_min},
      {"ga_max", c.cohort.ga_max},     {"adc_sat", c.cohort.adc_sat},
      {"alpha", c.cohort.alpha},       {"biological_sd", c.cohort.biological_sd},
      {"workers", c.cohort.workers},
  };
  j["method"] = c.method;
  j["out"] = c.out;
  j["seed"] = c.seed;
  return j;
}

namespace detail {

template <class T>
T config_get(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for " + path + ": " + j.dump());
  }
}

// Overlays `patch` onto `base`; every key of `patch` must already exist in
// `base` with a compatible JSON type.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError((prefix.empty() ? "root" : prefix) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown key " + path);
    nlohmann::json& target = base[it.key()];
    if (target.is_object()) {
      merge_strict(target, it.value(), path);
      continue;
    }
    const bool both_numbers = target.is_number() && it.value().is_number();
    if (!both_numbers && target.type() != it.value().type()) throw ConfigError("wrong type for " + path);
    target = it.value();
  }
}

inline Vec3 vec3_from(const nlohmann::json& j, const std::string& path) {
  const auto v = config_get<std::vector<double>>(j, path);
  if (v.size() != 3) throw ConfigError(path + " needs 3 entries");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

inline RunConfig from_json(const nlohmann::json& patch) {
  using detail::config_get;
  nlohmann::json j = to_json(RunConfig{});
  detail::merge_strict(j, patch, "");

  RunConfig c;
  const auto& p = j["pipeline"];
  c.pipeline.weights.alpha1 = config_get<double>(p["alpha1"], "pipeline.alpha1");
  c.pipeline.weights.alpha2 = config_get<double>(p["alpha2"], "pipeline.alpha2");
  c.pipeline.weights.normalize_smoothness = config_get<bool>(p["normalize_smoothness"], "pipeline.normalize_smoothness");
  c.pipeline.max_outer_iters = config_get<int>(p["max_outer_iters"], "pipeline.max_outer_iters");
  c.pipeline.converge_window = config_get<int>(p["converge_window"], "pipeline.converge_window");
  c.pipeline.adc_change_tol = config_get<double>(p["adc_change_tol"], "pipeline.adc_change_tol");
  c.pipeline.floor_eps = config_get<double>(p["floor_eps"], "pipeline.floor_eps");
  c.pipeline.freeze_fields = config_get<bool>(p["freeze_fields"], "pipeline.freeze_fields");
  c.pipeline.resample_from_original = config_get<bool>(p["resample_from_original"], "pipeline.resample_from_original");
  c.pipeline.reference_index = config_get<int>(p["reference_index"], "pipeline.reference_index");
  const auto& in = p["inner"];
  c.pipeline.inner.learning_rate = config_get<double>(in["learning_rate"], "pipeline.inner.learning_rate");
  c.pipeline.inner.lr_drop_factor = config_get<double>(in["lr_drop_factor"], "pipeline.inner.lr_drop_factor");
  c.pipeline.inner.max_inner_steps = config_get<int>(in["max_inner_steps"], "pipeline.inner.max_inner_steps");
  c.pipeline.inner.min_learning_rate = config_get<double>(in["min_learning_rate"], "pipeline.inner.min_learning_rate");
  c.pipeline.inner.adam_beta1 = config_get<double>(in["adam_beta1"], "pipeline.inner.adam_beta1");
  c.pipeline.inner.adam_beta2 = config_get<double>(in["adam_beta2"], "pipeline.inner.adam_beta2");
  c.pipeline.inner.adam_eps = config_get<double>(in["adam_eps"], "pipeline.inner.adam_eps");
  c.pipeline.inner.seed = config_get<std::uint64_t>(in["seed"], "pipeline.inner.seed");
  c.pipeline.irls.max_iter = config_get<int>(p["irls"]["max_iter"], "pipeline.irls.max_iter");
  c.pipeline.irls.tol = config_get<double>(p["irls"]["tol"], "pipeline.irls.tol");
  c.pipeline.irls.floor_eps = c.pipeline.floor_eps;

  const auto& s = j["phantom"];
  const auto dims = config_get<std::vector<int>>(s["dims"], "phantom.dims");
  if (dims.size() != 3) throw ConfigError("phantom.dims needs 3 entries");
  c.phantom.dims = {dims[0], dims[1], dims[2]};
  c.phantom.bvalues = config_get<std::vector<double>>(s["bvalues"], "phantom.bvalues");
  c.phantom.lung_adc = config_get<double>(s["lung_adc"], "phantom.lung_adc");
  c.phantom.background_adc = config_get<double>(s["background_adc"], "phantom.background_adc");
  c.phantom.lung_s0 = config_get<double>(s["lung_s0"], "phantom.lung_s0");
  c.phantom.background_s0 = config_get<double>(s["background_s0"], "phantom.background_s0");
  c.phantom.texture_amplitude = config_get<double>(s["texture_amplitude"], "phantom.texture_amplitude");
  c.phantom.texture_scale = config_get<double>(s["texture_scale"], "phantom.texture_scale");
  c.phantom.roi_center = detail::vec3_from(s["roi_center"], "phantom.roi_center");
  c.phantom.roi_radii = detail::vec3_from(s["roi_radii"], "phantom.roi_radii");
  c.phantom.boundary_width = config_get<double>(s["boundary_width"], "phantom.boundary_width");
  c.phantom.roi_inset = config_get<double>(s["roi_inset"], "phantom.roi_inset");
  c.phantom.noise_sigma = config_get<double>(s["noise_sigma"], "phantom.noise_sigma");
  c.phantom.motion_amplitude = config_get<double>(s["motion_amplitude"], "phantom.motion_amplitude");
  c.phantom.motion_scale = config_get<double>(s["motion_scale"], "phantom.motion_scale");
  c.phantom.outlier_index = config_get<int>(s["outlier_index"], "phantom.outlier_index");
  c.phantom.outlier_factor = config_get<double>(s["outlier_factor"], "phantom.outlier_factor");

  const auto& h = j["cohort"];
  c.cohort.cases = config_get<int>(h["cases"], "cohort.cases");
  c.cohort.ga_min = config_get<double>(h["ga_min"], "cohort.ga_min");
  c.cohort.ga_max = config_get<double>(h["ga_max"], "cohort.ga_max");
  c.cohort.adc_sat = config_get<double>(h["adc_sat"], "cohort.adc_sat");
  c.cohort.alpha = config_get<double>(h["alpha"], "cohort.alpha");
  c.cohort.biological_sd = config_get<double>(h["biological_sd"], "cohort.biological_sd");
  c.cohort.workers = config_get<int>(h["workers"], "cohort.workers");

  c.method = config_get<std::string>(j["method"], "method");
  c.out = config_get<std::string>(j["out"], "out");
  c.seed = config_get<std::uint64_t>(j["seed"], "seed");
  c.phantom.seed = c.seed;
  return c;
}

// Every leaf path of the default configuration, in document order.
inline std::vector<std::string> config_leaf_paths() {
  std::vector<std::string> out;
  const auto walk = [&](const auto& self, const nlohmann::json& j, const std::string& prefix) -> void {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it.value().is_object()) {
        self(self, it.value(), path);
      } else {
        out.push_back(path);
      }
    }
  };
  walk(walk, to_json(RunConfig{}), "");
  return out;
}

// Sets one dotted leaf in a JSON patch. The text is parsed as JSON first and
// taken as a plain string when that fails, so `--out dir` needs no quotes.
inline void set_config_path(nlohmann::json& patch, const std::string& path, const std::string& text) {
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &patch;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline void validate(const RunConfig& c) {
  c.pipeline.validate();
  c.phantom.validate();
  if (c.cohort.cases < 3) throw ConfigError("cohort.cases must be >= 3");
  if (!(c.cohort.ga_max >= c.cohort.ga_min)) throw ConfigError("cohort.ga_max must be >= cohort.ga_min");
  if (!(c.cohort.biological_sd >= 0.0)) throw ConfigError("cohort.biological_sd must be >= 0");
  if (c.cohort.workers < 1) throw ConfigError("cohort.workers must be >= 1");
  if (c.method != "lls" && c.method != "irls") throw ConfigError("method must be lls or irls");
}

}  // namespace mcdwi
