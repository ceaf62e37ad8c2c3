#pragma once

// On-disk containers.
//
// A volume is a JSON sidecar plus a raw file of little-endian float32 values
// in x-fastest order:
//
//   { "dims": [nx, ny, nz], "spacing": [sx, sy, sz], "dtype": "f32le",
//     "order": "x-fastest", "components": 1, "raw": "name.raw",
//     "bvalue": 400 }                       <- bvalue optional
//
// Displacement fields use the same sidecar with "components": 3; the raw
// file then holds (ux, uy, uz) interleaved per voxel. Masks are volumes whose
// values are exactly 0 or 1.
//
// A case manifest lists one volume per b-value and the ROI mask:
//
//   { "case_id": "case_000", "ga_weeks": 31.5,          <- ga_weeks optional
//     "volumes": [ { "bvalue": 0, "path": "b0000.json" }, ... ],
//     "roi": "roi.json",
//     "truth": { ... } }                                <- optional, pass-through
//
// Relative paths are resolved against the manifest's directory.

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

namespace fs = std::filesystem;

enum class IoErrorKind {
  LengthMismatch,
  UnknownDtype,
  MalformedJson,
  MissingFile,
  Unwritable,
  DuplicateBValue,
  MissingB0,
  DimMismatch,
  InvalidMask,
};

inline const char* to_string(IoErrorKind k) {
  switch (k) {
    case IoErrorKind::LengthMismatch: return "length mismatch";
    case IoErrorKind::UnknownDtype: return "unknown dtype";
    case IoErrorKind::MalformedJson: return "malformed JSON";
    case IoErrorKind::MissingFile: return "missing file";
    case IoErrorKind::Unwritable: return "unwritable";
    case IoErrorKind::DuplicateBValue: return "duplicate b-value";
    case IoErrorKind::MissingB0: return "missing b=0";
    case IoErrorKind::DimMismatch: return "dimension mismatch";
    case IoErrorKind::InvalidMask: return "invalid mask";
  }
  return "io error";
}

class IoError : public Error {
 public:
  IoError(IoErrorKind kind, const std::string& detail)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

namespace detail {

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::MissingFile, p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const fs::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::Unwritable, p.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError(IoErrorKind::Unwritable, p.string());
}

inline void write_text(const fs::path& p, const std::string& text) { write_bytes(p, text.data(), text.size()); }

inline nlohmann::json parse_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(IoErrorKind::MalformedJson, p.string() + ": " + e.what());
  }
}

inline void encode_f32le(double v, unsigned char* out) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
}

inline double decode_f32le(const unsigned char* in) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

struct Sidecar {
  Dims dims;
  Spacing spacing;
  int components = 1;
  std::string raw;
  std::optional<double> bvalue;
};

inline nlohmann::json sidecar_json(const Dims& d, const Spacing& s, int components, const std::string& raw,
                                   std::optional<double> bvalue) {
  nlohmann::json j;
  j["dims"] = {d.nx, d.ny, d.nz};
  j["spacing"] = {s.sx, s.sy, s.sz};
  j["dtype"] = "f32le";
  j["order"] = "x-fastest";
  j["components"] = components;
  j["raw"] = raw;
  if (bvalue) j["bvalue"] = *bvalue;
  return j;
}

inline Sidecar parse_sidecar(const fs::path& path) {
  const nlohmann::json j = parse_json(path);
  const auto bad = [&](const std::string& why) { return IoError(IoErrorKind::MalformedJson, path.string() + ": " + why); };
  if (!j.is_object()) throw bad("sidecar must be an object");
  static const std::set<std::string> known{"dims", "spacing", "dtype", "order", "components", "raw", "bvalue"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw bad("unknown key '" + key + "'");
  }
  for (const char* key : {"dims", "dtype", "order", "raw"}) {
    if (!j.contains(key)) throw bad(std::string("missing key '") + key + "'");
  }
  if (!j["dtype"].is_string()) throw bad("dtype must be a string");
  if (j["dtype"].get<std::string>() != "f32le") {
    throw IoError(IoErrorKind::UnknownDtype, path.string() + ": '" + j["dtype"].get<std::string>() + "'");
  }
  if (!j["order"].is_string() || j["order"].get<std::string>() != "x-fastest") throw bad("order must be 'x-fastest'");
  const auto& dims = j["dims"];
  if (!dims.is_array() || dims.size() != 3) throw bad("dims must be an array of 3 integers");
  Sidecar sc;
  int dv[3];
  for (int a = 0; a < 3; ++a) {
    if (!dims[a].is_number_integer() || dims[a].get<long long>() < 1) throw bad("dims must be positive integers");
    dv[a] = dims[a].get<int>();
  }
  sc.dims = {dv[0], dv[1], dv[2]};
  if (j.contains("spacing")) {
    const auto& sp = j["spacing"];
    if (!sp.is_array() || sp.size() != 3 || !sp[0].is_number() || !sp[1].is_number() || !sp[2].is_number()) {
      throw bad("spacing must be an array of 3 numbers");
    }
    sc.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
  }
  if (j.contains("components")) {
    if (!j["components"].is_number_integer()) throw bad("components must be an integer");
    sc.components = j["components"].get<int>();
    if (sc.components != 1 && sc.components != 3) throw bad("components must be 1 or 3");
  }
  if (!j["raw"].is_string() || j["raw"].get<std::string>().empty()) throw bad("raw must be a file name");
  sc.raw = j["raw"].get<std::string>();
  if (j.contains("bvalue")) {
    if (!j["bvalue"].is_number()) throw bad("bvalue must be a number");
    sc.bvalue = j["bvalue"].get<double>();
  }
  return sc;
}

inline std::vector<double> read_raw(const fs::path& sidecar_path, const Sidecar& sc) {
  const fs::path raw_path = sidecar_path.parent_path() / sc.raw;
  const std::string bytes = read_text(raw_path);
  const std::size_t expected = 4 * sc.dims.count() * static_cast<std::size_t>(sc.components);
  if (bytes.size() != expected) {
    throw IoError(IoErrorKind::LengthMismatch, raw_path.string() + ": expected " + std::to_string(expected) +
                                                   " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<double> values(expected / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = decode_f32le(p + 4 * i);
  return values;
}

inline void write_container(const fs::path& sidecar_path, const Dims& d, const Spacing& s, int components,
                            const std::vector<double>& values, std::optional<double> bvalue) {
  if (!sidecar_path.parent_path().empty()) {
    std::error_code ec;
    fs::create_directories(sidecar_path.parent_path(), ec);
    if (ec) throw IoError(IoErrorKind::Unwritable, sidecar_path.parent_path().string() + ": " + ec.message());
  }
  const std::string raw_name = sidecar_path.stem().string() + ".raw";
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) encode_f32le(values[i], bytes.data() + 4 * i);
  write_bytes(sidecar_path.parent_path() / raw_name, bytes.data(), bytes.size());
  write_text(sidecar_path, sidecar_json(d, s, components, raw_name, bvalue).dump(2) + "\n");
}

inline fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

}  // namespace detail

// Values are stored as float32; reading back a written volume is bit-exact
// for any volume whose values are representable in float32 (in particular
// for anything previously read from disk).
inline void write_volume(const ScalarVolume& vol, const fs::path& sidecar_path,
                         std::optional<double> bvalue = std::nullopt) {
  detail::write_container(sidecar_path, vol.dims(), vol.spacing(), 1, vol.values(), bvalue);
}

struct VolumeFile {
  ScalarVolume volume;
  std::optional<double> bvalue;
};

inline VolumeFile read_volume_file(const fs::path& sidecar_path) {
  const detail::Sidecar sc = detail::parse_sidecar(sidecar_path);
  if (sc.components != 1) {
    throw IoError(IoErrorKind::MalformedJson, sidecar_path.string() + ": expected a scalar volume (components = 1)");
  }
  return {ScalarVolume(sc.dims, detail::read_raw(sidecar_path, sc), sc.spacing), sc.bvalue};
}

inline ScalarVolume read_volume(const fs::path& sidecar_path) { return read_volume_file(sidecar_path).volume; }

inline void write_field(const DisplacementField& field, const fs::path& sidecar_path) {
  std::vector<double> flat;
  flat.reserve(field.size() * 3);
  for (const auto& v : field.data()) {
    flat.push_back(v.x);
    flat.push_back(v.y);
    flat.push_back(v.z);
  }
  detail::write_container(sidecar_path, field.dims(), field.spacing(), 3, flat, std::nullopt);
}

inline DisplacementField read_field(const fs::path& sidecar_path) {
  const detail::Sidecar sc = detail::parse_sidecar(sidecar_path);
  if (sc.components != 3) {
    throw IoError(IoErrorKind::MalformedJson, sidecar_path.string() + ": expected a displacement field (components = 3)");
  }
  const std::vector<double> flat = detail::read_raw(sidecar_path, sc);
  std::vector<Vec3> data(sc.dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
  return DisplacementField(sc.dims, std::move(data), sc.spacing);
}

inline void write_mask(const RoiMask& mask, const fs::path& sidecar_path) {
  std::vector<double> vals(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) vals[i] = mask[i] ? 1.0 : 0.0;
  detail::write_container(sidecar_path, mask.dims(), mask.spacing(), 1, vals, std::nullopt);
}

inline RoiMask read_mask(const fs::path& sidecar_path) {
  const ScalarVolume v = read_volume(sidecar_path);
  RoiMask m(v.dims(), 0, v.spacing());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 1.0) {
      m[i] = 1;
    } else if (v[i] != 0.0) {
      throw IoError(IoErrorKind::InvalidMask, sidecar_path.string() + ": values must be 0 or 1");
    }
  }
  return m;
}

struct LoadedCase {
  std::string case_id;
  BValueSeries series;
  RoiMask roi;
  std::optional<double> ga_weeks;
  nlohmann::json truth;  // null when absent
};

inline LoadedCase read_case(const fs::path& manifest_path) {
  const nlohmann::json j = detail::parse_json(manifest_path);
  const auto bad = [&](const std::string& why) {
    return IoError(IoErrorKind::MalformedJson, manifest_path.string() + ": " + why);
  };
  if (!j.is_object()) throw bad("manifest must be an object");
  static const std::set<std::string> known{"case_id", "ga_weeks", "volumes", "roi", "truth"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw bad("unknown key '" + key + "'");
  }
  if (!j.contains("case_id") || !j["case_id"].is_string()) throw bad("case_id must be a string");
  if (!j.contains("volumes") || !j["volumes"].is_array()) throw bad("volumes must be an array");
  if (!j.contains("roi") || !j["roi"].is_string()) throw bad("roi must be a path");

  LoadedCase out;
  out.case_id = j["case_id"].get<std::string>();
  if (j.contains("ga_weeks")) {
    if (!j["ga_weeks"].is_number()) throw bad("ga_weeks must be a number");
    out.ga_weeks = j["ga_weeks"].get<double>();
  }
  if (j.contains("truth")) out.truth = j["truth"];
  const fs::path base = manifest_path.parent_path();

  std::vector<std::pair<double, std::string>> entries;
  for (const auto& e : j["volumes"]) {
    if (!e.is_object() || !e.contains("bvalue") || !e["bvalue"].is_number() || !e.contains("path") ||
        !e["path"].is_string() || e.size() != 2) {
      throw bad("each volume entry needs exactly a numeric 'bvalue' and a string 'path'");
    }
    entries.emplace_back(e["bvalue"].get<double>(), e["path"].get<std::string>());
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].first == entries[i - 1].first) {
      throw IoError(IoErrorKind::DuplicateBValue, manifest_path.string() + ": b = " + std::to_string(entries[i].first));
    }
  }
  if (entries.empty() || entries.front().first != 0.0) throw IoError(IoErrorKind::MissingB0, manifest_path.string());
  if (entries.size() < 2) throw bad("need at least two b-values");

  std::vector<double> bvalues;
  std::vector<ScalarVolume> vols;
  for (const auto& [b, p] : entries) {
    const fs::path vp = detail::resolve(base, p);
    if (!fs::exists(vp)) throw IoError(IoErrorKind::MissingFile, vp.string());
    VolumeFile vf = read_volume_file(vp);
    if (!vols.empty() && !(vf.volume.dims() == vols.front().dims())) {
      throw IoError(IoErrorKind::DimMismatch, vp.string() + ": " + vf.volume.dims().str() + " vs " +
                                                  vols.front().dims().str());
    }
    bvalues.push_back(b);
    vols.push_back(std::move(vf.volume));
  }
  const fs::path roi_path = detail::resolve(base, j["roi"].get<std::string>());
  if (!fs::exists(roi_path)) throw IoError(IoErrorKind::MissingFile, roi_path.string());
  out.roi = read_mask(roi_path);
  if (!(out.roi.dims() == vols.front().dims())) {
    throw IoError(IoErrorKind::DimMismatch, roi_path.string() + ": ROI " + out.roi.dims().str() + " vs series " +
                                                vols.front().dims().str());
  }
  try {
    out.series = BValueSeries(std::move(bvalues), std::move(vols));
  } catch (const InvalidArgument& e) {
    throw bad(e.what());
  }
  return out;
}

// Writes volumes as b%04d.json plus roi.json and manifest.json into `dir`.
inline fs::path write_case(const fs::path& dir, const std::string& case_id, const BValueSeries& series,
                           const RoiMask& roi, std::optional<double> ga_weeks = std::nullopt,
                           const nlohmann::json& truth = nullptr) {
  nlohmann::json j;
  j["case_id"] = case_id;
  if (ga_weeks) j["ga_weeks"] = *ga_weeks;
  j["volumes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "b%04d.json", static_cast<int>(std::lround(series.bvalue(i))));
    write_volume(series[i], dir / name, series.bvalue(i));
    j["volumes"].push_back({{"bvalue", series.bvalue(i)}, {"path", name}});
  }
  write_mask(roi, dir / "roi.json");
  j["roi"] = "roi.json";
  if (!truth.is_null()) j["truth"] = truth;
  const fs::path manifest = dir / "manifest.json";
  detail::write_text(manifest, j.dump(2) + "\n");
  return manifest;
}

}  // namespace mcdwi
