#pragma once

// INI-style run configuration.
//
//   [run]            input, output, workers
//   [cascade]        coarse_spacing, prob_threshold, margin, patch_dims, stride,
//                    blend_sigma_frac, connectivity, keep_lcc, workers
//   [coarse_backend] kind = region_grow | oracle_file | external | threshold,
//   [fine_backend]   plus the kind's parameters (see BackendDescriptor)
//   [phantom]        every PhantomSpec field, plus name and count
//
// Triples are written "x y z"; a single number is broadcast to all axes.
// Unknown keys are rejected so typos do not silently fall back to defaults.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "airwayseg/backend.hpp"
#include "airwayseg/cascade.hpp"
#include "airwayseg/error.hpp"
#include "airwayseg/phantom.hpp"

namespace airwayseg {

inline constexpr const char* kConfigEnvVar = "AIRWAYSEG_CONFIG";

struct RunConfig {
  std::string input;   // file, directory or glob pattern
  std::string output;  // directory
  std::size_t workers = 1;
  CascadeConfig cascade;
  BackendDescriptor coarse_backend{BackendKind::region_grow, {}};
  BackendDescriptor fine_backend{BackendKind::region_grow, {{"seed_below", "-950"}}};
  PhantomSpec phantom;
  std::string phantom_name = "phantom";
  std::size_t phantom_count = 1;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace config_detail {

using boost::property_tree::ptree;

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(const Vec3& v) { return fmt(v[0]) + " " + fmt(v[1]) + " " + fmt(v[2]); }
inline std::string fmt(const Index3& v) {
  return std::to_string(v[0]) + " " + std::to_string(v[1]) + " " + std::to_string(v[2]);
}

[[noreturn]] inline void bad(const std::string& where, const std::string& why) {
  throw Error(ErrorCode::config, where + ": " + why);
}

inline double to_double(const std::string& s, const std::string& where) {
  double v = 0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end || !std::isfinite(v)) bad(where, "'" + s + "' is not a number");
  return v;
}

inline long long to_int(const std::string& s, const std::string& where) {
  long long v = 0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end) bad(where, "'" + s + "' is not an integer");
  return v;
}

inline std::size_t to_count(const std::string& s, const std::string& where) {
  const long long v = to_int(s, where);
  if (v < 0) bad(where, "must be non-negative");
  return static_cast<std::size_t>(v);
}

inline bool to_bool(const std::string& s, const std::string& where) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(where, "'" + s + "' is not a boolean");
}

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline Vec3 to_vec3(const std::string& s, const std::string& where) {
  const auto w = words(s);
  if (w.size() == 1) {
    const double v = to_double(w[0], where);
    return {v, v, v};
  }
  if (w.size() != 3) bad(where, "expected 1 or 3 numbers");
  return {to_double(w[0], where), to_double(w[1], where), to_double(w[2], where)};
}

inline Index3 to_index3(const std::string& s, const std::string& where) {
  const auto w = words(s);
  if (w.size() == 1) {
    const std::size_t v = to_count(w[0], where);
    return {v, v, v};
  }
  if (w.size() != 3) bad(where, "expected 1 or 3 integers");
  return {to_count(w[0], where), to_count(w[1], where), to_count(w[2], where)};
}

inline void apply_run(RunConfig& c, const ptree& sec) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    const std::string where = "run." + key;
    if (key == "input") c.input = v;
    else if (key == "output") c.output = v;
    else if (key == "workers") c.workers = to_count(v, where);
    else bad(where, "unknown key");
  }
}

inline void apply_cascade(CascadeConfig& c, const ptree& sec) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    const std::string where = "cascade." + key;
    if (key == "coarse_spacing") c.coarse_spacing = to_vec3(v, where);
    else if (key == "prob_threshold") c.prob_threshold = to_double(v, where);
    else if (key == "margin") c.margin = to_double(v, where);
    else if (key == "patch_dims") c.patch_dims = to_index3(v, where);
    else if (key == "stride") c.stride = to_index3(v, where);
    else if (key == "blend_sigma_frac") c.blend_sigma_frac = to_double(v, where);
    else if (key == "connectivity") c.connectivity = static_cast<int>(to_int(v, where));
    else if (key == "keep_lcc") c.keep_lcc = to_bool(v, where);
    else if (key == "workers") c.workers = to_count(v, where);
    else bad(where, "unknown key");
  }
}

inline void apply_backend(BackendDescriptor& d, const ptree& sec, const std::string& name) {
  if (auto kind = sec.get_optional<std::string>("kind")) {
    d.kind = parse_backend_kind(*kind);
    d.parameters.clear();
  }
  for (const auto& [key, node] : sec) {
    if (key == "kind") continue;
    d.parameters[key] = node.get_value<std::string>();
  }
  try {
    validate(d);
  } catch (const Error& e) {
    bad(name, e.what());
  }
}

inline void apply_phantom(RunConfig& c, const ptree& sec) {
  PhantomSpec& p = c.phantom;
  for (const auto& [key, node] : sec) {
    const std::string v = node.get_value<std::string>();
    const std::string where = "phantom." + key;
    if (key == "grid_dims") p.grid_dims = to_index3(v, where);
    else if (key == "spacing") p.spacing = to_vec3(v, where);
    else if (key == "depth") p.depth = static_cast<int>(to_int(v, where));
    else if (key == "trachea_radius") p.trachea_radius = to_double(v, where);
    else if (key == "trachea_length") p.trachea_length = to_double(v, where);
    else if (key == "radius_ratio") p.radius_ratio = to_double(v, where);
    else if (key == "length_ratio") p.length_ratio = to_double(v, where);
    else if (key == "branch_angle") p.branch_angle = to_double(v, where);
    else if (key == "lumen_hu") p.lumen_hu = to_double(v, where);
    else if (key == "wall_hu") p.wall_hu = to_double(v, where);
    else if (key == "lung_hu") p.lung_hu = to_double(v, where);
    else if (key == "body_hu") p.body_hu = to_double(v, where);
    else if (key == "noise_sigma") p.noise_sigma = to_double(v, where);
    else if (key == "rng_seed") p.rng_seed = to_count(v, where);
    else if (key == "lung_center_frac") p.lung_center_frac = to_vec3(v, where);
    else if (key == "lung_semi_axes_frac") p.lung_semi_axes_frac = to_vec3(v, where);
    else if (key == "name") c.phantom_name = v;
    else if (key == "count") c.phantom_count = to_count(v, where);
    else bad(where, "unknown key");
  }
}

}  // namespace config_detail

/// Parses INI text on top of `base` (so absent keys keep their values) and
/// validates the cascade and phantom sections.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  using namespace config_detail;
  ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::config, std::string("config syntax: ") + e.what());
  }
  for (const auto& [section, node] : tree) {
    if (node.empty() && !node.data().empty()) bad(section, "top-level keys must belong to a section");
    if (section == "run") apply_run(base, node);
    else if (section == "cascade") apply_cascade(base.cascade, node);
    else if (section == "coarse_backend") apply_backend(base.coarse_backend, node, section);
    else if (section == "fine_backend") apply_backend(base.fine_backend, node, section);
    else if (section == "phantom") apply_phantom(base, node);
    else bad(section, "unknown section");
  }
  base.cascade.validate();
  base.phantom.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

/// Writes every field, so `parse_config(emit_config(c)) == c`.
inline std::string emit_config(const RunConfig& c) {
  using config_detail::fmt;
  std::ostringstream os;
  os << "[run]\n";
  if (!c.input.empty()) os << "input = " << c.input << "\n";
  if (!c.output.empty()) os << "output = " << c.output << "\n";
  os << "workers = " << c.workers << "\n\n";

  const CascadeConfig& k = c.cascade;
  os << "[cascade]\n"
     << "coarse_spacing = " << fmt(k.coarse_spacing) << "\n"
     << "prob_threshold = " << fmt(k.prob_threshold) << "\n"
     << "margin = " << fmt(k.margin) << "\n"
     << "patch_dims = " << fmt(k.patch_dims) << "\n"
     << "stride = " << fmt(k.stride) << "\n"
     << "blend_sigma_frac = " << fmt(k.blend_sigma_frac) << "\n"
     << "connectivity = " << k.connectivity << "\n"
     << "keep_lcc = " << (k.keep_lcc ? "true" : "false") << "\n"
     << "workers = " << k.workers << "\n\n";

  auto backend = [&os](const char* section, const BackendDescriptor& d) {
    os << "[" << section << "]\nkind = " << to_string(d.kind) << "\n";
    for (const auto& [key, value] : d.parameters) os << key << " = " << value << "\n";
    os << "\n";
  };
  backend("coarse_backend", c.coarse_backend);
  backend("fine_backend", c.fine_backend);

  const PhantomSpec& p = c.phantom;
  os << "[phantom]\n"
     << "name = " << c.phantom_name << "\n"
     << "count = " << c.phantom_count << "\n"
     << "grid_dims = " << fmt(p.grid_dims) << "\n"
     << "spacing = " << fmt(p.spacing) << "\n"
     << "depth = " << p.depth << "\n"
     << "trachea_radius = " << fmt(p.trachea_radius) << "\n"
     << "trachea_length = " << fmt(p.trachea_length) << "\n"
     << "radius_ratio = " << fmt(p.radius_ratio) << "\n"
     << "length_ratio = " << fmt(p.length_ratio) << "\n"
     << "branch_angle = " << fmt(p.branch_angle) << "\n"
     << "lumen_hu = " << fmt(p.lumen_hu) << "\n"
     << "wall_hu = " << fmt(p.wall_hu) << "\n"
     << "lung_hu = " << fmt(p.lung_hu) << "\n"
     << "body_hu = " << fmt(p.body_hu) << "\n"
     << "noise_sigma = " << fmt(p.noise_sigma) << "\n"
     << "rng_seed = " << p.rng_seed << "\n"
     << "lung_center_frac = " << fmt(p.lung_center_frac) << "\n"
     << "lung_semi_axes_frac = " << fmt(p.lung_semi_axes_frac) << "\n";
  return os.str();
}

/// Explicit path wins, then $AIRWAYSEG_CONFIG, else none.
inline std::optional<std::filesystem::path> resolve_config_path(const std::string& explicit_path) {
  if (!explicit_path.empty()) return std::filesystem::path(explicit_path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace airwayseg
