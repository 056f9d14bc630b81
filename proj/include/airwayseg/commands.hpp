#pragma once

// Batch commands behind the `airwayseg` executable: phantom, run, eval and
// report. Each returns a process exit code and logs to the given stream.
//
// File naming: a case key is the file name with its format suffix
// (.nii.gz, .nii, .raw, .meta) and then one role tag (_img, _gt, _pred,
// _seg, _label) removed. `run` reads `_img` (or untagged) volumes and writes
// `<key>_pred.nii.gz`; `eval` pairs predictions and labels by key.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <glob.h>

#include <nlohmann/json.hpp>

#include "airwayseg/backend.hpp"
#include "airwayseg/cascade.hpp"
#include "airwayseg/config.hpp"
#include "airwayseg/io.hpp"
#include "airwayseg/metrics.hpp"
#include "airwayseg/phantom.hpp"

namespace airwayseg {

namespace fs = std::filesystem;

// File naming ------------------------------------------------------------------

inline bool is_volume_file(const fs::path& p) {
  const std::string n = p.filename().string();
  return io_detail::ends_with(n, ".nii") || io_detail::ends_with(n, ".nii.gz") || io_detail::ends_with(n, ".meta");
}

inline std::string strip_format_suffix(std::string name) {
  for (const char* suffix : {".nii.gz", ".nii", ".raw.gz", ".raw", ".meta"}) {
    if (io_detail::ends_with(name, suffix)) return name.substr(0, name.size() - std::string(suffix).size());
  }
  return name;
}

/// Role tag of a stem ("_img", "_gt", ...) or empty.
inline std::string role_tag(const std::string& stem) {
  for (const char* tag : {"_img", "_gt", "_pred", "_seg", "_label"}) {
    if (io_detail::ends_with(stem, tag)) return tag;
  }
  return {};
}

inline std::string case_key(const fs::path& p) {
  const std::string stem = strip_format_suffix(p.filename().string());
  return stem.substr(0, stem.size() - role_tag(stem).size());
}

inline std::vector<fs::path> list_volume_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_volume_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Resolves `input` as a directory (image volumes inside it), a glob pattern
/// or a single file.
inline std::vector<fs::path> resolve_inputs(const std::string& input) {
  if (input.empty()) throw Error(ErrorCode::config, "run.input is not set");
  if (fs::is_directory(input)) {
    std::vector<fs::path> out;
    for (const auto& p : list_volume_files(input)) {
      const std::string tag = role_tag(strip_format_suffix(p.filename().string()));
      if (tag.empty() || tag == "_img") out.push_back(p);
    }
    return out;
  }
  if (input.find_first_of("*?[") != std::string::npos) {
    glob_t g{};
    std::vector<fs::path> out;
    if (::glob(input.c_str(), 0, nullptr, &g) == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (out.empty()) throw Error(ErrorCode::io, "no input matches '" + input + "'");
    std::sort(out.begin(), out.end());
    return out;
  }
  if (!fs::exists(input)) throw Error(ErrorCode::io, "input '" + input + "' does not exist");
  return {fs::path(input)};
}

// CSV ----------------------------------------------------------------------------

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
      field_started = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (field_started || !field.empty() || !row.empty()) {
        row.push_back(field);
        rows.push_back(row);
      }
      row.clear();
      field.clear();
      field_started = false;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  io_detail::write_file_atomic(path, io_detail::Bytes(text.begin(), text.end()));
}

// phantom --------------------------------------------------------------------------

inline std::string phantom_case_name(const std::string& base, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03llu", static_cast<unsigned long long>(seed));
  return base + buf;
}

inline nlohmann::ordered_json phantom_spec_json(const PhantomSpec& p) {
  return {{"grid_dims", p.grid_dims},
          {"spacing", p.spacing},
          {"depth", p.depth},
          {"trachea_radius", p.trachea_radius},
          {"trachea_length", p.trachea_length},
          {"radius_ratio", p.radius_ratio},
          {"length_ratio", p.length_ratio},
          {"branch_angle", p.branch_angle},
          {"lumen_hu", p.lumen_hu},
          {"wall_hu", p.wall_hu},
          {"lung_hu", p.lung_hu},
          {"body_hu", p.body_hu},
          {"noise_sigma", p.noise_sigma},
          {"rng_seed", p.rng_seed},
          {"lung_center_frac", p.lung_center_frac},
          {"lung_semi_axes_frac", p.lung_semi_axes_frac}};
}

/// Generates `phantom_count` phantoms with seeds rng_seed, rng_seed + 1, ...
/// into `output`, plus manifest.json.
inline int cmd_phantom(const RunConfig& cfg, std::ostream& log) {
  cfg.phantom.validate();
  if (cfg.output.empty()) throw Error(ErrorCode::config, "run.output is not set");
  fs::create_directories(cfg.output);
  nlohmann::ordered_json manifest;
  manifest["cases"] = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < cfg.phantom_count; ++n) {
    PhantomSpec spec = cfg.phantom;
    spec.rng_seed = cfg.phantom.rng_seed + n;
    const std::string name = phantom_case_name(cfg.phantom_name, spec.rng_seed);
    const auto [vol, gt] = generate_phantom(spec);
    const fs::path img_path = fs::path(cfg.output) / (name + "_img.nii.gz");
    const fs::path gt_path = fs::path(cfg.output) / (name + "_gt.nii.gz");
    write_volume(vol, img_path);
    write_volume(gt, gt_path);
    manifest["cases"].push_back({{"name", name},
                                 {"seed", spec.rng_seed},
                                 {"image", img_path.filename().string()},
                                 {"ground_truth", gt_path.filename().string()},
                                 {"lumen_voxels", count_nonzero(gt)},
                                 {"spec", phantom_spec_json(spec)}});
    log << "phantom " << name << ": " << count_nonzero(gt) << " airway voxels\n";
  }
  write_text_atomic(fs::path(cfg.output) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// run ------------------------------------------------------------------------------

struct CaseTiming {
  std::string id;
  StageTimes times;
  bool ok = false;
  std::string error;
};

/// Runs the cascade on every input case with `workers` cases in flight.
/// Writes `<key>_pred.nii.gz` per case and timing.csv; failed cases are
/// logged and skipped, and make the exit code 1.
inline int cmd_run(const RunConfig& cfg, std::ostream& log) {
  cfg.cascade.validate();
  if (cfg.output.empty()) throw Error(ErrorCode::config, "run.output is not set");
  const std::vector<fs::path> inputs = resolve_inputs(cfg.input);
  if (inputs.empty()) throw Error(ErrorCode::io, "no input volumes under '" + cfg.input + "'");
  fs::create_directories(cfg.output);
  const auto coarse = make_backend(cfg.coarse_backend);
  const auto fine = make_backend(cfg.fine_backend);

  std::vector<CaseTiming> results(inputs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      CaseTiming& r = results[i];
      r.id = case_key(inputs[i]);
      try {
        const Volume v = read_volume(inputs[i]);
        const CascadeResult res = run_cascade_detailed(v, cfg.cascade, *coarse, *fine);
        write_volume(res.mask, fs::path(cfg.output) / (r.id + "_pred.nii.gz"));
        r.times = res.times;
        r.ok = true;
        std::lock_guard lock(log_mutex);
        log << "case " << r.id << ": " << count_nonzero(res.mask) << " voxels in " << fixed(res.times.total, 3)
            << " s\n";
      } catch (const std::exception& e) {
        r.error = e.what();
        std::lock_guard lock(log_mutex);
        log << "case " << r.id << " FAILED: " << e.what() << "\n";
      }
    }
  };
  const std::size_t nthreads = std::clamp<std::size_t>(cfg.workers, 1, inputs.size());
  // External backends own one child process per call and are not shared.
  const bool shareable = coarse->concurrency_safe() && fine->concurrency_safe();
  if (nthreads == 1 || !shareable) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::string csv = "id,status,coarse_s,crop_s,fine_s,post_s,total_s,error\n";
  bool all_ok = true;
  for (const auto& r : results) {
    all_ok = all_ok && r.ok;
    csv += csv_field(r.id) + "," + (r.ok ? "ok" : "failed") + "," + fixed(r.times.coarse) + "," +
           fixed(r.times.crop) + "," + fixed(r.times.fine) + "," + fixed(r.times.post) + "," +
           fixed(r.times.total) + "," + csv_field(r.error) + "\n";
  }
  write_text_atomic(fs::path(cfg.output) / "timing.csv", csv);
  return all_ok ? 0 : 1;
}

// eval -------------------------------------------------------------------------------

struct EvalOptions {
  fs::path pred_dir;
  fs::path gt_dir;
  fs::path out_dir;
  bool overlay = false;
  std::optional<fs::path> image_dir;  // overlays; defaults to gt_dir
};

inline nlohmann::ordered_json aggregate_json(const AggregateReport& agg) {
  nlohmann::ordered_json j;
  j["case_count"] = agg.case_count;
  nlohmann::ordered_json metrics;
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    metrics[std::string(kMetricNames[k])] = {{"mean", agg.summary[k].mean},
                                             {"std", agg.summary[k].std},
                                             {"formatted", format_pm(agg.summary[k])}};
  }
  j["metrics"] = metrics;
  return j;
}

inline std::string case_csv_header() { return "id,tp,fp,fn,tn,dice,jaccard,recall,precision,fne,fpe\n"; }

inline std::string case_csv_row(const CaseReport& r) {
  std::string row = csv_field(r.id) + "," + std::to_string(r.counts.tp) + "," + std::to_string(r.counts.fp) + "," +
                    std::to_string(r.counts.fn) + "," + std::to_string(r.counts.tn);
  for (double v : as_array(r.metrics)) row += "," + fixed(v);
  return row + "\n";
}

/// Pairs label files by case key (image `_img` files are ignored), writes
/// cases.csv and aggregate.json into `out_dir`, optionally mid-slice overlays.
inline int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  for (const auto& d : {opt.pred_dir, opt.gt_dir}) {
    if (!fs::is_directory(d)) throw Error(ErrorCode::io, "'" + d.string() + "' is not a directory");
  }
  auto index = [](const fs::path& dir) {
    std::map<std::string, fs::path> m;
    for (const auto& p : list_volume_files(dir)) {
      if (role_tag(strip_format_suffix(p.filename().string())) == "_img") continue;
      const auto [it, fresh] = m.emplace(case_key(p), p);
      if (!fresh) throw Error(ErrorCode::io, "duplicate case '" + it->first + "' in " + dir.string());
    }
    return m;
  };
  const auto preds = index(opt.pred_dir);
  const auto gts = index(opt.gt_dir);

  std::vector<std::string> unpaired;
  for (const auto& [k, p] : preds) {
    if (!gts.count(k)) unpaired.push_back(p.string());
  }
  for (const auto& [k, p] : gts) {
    if (!preds.count(k)) unpaired.push_back(p.string());
  }
  for (const auto& u : unpaired) log << "unpaired: " << u << "\n";

  std::vector<CaseReport> reports;
  fs::create_directories(opt.out_dir);
  for (const auto& [key, pred_path] : preds) {
    const auto gt_it = gts.find(key);
    if (gt_it == gts.end()) continue;
    const Mask pred = read_mask(pred_path);
    const Mask gt = read_mask(gt_it->second);
    reports.push_back(evaluate_case(pred, gt, key));
    if (opt.overlay) {
      const fs::path img_dir = opt.image_dir.value_or(opt.gt_dir);
      std::optional<fs::path> img;
      for (const auto& p : list_volume_files(img_dir)) {
        if (case_key(p) == key && role_tag(strip_format_suffix(p.filename().string())) == "_img") img = p;
      }
      if (!img) {
        log << "overlay skipped for " << key << ": no image in " << img_dir << "\n";
      } else {
        const Volume v = read_volume(*img);
        render_overlay(v, pred, gt, 2, v.dims()[2] / 2, opt.out_dir / (key + "_overlay.ppm"));
      }
    }
  }
  if (reports.empty()) throw Error(ErrorCode::invalid_argument, "no paired cases between prediction and label dirs");

  std::string csv = case_csv_header();
  for (const auto& r : reports) csv += case_csv_row(r);
  write_text_atomic(opt.out_dir / "cases.csv", csv);
  const AggregateReport agg = aggregate(reports);
  nlohmann::ordered_json j = aggregate_json(agg);
  j["unpaired"] = unpaired;
  write_text_atomic(opt.out_dir / "aggregate.json", j.dump(2) + "\n");
  log << "evaluated " << reports.size() << " cases: dice " << format_pm(agg["dice"]) << "\n";
  return 0;
}

// report -------------------------------------------------------------------------------

inline std::vector<CaseReport> read_case_csv(const fs::path& path) {
  const auto bytes = io_detail::read_file(path);
  const auto rows = parse_csv(std::string(bytes.begin(), bytes.end()));
  if (rows.empty() || rows[0].size() < 11 || rows[0][0] != "id") {
    throw Error(ErrorCode::format, "'" + path.string() + "' is not a per-case metrics CSV");
  }
  std::vector<CaseReport> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() < 11) throw Error(ErrorCode::format, path.string() + " row " + std::to_string(i) + " is short");
    CaseReport r;
    r.id = row[0];
    const std::string where = path.string() + " row " + std::to_string(i);
    r.counts = {config_detail::to_count(row[1], where), config_detail::to_count(row[2], where),
                config_detail::to_count(row[3], where), config_detail::to_count(row[4], where)};
    // Recompute from counts rather than trusting the rounded columns.
    r.metrics = derive_metrics(r.counts);
    out.push_back(r);
  }
  return out;
}

/// One table row per CSV: "| label | scans | dice | jaccard | recall |
/// precision | fne | fpe |" with mean±std cells.
inline std::string format_report_table(const std::vector<std::pair<std::string, AggregateReport>>& rows) {
  std::string out = "| Dataset | Scans | Dice | Jaccard | Recall | Precision | False Negative | False Positive |\n";
  out += "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [label, agg] : rows) {
    out += "| " + label + " | " + std::to_string(agg.case_count);
    for (const auto& s : agg.summary) out += " | " + format_pm(s);
    out += " |\n";
  }
  return out;
}

inline int cmd_report(const std::vector<fs::path>& csvs, const std::vector<std::string>& labels,
                      const std::optional<fs::path>& json_out, std::ostream& out) {
  if (csvs.empty()) throw Error(ErrorCode::invalid_argument, "report needs at least one cases.csv");
  std::vector<std::pair<std::string, AggregateReport>> rows;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < csvs.size(); ++i) {
    const std::string label = i < labels.size() ? labels[i] : csvs[i].parent_path().filename().string();
    const AggregateReport agg = aggregate(read_case_csv(csvs[i]));
    rows.emplace_back(label, agg);
    nlohmann::ordered_json row;
    row["dataset"] = label;
    const nlohmann::ordered_json body = aggregate_json(agg);
    for (const auto& [k, v] : body.items()) row[k] = v;
    j.push_back(row);
  }
  out << format_report_table(rows);
  if (json_out) write_text_atomic(*json_out, j.dump(2) + "\n");
  return 0;
}

}  // namespace airwayseg
