// airwayseg: phantom generation, cascade inference, evaluation and reporting.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "airwayseg/commands.hpp"
#include "airwayseg/config.hpp"

namespace {

using namespace airwayseg;

struct CommonFlags {
  std::string config_path;
  std::optional<std::string> output;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "INI config file (default: $AIRWAYSEG_CONFIG)");
  cmd->add_option("-o,--output", f.output, "Output directory");
  cmd->add_flag("--dump-config", f.dump_config, "Print the effective configuration and exit");
}

RunConfig load_effective(const CommonFlags& f) {
  RunConfig cfg;
  if (const auto path = resolve_config_path(f.config_path)) cfg = load_config(*path);
  if (f.output) cfg.output = *f.output;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine airway segmentation pipeline"};
  app.require_subcommand(1);

  CommonFlags phantom_flags;
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> name;
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic airway phantoms (image + ground truth)");
  add_common(phantom, phantom_flags);
  phantom->add_option("-n,--count", count, "Number of phantoms");
  phantom->add_option("-s,--seed", seed, "Seed of the first phantom; later ones count up");
  phantom->add_option("--name", name, "Case name prefix");

  CommonFlags run_flags;
  std::optional<std::string> input;
  std::optional<std::size_t> workers;
  std::optional<double> margin;
  bool no_lcc = false;
  auto* run = app.add_subcommand("run", "Run the cascade on a file, directory or glob of volumes");
  add_common(run, run_flags);
  run->add_option("-i,--input", input, "Input volume, directory or glob");
  run->add_option("-j,--workers", workers, "Cases processed concurrently");
  run->add_option("--margin", margin, "ROI margin in mm");
  run->add_flag("--no-lcc", no_lcc, "Skip largest-connected-component filtering");

  EvalOptions eval_opt;
  std::string eval_images;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("pred_dir", eval_opt.pred_dir, "Directory of predicted masks")->required();
  eval->add_option("gt_dir", eval_opt.gt_dir, "Directory of ground-truth masks")->required();
  eval->add_option("-o,--out", eval_opt.out_dir, "Output directory for cases.csv / aggregate.json")->required();
  eval->add_flag("--overlay", eval_opt.overlay, "Write mid-slice error overlays (PPM)");
  eval->add_option("--images", eval_images, "Directory holding <case>_img volumes for overlays");

  std::vector<std::string> report_csvs;
  std::vector<std::string> report_labels;
  std::string report_json;
  auto* report = app.add_subcommand("report", "Aggregate one or more cases.csv files into a mean±std table");
  report->add_option("csv", report_csvs, "cases.csv files written by eval")->required();
  report->add_option("-l,--label", report_labels, "Row label per CSV (default: parent directory name)");
  report->add_option("--json", report_json, "Also write the table as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) {
      RunConfig cfg = load_effective(phantom_flags);
      if (count) cfg.phantom_count = *count;
      if (seed) cfg.phantom.rng_seed = *seed;
      if (name) cfg.phantom_name = *name;
      cfg.phantom.validate();
      if (phantom_flags.dump_config) {
        std::cout << emit_config(cfg);
        return 0;
      }
      return cmd_phantom(cfg, std::cerr);
    }
    if (*run) {
      RunConfig cfg = load_effective(run_flags);
      if (input) cfg.input = *input;
      if (workers) cfg.workers = *workers;
      if (margin) cfg.cascade.margin = *margin;
      if (no_lcc) cfg.cascade.keep_lcc = false;
      cfg.cascade.validate();
      if (run_flags.dump_config) {
        std::cout << emit_config(cfg);
        return 0;
      }
      return cmd_run(cfg, std::cerr);
    }
    if (*eval) {
      if (!eval_images.empty()) eval_opt.image_dir = eval_images;
      return cmd_eval(eval_opt, std::cerr);
    }
    if (*report) {
      std::vector<std::filesystem::path> paths(report_csvs.begin(), report_csvs.end());
      std::optional<std::filesystem::path> json;
      if (!report_json.empty()) json = report_json;
      return cmd_report(paths, report_labels, json, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
