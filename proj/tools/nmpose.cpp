// Command-line front end for the pose pipeline.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nmpose/error.hpp"
#include "nmpose/kernels.hpp"
#include "nmpose/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nmpose;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string model;
  std::string anchor;
  std::string predictions;
  std::string report;
  std::string svg;
  std::string encoder_ckpt;
  bool retrain_after_merge = false;
  bool quiet = false;
};

PipelineConfig resolve_config(const Options& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.seed) c.set_seed(*o.seed);
  if (o.retrain_after_merge) c.retrain_after_merge = true;
  c.validate();
  return c;
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotation-free category-level pose estimation with neural meshes"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "pipeline config (JSON)");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_flag("--quiet", o.quiet, "suppress progress output");
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", o.out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train encoder and per-instance meshes");
  add_common(train);
  train->add_option("--data", o.data, "dataset directory")->required();
  train->add_option("--out", o.out, "model directory")->required();

  auto* merge = app.add_subcommand("merge", "canonicalize and merge instance meshes");
  add_common(merge);
  merge->add_option("--model", o.model, "model directory")->required();
  merge->add_option("--data", o.data, "dataset directory (for relabeling)");
  merge->add_flag("--retrain-after-merge", o.retrain_after_merge, "keep training the anchor on relabeled views");

  auto* infer = app.add_subcommand("infer", "estimate poses of the test split");
  add_common(infer);
  infer->add_option("--model", o.model, "model directory")->required();
  infer->add_option("--data", o.data, "dataset directory")->required();
  infer->add_option("--out", o.out, "predictions file")->required();
  infer->add_option("--encoder-ckpt", o.encoder_ckpt, "encoder checkpoint overriding <model>/encoder.nmen");

  auto* eval = app.add_subcommand("eval", "score predictions after anchor alignment");
  add_common(eval);
  eval->add_option("--model", o.model, "model directory")->required();
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--anchor", o.anchor, "image id carrying the pose definition");
  eval->add_option("--predictions", o.predictions, "predictions file from infer");
  eval->add_option("--out", o.out, "report directory")->required();

  auto* run = app.add_subcommand("run", "gen, train, merge, infer and eval in one go");
  add_common(run);
  run->add_option("--out", o.out, "output directory")->required();
  run->add_flag("--retrain-after-merge", o.retrain_after_merge, "keep training the anchor on relabeled views");

  auto* report = app.add_subcommand("report", "print a metrics table");
  report->add_option("--report", o.report, "report.json from eval")->required();
  report->add_option("--svg", o.svg, "write an error histogram");
  report->add_flag("--quiet", o.quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const StageLog log = [&](const std::string& line) {
    if (!o.quiet) std::cerr << line << "\n";
  };
  if (!o.quiet) std::cerr << "kernels: " << kernels::name(kernels::active()) << "\n";

  PipelineConfig config;
  if (!report->parsed()) {
    try {
      config = resolve_config(o);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
  }

  try {
    if (gen->parsed()) {
      cmd_gen(config, o.out, log);
    } else if (train->parsed()) {
      cmd_train(config, o.data, o.out, log);
    } else if (merge->parsed()) {
      cmd_merge(config, o.model, o.data, log);
    } else if (infer->parsed()) {
      std::optional<fs::path> ckpt;
      if (!o.encoder_ckpt.empty()) ckpt = o.encoder_ckpt;
      cmd_infer(config, o.model, o.data, o.out, log, ckpt);
    } else if (eval->parsed()) {
      const std::string anchor = o.anchor.empty() ? config.infer.anchor : o.anchor;
      std::optional<fs::path> preds;
      if (!o.predictions.empty()) preds = o.predictions;
      cmd_eval(config, o.model, o.data, anchor, o.out, preds, log);
    } else if (run->parsed()) {
      const MetricsReport m = cmd_run(config, o.out, log);
      std::cout << "median " << m.median << " acc30 " << m.acc30 << " acc10 " << m.acc10 << "\n";
    } else if (report->parsed()) {
      std::optional<fs::path> svg;
      if (!o.svg.empty()) svg = o.svg;
      std::cout << cmd_report(o.report, svg);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
