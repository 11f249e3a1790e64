// Command-line front end: dataset generation, training, ablation ladder,
// checkpoint evaluation and tensor dumps.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "clcs/config.hpp"
#include "clcs/io.hpp"
#include "clcs/trainer.hpp"

namespace fs = std::filesystem;
using namespace clcs;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string ablate;
  std::optional<std::size_t> epochs, warmup;
  std::optional<double> tau, alpha, beta;
  std::string checkpoint;
  std::string param;
  bool quiet = false;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.warmup) cfg.train.warmup_epochs = *o.warmup;
  if (o.tau) cfg.train.tau = *o.tau;
  if (o.alpha) cfg.train.weights.alpha = *o.alpha;
  if (o.beta) cfg.train.weights.beta = *o.beta;
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.ablate.empty()) {
    const auto r = parse_rung(o.ablate);
    if (!r) throw ConfigError("unknown rung '" + o.ablate + "'");
    cfg.train = apply_rung(cfg.train, *r);
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> class_names(const DatasetSpec& spec) {
  std::vector<std::string> names{"background"};
  for (const auto& c : spec.foreground) names.push_back(c.name);
  return names;
}

void print_ratios(const std::vector<Sample>& train, const std::vector<std::string>& names) {
  const auto r = dataset_clean_ratios(train, names.size());
  std::printf("%-12s %10s %12s\n", "class", "r_clean", "noise ratio");
  for (std::size_t c = 1; c < names.size(); ++c) {
    if (r[c])
      std::printf("%-12s %10.4f %11.1f%%\n", names[c].c_str(), *r[c], 100.0 * (1.0 - *r[c]));
    else
      std::printf("%-12s %10s %12s\n", names[c].c_str(), "-", "-");
  }
}

void print_scores(const SegmentationScores& s, const std::vector<std::string>& names) {
  std::printf("%-12s %8s %8s\n", "class", "dice", "iou");
  for (std::size_t c = 0; c < names.size(); ++c)
    std::printf("%-12s %8.4f %8.4f\n", names[c].c_str(), s.dice[c], s.iou[c]);
  std::printf("%-12s %8.4f %8.4f\n", "foreground", s.mean_dice, s.mean_iou);
}

DatasetFiles load_data(const Options& o, const RunConfig& cfg) {
  if (!o.data.empty()) {
    if (!fs::exists(fs::path(o.data) / "manifest.txt"))
      throw std::runtime_error("dataset not found: " + o.data);
    return read_dataset(o.data);
  }
  auto gen = generate_run_data(cfg);
  DatasetFiles d;
  d.spec = cfg.dataset_spec();
  d.noise = cfg.noise;
  d.seed = cfg.seed;
  d.train = std::move(gen.train);
  d.test = std::move(gen.test);
  return d;
}

TrainResult train_and_write(const DatasetFiles& data, const TrainConfig& tc, const fs::path& dir, bool quiet) {
  const auto names = class_names(data.spec);
  const auto view = training_view(data.train);
  DiagnosticTap tap;
  for (const auto& s : data.train) tap.clean_labels.push_back(s.clean_label);
  fs::create_directories(dir);
  auto progress = [&](const EpochLog& log) {
    if (quiet) return;
    std::fprintf(stderr, "epoch %3zu %-6s loss %.4f dice %.4f miou %.4f divergent %llu\n", log.epoch,
                 log.warmup ? "warmup" : "main", log.loss_total, log.eval.mean_dice, log.eval.mean_iou,
                 static_cast<unsigned long long>(log.divergent_pixels));
  };
  TrainResult result = run(view, data.test, tc, &tap, progress, dir);
  write_run_outputs(dir, result.logs, names, tc);
  save_checkpoint(dir / "checkpoint", result.model);
  return result;
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = o.out.empty() ? cfg.out / "data" : fs::path(o.out);
  auto gen = generate_run_data(cfg);
  DatasetFiles d;
  d.spec = cfg.dataset_spec();
  d.noise = cfg.noise;
  d.seed = cfg.seed;
  d.train = std::move(gen.train);
  d.test = std::move(gen.test);
  write_dataset(dir, d);
  std::printf("wrote %zu train / %zu test samples to %s\n", d.train.size(), d.test.size(), dir.string().c_str());
  print_ratios(d.train, class_names(d.spec));
  return 0;
}

int cmd_train(const Options& o) {
  if (o.data.empty()) throw std::runtime_error("train needs --data <dataset dir>");
  const RunConfig cfg = resolve(o);
  const DatasetFiles data = load_data(o, cfg);
  TrainConfig tc = cfg.train_config();
  tc.arch.classes = data.spec.classes();
  const fs::path dir = cfg.out;
  const auto result = train_and_write(data, tc, dir, o.quiet);
  write_text_file(dir / "run.cfg", format_run_config(cfg));
  print_scores(result.logs.back().eval, class_names(data.spec));
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig cfg = resolve(o);
  const DatasetFiles data = load_data(o, cfg);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  std::ostringstream table;
  table << "rung,mean_dice,mean_iou\n";
  std::vector<double> dice;
  int status = 0;
  for (Rung r : all_rungs()) {
    TrainConfig tc = apply_rung(cfg.train_config(), r);
    tc.arch.classes = data.spec.classes();
    try {
      const auto result = train_and_write(data, tc, dir / rung_name(r), o.quiet);
      const auto& s = result.logs.back().eval;
      table << rung_name(r) << ',' << format_real(s.mean_dice) << ',' << format_real(s.mean_iou) << '\n';
      dice.push_back(s.mean_dice);
      std::printf("%-12s dice %.4f miou %.4f\n", rung_name(r).c_str(), s.mean_dice, s.mean_iou);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "rung %s failed: %s\n", rung_name(r).c_str(), e.what());
      status = 1;
      break;
    }
    write_text_file(dir / "ablation.csv", table.str());
  }
  if (status == 0) {
    std::ostringstream trend;
    trend << "step,delta_dice\n";
    for (std::size_t i = 1; i < dice.size(); ++i)
      trend << rung_name(all_rungs()[i - 1]) << "->" << rung_name(all_rungs()[i]) << ','
            << format_real(dice[i] - dice[i - 1]) << '\n';
    write_text_file(dir / "trend.csv", trend.str());
    std::printf("%s", trend.str().c_str());
  }
  return status;
}

int cmd_evaluate(const Options& o) {
  if (o.checkpoint.empty()) throw std::runtime_error("evaluate needs --checkpoint <stem>");
  if (o.data.empty()) throw std::runtime_error("evaluate needs --data <dataset dir>");
  const RunConfig cfg = resolve(o);
  const DatasetFiles data = load_data(o, cfg);
  ArchConfig arch = cfg.train.arch;
  arch.classes = data.spec.classes();
  TwoBranchModel<float> model(arch, cfg.seed);
  load_checkpoint(o.checkpoint, model);
  const auto scores = evaluate(model, data.test, arch.classes, cfg.train.eval_batch);
  const auto names = class_names(data.spec);
  print_scores(scores, names);
  if (!o.out.empty()) {
    std::ostringstream csv;
    write_scores_csv(csv, scores, names);
    write_text_file(fs::path(o.out) / "scores.csv", csv.str());
  }
  return 0;
}

int cmd_dump(const Options& o) {
  if (o.checkpoint.empty()) throw std::runtime_error("dump needs --checkpoint <stem>");
  if (o.out.empty()) throw std::runtime_error("dump needs --out <dir>");
  const RunConfig cfg = resolve(o);
  TwoBranchModel<double> model(cfg.train.arch, cfg.seed);
  load_checkpoint(o.checkpoint, model);
  fs::create_directories(o.out);
  std::size_t written = 0;
  for (const auto* p : model.parameters()) {
    if (!o.param.empty() && p->name != o.param) continue;
    std::ofstream os(fs::path(o.out) / (p->name + ".blob"), std::ios::binary | std::ios::trunc);
    write_tensor_blob(os, p->value);
    if (!os) throw std::runtime_error("failed writing blob for " + p->name);
    ++written;
  }
  if (written == 0) throw std::runtime_error("no parameter named '" + o.param + "'");
  std::printf("wrote %zu tensor blobs to %s\n", written, o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates the same large buffers every step; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Two-branch noisy-label segmentation with curriculum selection"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "key=value config file");
    cmd->add_option("--seed", o.seed, "seed for all randomness");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--warmup", o.warmup, "warmup epochs on all pixels");
    cmd->add_option("--tau", o.tau, "base confidence threshold");
    cmd->add_option("--alpha", o.alpha, "noise balance loss weight");
    cmd->add_option("--beta", o.beta, "discrepancy loss weight");
    cmd->add_flag("--quiet", o.quiet, "no per-epoch progress");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic noisy dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "train on a dataset directory");
  common(train);
  train->add_option("--data", o.data, "dataset directory")->required();
  train->add_option("--ablate", o.ablate, "component rung: baseline, dis, ccv, ccv-linear, rce-only, full");
  auto* ablate = app.add_subcommand("ablate", "run the component ladder");
  common(ablate);
  ablate->add_option("--data", o.data, "dataset directory (generated from the config if omitted)");
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  common(eval);
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint stem (without .bin)")->required();
  auto* dump = app.add_subcommand("dump", "export checkpoint parameters as tensor blobs");
  common(dump);
  dump->add_option("--checkpoint", o.checkpoint, "checkpoint stem (without .bin)")->required();
  dump->add_option("--param", o.param, "single parameter name");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*ablate) return cmd_ablate(o);
    if (*eval) return cmd_evaluate(o);
    if (*dump) return cmd_dump(o);
  } catch (const ConfigFileMissing& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
