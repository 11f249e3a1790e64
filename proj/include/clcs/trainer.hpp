#pragma once

// Two-branch training loop: warmup on every pixel, then per-epoch threshold
// refresh, confident-pixel voting and the selected loss mix.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clcs/data.hpp"
#include "clcs/losses.hpp"
#include "clcs/metrics.hpp"
#include "clcs/model.hpp"
#include "clcs/selection.hpp"

namespace clcs {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t warmup_epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double tau = 0.9;
  LossWeights weights;
  std::uint64_t seed = 0;
  bool discrepancy_enabled = true;
  bool selection_enabled = true;
  NblMode nbl_mode = NblMode::full;
  ThresholdMapping mapping = ThresholdMapping::convex;
  ArchConfig arch;
  std::size_t eval_batch = 25;

  void validate() const;
};

/// Named configurations of the component ladder.
enum class Rung { baseline, discrepancy, ccv, ccv_linear, nbl_rce_only, full };

std::span<const Rung> all_rungs();
std::string rung_name(Rung r);
std::optional<Rung> parse_rung(const std::string& name);
/// `base` with the component flags of `r` applied.
TrainConfig apply_rung(TrainConfig base, Rung r);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  bool warmup = true;
  // Threshold state in effect during the epoch, per branch; empty in warmup.
  std::vector<double> thresholds1, thresholds2;
  std::vector<std::uint64_t> sigma1, sigma2;
  std::vector<std::uint64_t> label_pixels;     // noisy-label pixel counts seen this epoch
  std::vector<std::uint64_t> selected_pixels;  // clean-set pixels per noisy label
  std::uint64_t noisy_pixels = 0;              // pixels sent to the noise balance loss
  std::vector<std::optional<double>> clean_set_ratio;  // diagnostic tap only
  std::uint64_t divergent_pixels = 0;          // pred1 != pred2 over the epoch
  double loss_clean = 0, loss_nbl = 0, loss_dis = 0, loss_total = 0;  // batch means
  SegmentationScores eval;                     // branch 1 on the test split
};

/// Clean training labels indexed like the training set. Only feeds
/// diagnostics and never reaches a loss.
struct DiagnosticTap {
  std::vector<std::vector<Label>> clean_labels;
};

struct TrainResult {
  TwoBranchModel<float> model;
  std::vector<EpochLog> logs;
};

/// p -= lr * grad.
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr);

using EpochCallback = std::function<void(const EpochLog&)>;

/// `test` must carry clean labels. On a non-finite loss, throws
/// std::runtime_error describing the batch; if `dump_dir` is set the same
/// report is written to nonfinite_batch.txt there.
TrainResult run(std::span<const TrainingSample> train, std::span<const Sample> test,
                const TrainConfig& cfg, const DiagnosticTap* tap = nullptr,
                const EpochCallback& on_epoch = {},
                const std::optional<std::filesystem::path>& dump_dir = std::nullopt);

SegmentationScores evaluate(const TwoBranchModel<float>& model, std::span<const Sample> test,
                            std::size_t classes, std::size_t batch = 25);

/// epochs.csv, thresholds.csv, selection.csv, clean_ratio.csv,
/// divergence.csv, scores.csv and summary.txt.
void write_run_outputs(const std::filesystem::path& dir, std::span<const EpochLog> logs,
                       std::span<const std::string> class_names, const TrainConfig& cfg);

}  // namespace clcs
