#include "clcs/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "clcs/io.hpp"
#include "clcs/random.hpp"

namespace clcs {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleStream = 31;

constexpr std::array<Rung, 6> kRungs{Rung::baseline, Rung::discrepancy, Rung::ccv,
                                     Rung::ccv_linear, Rung::nbl_rce_only, Rung::full};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, {kShuffleStream, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct Batch {
  Tensor<float> images;
  std::vector<Label> label;
  std::vector<std::size_t> indices;
};

template <typename S>
Tensor<float> stack(std::span<const S> samples, std::span<const std::size_t> indices) {
  std::vector<const float*> ptrs;
  for (std::size_t i : indices) ptrs.push_back(samples[i].image.data());
  const auto& first = samples[indices.front()];
  return stack_images<float>(ptrs, first.height, first.width);
}

Batch make_batch(std::span<const TrainingSample> train, std::span<const std::size_t> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.images = stack(train, indices);
  for (std::size_t i : indices) b.label.insert(b.label.end(), train[i].label.begin(), train[i].label.end());
  return b;
}

std::string describe_batch(const Batch& b, std::size_t epoch, std::size_t batch_index,
                           std::span<const TrainingSample> train, const std::string& what) {
  std::ostringstream os;
  os << "non-finite value in epoch " << epoch << ", batch " << batch_index << ": " << what << '\n';
  os << "sample ids:";
  for (std::size_t i : b.indices) os << ' ' << train[i].id;
  os << '\n';
  const auto [lo, hi] = std::minmax_element(b.images.values.begin(), b.images.values.end());
  os << "image range: " << *lo << " .. " << *hi << '\n';
  std::vector<std::uint64_t> counts;
  for (Label l : b.label) {
    if (l >= counts.size()) counts.resize(l + 1, 0);
    ++counts[l];
  }
  os << "label counts:";
  for (auto c : counts) os << ' ' << c;
  os << '\n';
  return os.str();
}

void check_dataset(std::span<const TrainingSample> train, std::span<const Sample> test,
                   const TrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("trainer: empty training set");
  const std::size_t h = train.front().height, w = train.front().width;
  auto check = [&](std::size_t sh, std::size_t sw, std::size_t image, std::size_t label, std::size_t id) {
    if (sh != h || sw != w || image != 3 * h * w || label != h * w) {
      throw std::invalid_argument("trainer: sample " + std::to_string(id) + " has inconsistent size");
    }
  };
  for (const auto& s : train) {
    check(s.height, s.width, s.image.size(), s.label.size(), s.id);
    for (Label l : s.label)
      if (l >= cfg.arch.classes) throw std::invalid_argument("trainer: label exceeds class count");
  }
  for (const auto& s : test) check(s.height, s.width, s.image.size(), s.clean_label.size(), s.id);
}

std::string join_optional(const std::vector<double>& v, std::size_t n) {
  std::string out;
  for (std::size_t c = 0; c < n; ++c) {
    out += ',';
    if (c < v.size()) out += format_real(v[c]);
  }
  return out;
}

std::string join_counts(const std::vector<std::uint64_t>& v, std::size_t n) {
  std::string out;
  for (std::size_t c = 0; c < n; ++c) {
    out += ',';
    if (c < v.size()) out += std::to_string(v[c]);
  }
  return out;
}

std::string header(const std::string& prefix, std::span<const std::string> names) {
  std::string out;
  for (const auto& n : names) out += "," + prefix + n;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (warmup_epochs > epochs) throw std::invalid_argument("warmup_epochs must not exceed epochs");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_batch == 0) throw std::invalid_argument("eval_batch must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be > 0");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0,1)");
  weights.validate();
  if (nbl_mode != NblMode::off && !selection_enabled)
    throw std::invalid_argument("the noise balance loss needs selection enabled");
  if (arch.classes < 2 || arch.classes > 256) throw std::invalid_argument("classes must lie in [2,256]");
}

std::span<const Rung> all_rungs() { return kRungs; }

std::string rung_name(Rung r) {
  switch (r) {
    case Rung::baseline: return "baseline";
    case Rung::discrepancy: return "dis";
    case Rung::ccv: return "ccv";
    case Rung::ccv_linear: return "ccv-linear";
    case Rung::nbl_rce_only: return "rce-only";
    case Rung::full: return "full";
  }
  return "?";
}

std::optional<Rung> parse_rung(const std::string& name) {
  for (Rung r : kRungs)
    if (rung_name(r) == name) return r;
  return std::nullopt;
}

TrainConfig apply_rung(TrainConfig cfg, Rung r) {
  cfg.discrepancy_enabled = r != Rung::baseline;
  cfg.selection_enabled = r != Rung::baseline && r != Rung::discrepancy;
  cfg.mapping = r == Rung::ccv_linear ? ThresholdMapping::linear : ThresholdMapping::convex;
  cfg.nbl_mode = r == Rung::full ? NblMode::full : r == Rung::nbl_rce_only ? NblMode::rce_only : NblMode::off;
  return cfg;
}

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr) {
  for (Parameter<T>* p : params) {
    if (p->grad.size() != p->value.numel()) {
      throw std::invalid_argument("sgd_step: gradient of " + p->name + " has " +
                                  std::to_string(p->grad.size()) + " entries, parameter has " +
                                  std::to_string(p->value.numel()));
    }
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->value.values[i] -= step * p->grad[i];
  }
}

template void sgd_step<float>(std::span<Parameter<float>* const>, double);
template void sgd_step<double>(std::span<Parameter<double>* const>, double);

SegmentationScores evaluate(const TwoBranchModel<float>& model, std::span<const Sample> test,
                            std::size_t classes, std::size_t batch) {
  OverlapCounts counts(classes);
  for (std::size_t start = 0; start < test.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(test.size(), start + batch); ++i) idx.push_back(i);
    const Predictions p = predict_branch1(model, stack(test, std::span<const std::size_t>(idx)));
    const std::size_t plane = test[start].height * test[start].width;
    for (std::size_t k = 0; k < idx.size(); ++k)
      counts.add(std::span<const Label>(p.pred).subspan(k * plane, plane), test[idx[k]].clean_label);
  }
  return scores_from_counts(counts);
}

TrainResult run(std::span<const TrainingSample> train, std::span<const Sample> test,
                const TrainConfig& cfg, const DiagnosticTap* tap, const EpochCallback& on_epoch,
                const std::optional<fs::path>& dump_dir) {
  cfg.validate();
  check_dataset(train, test, cfg);
  if (tap && tap->clean_labels.size() != train.size())
    throw std::invalid_argument("trainer: diagnostic tap does not match the training set");

  const std::size_t classes = cfg.arch.classes;
  TrainResult result{TwoBranchModel<float>(cfg.arch, cfg.seed), {}};
  auto& model = result.model;
  auto params = model.parameters();
  SelectionState sel1(classes, cfg.tau, cfg.mapping), sel2(classes, cfg.tau, cfg.mapping);
  const bool use_dis = cfg.discrepancy_enabled && cfg.weights.beta > 0.0;
  const std::size_t plane = train.front().height * train.front().width;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool selecting = cfg.selection_enabled && epoch > cfg.warmup_epochs;
    EpochLog log;
    log.epoch = epoch;
    log.warmup = epoch <= cfg.warmup_epochs;
    if (selecting) {
      sel1.refresh();
      sel2.refresh();
      log.thresholds1 = sel1.thresholds();
      log.thresholds2 = sel2.thresholds();
      log.sigma1 = sel1.sigma();
      log.sigma2 = sel2.sigma();
    } else {
      sel1.reset_window();
      sel2.reset_window();
    }
    log.label_pixels.assign(classes, 0);
    log.selected_pixels.assign(classes, 0);
    std::vector<std::uint64_t> selected_clean(classes, 0);

    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batches) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch batch = make_batch(train, std::span<const std::size_t>(order).subspan(start, end - start));
      const std::size_t n = batch.label.size();

      ad::Graph<float> g;
      double clean_v = 0, nbl_v = 0, dis_v = 0, total_v = 0;
      TwoBranchBinding binding;
      try {
        const ad::NodeId x = g.constant(batch.images);
        auto out = forward_two_branch(g, model, x);
        binding = out.binding;
        const auto& p1 = out.branch1;
        const auto& p2 = out.branch2;
        sel1.accumulate(p1.conf, p1.pred);
        sel2.accumulate(p2.conf, p2.pred);
        for (std::size_t j = 0; j < n; ++j) log.divergent_pixels += p1.pred[j] != p2.pred[j];

        Mask gamma;
        if (selecting) {
          const Mask d1 = confident_mask(p1.conf, p1.pred, sel1.thresholds());
          const Mask d2 = confident_mask(p2.conf, p2.pred, sel2.thresholds());
          gamma = collaborative_vote(d1, d2, p1.pred, p2.pred, batch.label);
        } else {
          gamma.assign(n, 1);
        }

        const ad::NodeId clean = clean_loss(g, out.logits1, out.logits2, batch.label, gamma);
        ad::NodeId nbl = g.constant(Tensor<float>::scalar(0.0f));
        if (selecting && cfg.nbl_mode != NblMode::off) {
          nbl = noise_balance_loss(g, out.logits1, out.logits2, batch.label, p1.conf, p2.conf, gamma,
                                   cfg.weights.rce_log_zero, cfg.nbl_mode);
        }
        ad::NodeId dis = use_dis ? discrepancy_loss(g, out.f1, out.f2_mapped)
                                 : g.constant(Tensor<float>::scalar(0.0f));
        const ad::NodeId total = total_loss(g, clean, nbl, dis, cfg.weights);
        clean_v = g.value(clean).item();
        nbl_v = g.value(nbl).item();
        dis_v = g.value(dis).item();
        total_v = g.value(total).item();
        if (!std::isfinite(total_v)) throw std::domain_error("total loss is " + format_real(total_v));
        g.backward(total);

        for (std::size_t j = 0; j < n; ++j) {
          const Label l = batch.label[j];
          ++log.label_pixels[l];
          if (gamma[j]) {
            ++log.selected_pixels[l];
            if (tap) {
              const std::size_t sample = batch.indices[j / plane];
              selected_clean[l] += tap->clean_labels[sample][j % plane] == l;
            }
          } else {
            ++log.noisy_pixels;
          }
        }
      } catch (const std::domain_error& e) {
        const std::string report = describe_batch(batch, epoch, batches, train, e.what());
        if (dump_dir) write_text_file(*dump_dir / "nonfinite_batch.txt", report);
        throw std::runtime_error(report);
      }

      model.zero_grad();
      accumulate_grads(g, model, binding);
      sgd_step<float>(params, cfg.learning_rate);
      log.loss_clean += clean_v;
      log.loss_nbl += nbl_v;
      log.loss_dis += dis_v;
      log.loss_total += total_v;
    }
    const double nb = static_cast<double>(batches);
    log.loss_clean /= nb;
    log.loss_nbl /= nb;
    log.loss_dis /= nb;
    log.loss_total /= nb;
    if (tap) {
      log.clean_set_ratio.resize(classes);
      for (std::size_t c = 0; c < classes; ++c)
        if (log.selected_pixels[c])
          log.clean_set_ratio[c] =
              static_cast<double>(selected_clean[c]) / static_cast<double>(log.selected_pixels[c]);
    }
    log.eval = evaluate(model, test, classes, cfg.eval_batch);
    if (on_epoch) on_epoch(log);
    result.logs.push_back(std::move(log));
  }
  return result;
}

void write_run_outputs(const fs::path& dir, std::span<const EpochLog> logs,
                       std::span<const std::string> class_names, const TrainConfig& cfg) {
  const std::size_t c = class_names.size();
  std::ostringstream epochs, thresholds, selection, ratios, divergence;
  epochs << "epoch,phase,loss_clean,loss_nbl,loss_dis,loss_total,noisy_pixels,divergent_pixels,"
            "mean_dice,mean_iou"
         << header("dice_", class_names) << header("iou_", class_names) << '\n';
  thresholds << "epoch,branch" << header("T_", class_names) << header("sigma_", class_names) << '\n';
  selection << "epoch" << header("T_", class_names) << header("sigma_", class_names)
            << header("selected_", class_names) << '\n';
  ratios << "epoch" << header("r_clean_", class_names) << '\n';
  divergence << "epoch,divergent_pixels,total_pixels,fraction\n";

  for (const auto& log : logs) {
    epochs << log.epoch << ',' << (log.warmup ? "warmup" : "main") << ',' << format_real(log.loss_clean)
           << ',' << format_real(log.loss_nbl) << ',' << format_real(log.loss_dis) << ','
           << format_real(log.loss_total) << ',' << log.noisy_pixels << ',' << log.divergent_pixels << ','
           << format_real(log.eval.mean_dice) << ',' << format_real(log.eval.mean_iou)
           << join_optional(log.eval.dice, c) << join_optional(log.eval.iou, c) << '\n';
    thresholds << log.epoch << ",1" << join_optional(log.thresholds1, c) << join_counts(log.sigma1, c) << '\n';
    thresholds << log.epoch << ",2" << join_optional(log.thresholds2, c) << join_counts(log.sigma2, c) << '\n';
    selection << log.epoch << join_optional(log.thresholds1, c) << join_counts(log.sigma1, c)
              << join_counts(log.selected_pixels, c) << '\n';
    ratios << log.epoch;
    for (std::size_t k = 0; k < c; ++k) {
      ratios << ',';
      if (k < log.clean_set_ratio.size() && log.clean_set_ratio[k]) ratios << format_real(*log.clean_set_ratio[k]);
    }
    ratios << '\n';
    std::uint64_t total = 0;
    for (auto v : log.label_pixels) total += v;
    divergence << log.epoch << ',' << log.divergent_pixels << ',' << total << ','
               << format_real(total ? static_cast<double>(log.divergent_pixels) / static_cast<double>(total) : 0.0)
               << '\n';
  }
  write_text_file(dir / "epochs.csv", epochs.str());
  write_text_file(dir / "thresholds.csv", thresholds.str());
  write_text_file(dir / "selection.csv", selection.str());
  write_text_file(dir / "clean_ratio.csv", ratios.str());
  write_text_file(dir / "divergence.csv", divergence.str());

  if (logs.empty()) return;
  const auto& final_scores = logs.back().eval;
  std::ostringstream scores;
  write_scores_csv(scores, final_scores, class_names);
  write_text_file(dir / "scores.csv", scores.str());

  std::ostringstream summary;
  summary << "seed " << cfg.seed << '\n';
  summary << "epochs " << cfg.epochs << " (warmup " << cfg.warmup_epochs << ")\n";
  summary << "discrepancy " << (cfg.discrepancy_enabled ? "on" : "off") << ", selection "
          << (cfg.selection_enabled ? "on" : "off") << ", nbl "
          << (cfg.nbl_mode == NblMode::full ? "full" : cfg.nbl_mode == NblMode::rce_only ? "rce-only" : "off")
          << ", thresholds " << (cfg.mapping == ThresholdMapping::convex ? "convex" : "linear") << '\n';
  summary << "tau " << format_real(cfg.tau) << ", alpha " << format_real(cfg.weights.alpha) << ", beta "
          << format_real(cfg.weights.beta) << '\n';
  summary << "mean_dice " << format_real(final_scores.mean_dice) << '\n';
  summary << "mean_iou " << format_real(final_scores.mean_iou) << '\n';
  for (std::size_t k = 0; k < c; ++k)
    summary << class_names[k] << " dice " << format_real(final_scores.dice[k]) << " iou "
            << format_real(final_scores.iou[k]) << '\n';
  write_text_file(dir / "summary.txt", summary.str());
}

}  // namespace clcs
