#pragma once

// Curriculum sample selection: per-class learning status, dynamic thresholds,
// per-branch confident masks and collaborative voting.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "clcs/model.hpp"

namespace clcs {

using Mask = std::vector<std::uint8_t>;

enum class ThresholdMapping {
  convex,  // T_c = s/(2-s) * tau
  linear,  // T_c = s * tau
};

/// sigma[c] = #pixels with conf > tau and pred == c.
std::vector<std::uint64_t> learning_status(std::span<const double> conf, std::span<const Label> pred,
                                           double tau, std::size_t classes);

/// Normalized status sigma / max(sigma); all zero when max is zero.
std::vector<double> normalized_status(std::span<const std::uint64_t> sigma);

double convex_map(double s);

/// Per-class thresholds from learning status. When every count is zero the
/// previous thresholds are kept, or tau everywhere if there are none.
std::vector<double> cdt_thresholds(std::span<const std::uint64_t> sigma, double tau,
                                   const std::optional<std::vector<double>>& previous = std::nullopt,
                                   ThresholdMapping mapping = ThresholdMapping::convex);

/// delta[j] = conf[j] > thresholds[pred[j]].
Mask confident_mask(std::span<const double> conf, std::span<const Label> pred,
                    std::span<const double> thresholds);

/// gamma[j] = delta1[j] && delta2[j] && pred1[j] == pred2[j] == label[j].
Mask collaborative_vote(std::span<const std::uint8_t> delta1, std::span<const std::uint8_t> delta2,
                        std::span<const Label> pred1, std::span<const Label> pred2,
                        std::span<const Label> label);

/// Per-branch threshold state carried across epochs.
class SelectionState {
 public:
  SelectionState(std::size_t classes, double tau, ThresholdMapping mapping = ThresholdMapping::convex);

  /// Folds one batch of predictions into the running epoch statistics.
  void accumulate(std::span<const double> conf, std::span<const Label> pred);

  /// Recomputes thresholds from the accumulated statistics and starts a new
  /// accumulation window.
  void refresh();

  /// Drops the statistics gathered so far in the current window.
  void reset_window();

  std::size_t classes() const { return thresholds_.size(); }
  double tau() const { return tau_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<std::uint64_t>& sigma() const { return sigma_; }
  const std::vector<double>& sigma_hat() const { return sigma_hat_; }
  const std::vector<double>& thresholds() const { return thresholds_; }
  const std::vector<std::uint64_t>& pending() const { return pending_; }

 private:
  double tau_;
  ThresholdMapping mapping_;
  std::size_t epoch_ = 0;
  std::vector<std::uint64_t> sigma_;
  std::vector<double> sigma_hat_;
  std::vector<double> thresholds_;
  std::vector<std::uint64_t> pending_;
  bool refreshed_ = false;
};

}  // namespace clcs
