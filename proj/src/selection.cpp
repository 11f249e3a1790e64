#include "clcs/selection.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace clcs {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("tau must lie in (0,1), got " + std::to_string(tau));
  }
}

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": misaligned pixel arrays (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

std::vector<std::uint64_t> learning_status(std::span<const double> conf, std::span<const Label> pred,
                                           double tau, std::size_t classes) {
  check_aligned(conf.size(), pred.size(), "learning_status");
  std::vector<std::uint64_t> sigma(classes, 0);
  for (std::size_t j = 0; j < conf.size(); ++j) {
    if (pred[j] >= classes) throw std::out_of_range("learning_status: class index out of range");
    if (conf[j] > tau) ++sigma[pred[j]];
  }
  return sigma;
}

std::vector<double> normalized_status(std::span<const std::uint64_t> sigma) {
  std::vector<double> out(sigma.size(), 0.0);
  const std::uint64_t top = sigma.empty() ? 0 : *std::max_element(sigma.begin(), sigma.end());
  if (top == 0) return out;
  for (std::size_t c = 0; c < sigma.size(); ++c)
    out[c] = static_cast<double>(sigma[c]) / static_cast<double>(top);
  return out;
}

double convex_map(double s) { return s / (2.0 - s); }

std::vector<double> cdt_thresholds(std::span<const std::uint64_t> sigma, double tau,
                                   const std::optional<std::vector<double>>& previous,
                                   ThresholdMapping mapping) {
  check_tau(tau);
  const bool any = std::any_of(sigma.begin(), sigma.end(), [](std::uint64_t v) { return v > 0; });
  if (!any) {
    if (previous && previous->size() == sigma.size()) return *previous;
    return std::vector<double>(sigma.size(), tau);
  }
  auto t = normalized_status(sigma);
  for (auto& v : t) v = (mapping == ThresholdMapping::convex ? convex_map(v) : v) * tau;
  return t;
}

Mask confident_mask(std::span<const double> conf, std::span<const Label> pred,
                    std::span<const double> thresholds) {
  check_aligned(conf.size(), pred.size(), "confident_mask");
  Mask delta(conf.size());
  for (std::size_t j = 0; j < conf.size(); ++j) {
    if (pred[j] >= thresholds.size()) throw std::out_of_range("confident_mask: class index out of range");
    delta[j] = conf[j] > thresholds[pred[j]] ? 1 : 0;
  }
  return delta;
}

Mask collaborative_vote(std::span<const std::uint8_t> delta1, std::span<const std::uint8_t> delta2,
                        std::span<const Label> pred1, std::span<const Label> pred2,
                        std::span<const Label> label) {
  const std::size_t n = label.size();
  check_aligned(delta1.size(), n, "collaborative_vote");
  check_aligned(delta2.size(), n, "collaborative_vote");
  check_aligned(pred1.size(), n, "collaborative_vote");
  check_aligned(pred2.size(), n, "collaborative_vote");
  Mask gamma(n);
#pragma omp simd
  for (std::size_t j = 0; j < n; ++j) {
    const bool agree = (pred1[j] == label[j]) & (pred2[j] == label[j]);
    gamma[j] = static_cast<std::uint8_t>((delta1[j] != 0) & (delta2[j] != 0) & agree);
  }
  return gamma;
}

SelectionState::SelectionState(std::size_t classes, double tau, ThresholdMapping mapping)
    : tau_(tau),
      mapping_(mapping),
      sigma_(classes, 0),
      sigma_hat_(classes, 0.0),
      thresholds_(classes, tau),
      pending_(classes, 0) {
  check_tau(tau);
}

void SelectionState::accumulate(std::span<const double> conf, std::span<const Label> pred) {
  const auto batch = learning_status(conf, pred, tau_, classes());
  for (std::size_t c = 0; c < batch.size(); ++c) pending_[c] += batch[c];
}

void SelectionState::refresh() {
  std::optional<std::vector<double>> previous;
  if (refreshed_) previous = thresholds_;
  sigma_ = pending_;
  sigma_hat_ = normalized_status(sigma_);
  thresholds_ = cdt_thresholds(sigma_, tau_, previous, mapping_);
  std::fill(pending_.begin(), pending_.end(), 0);
  refreshed_ = true;
  ++epoch_;
}

void SelectionState::reset_window() { std::fill(pending_.begin(), pending_.end(), 0); }

}  // namespace clcs
