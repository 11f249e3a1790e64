#pragma once

// Loss terms for two-branch training with curriculum selection.
//
// The graph builders take [N,C,H,W] logits and per-pixel labels/masks in
// N,H,W order. Masked terms are means over the mask's support (zero when the
// support is empty). Confidence weights are constants: no gradient flows
// through them.

#include <cstdint>
#include <span>

#include "clcs/graph.hpp"
#include "clcs/model.hpp"

namespace clcs {

struct LossWeights {
  double alpha = 0.01;        // noise balance loss
  double beta = 1.0;          // feature discrepancy
  double rce_log_zero = -4.0; // A, the clamped log(0) of the label distribution

  void validate() const;
};

enum class NblMode {
  off,
  rce_only,  // every noisy pixel weighted entirely by RCE
  full,      // confidence-weighted CE/RCE blend
};

/// -log softmax(logits)[label], evaluated stably.
double ce_pixel(std::span<const double> logits, std::size_t label);

/// -sum_c softmax(logits)[c] * log q(c), log q(label) = 0, log q(other) = A.
double rce_pixel(std::span<const double> logits, std::size_t label, double log_zero);

/// Mean over positions of 1 + cos(f1, f2_mapped) along the channel axis.
template <typename T>
ad::NodeId discrepancy_loss(ad::Graph<T>& g, ad::NodeId f1, ad::NodeId f2_mapped);

/// sum_j weight[j] * CE(logits_j, label_j).
template <typename T>
ad::NodeId weighted_ce(ad::Graph<T>& g, ad::NodeId logits, std::span<const Label> label,
                       std::span<const double> weight);

/// sum_j weight[j] * RCE(logits_j, label_j).
template <typename T>
ad::NodeId weighted_rce(ad::Graph<T>& g, ad::NodeId logits, std::span<const Label> label,
                        std::span<const double> weight, double log_zero);

template <typename T>
ad::NodeId noise_balance_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                              std::span<const Label> label, std::span<const double> conf1,
                              std::span<const double> conf2, std::span<const std::uint8_t> gamma,
                              double log_zero, NblMode mode = NblMode::full);

template <typename T>
ad::NodeId clean_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                      std::span<const Label> label, std::span<const std::uint8_t> gamma);

/// clean + alpha * nbl + beta * dis.
template <typename T>
ad::NodeId total_loss(ad::Graph<T>& g, ad::NodeId clean, ad::NodeId nbl, ad::NodeId dis,
                      const LossWeights& w);
double total_loss(double clean, double nbl, double dis, const LossWeights& w);

/// clean_loss over every pixel plus beta * discrepancy.
template <typename T>
ad::NodeId warmup_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                       std::span<const Label> label, ad::NodeId f1, ad::NodeId f2_mapped,
                       double beta);

}  // namespace clcs
