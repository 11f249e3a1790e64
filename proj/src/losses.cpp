#include "clcs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace clcs {

namespace {

// Keeps log() finite when a float softmax underflows.
constexpr double kProbFloor = 1e-30;

template <typename T>
void check_pixels(const ad::Graph<T>& g, ad::NodeId logits, std::size_t pixels, const char* what) {
  const auto& v = g.value(logits);
  if (v.rank() < 2 || v.numel() != pixels * v.dim(1)) {
    throw std::invalid_argument(std::string(what) + ": logits " + shape_string(v.shape) +
                                " do not match " + std::to_string(pixels) + " pixels");
  }
}

// Expands per-pixel labels and weights into an [N,C,...] one-hot tensor.
template <typename T>
Tensor<T> one_hot(const Shape& shape, std::span<const Label> label, std::span<const double> weight) {
  const std::size_t channels = shape[1];
  const std::size_t inner = shape_numel(shape) / (shape[0] * channels);
  auto out = Tensor<T>::zeros(shape);
  for (std::size_t j = 0; j < label.size(); ++j) {
    if (label[j] >= channels) throw std::out_of_range("loss: label index out of range");
    const std::size_t o = j / inner, i = j % inner;
    out.values[(o * channels + label[j]) * inner + i] = weight.empty() ? T(1) : static_cast<T>(weight[j]);
  }
  return out;
}

template <typename T>
ad::NodeId zero(ad::Graph<T>& g) {
  return g.constant(Tensor<T>::scalar(T(0)));
}

std::size_t count_set(std::span<const std::uint8_t> mask, bool value) {
  return static_cast<std::size_t>(
      std::count_if(mask.begin(), mask.end(), [&](std::uint8_t m) { return (m != 0) == value; }));
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (!(rce_log_zero < 0.0)) throw std::invalid_argument("rce log-zero clamp must be < 0");
}

double ce_pixel(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("ce_pixel: label index out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - top);
  return top + std::log(total) - logits[label];
}

double rce_pixel(std::span<const double> logits, std::size_t label, double log_zero) {
  if (label >= logits.size()) throw std::out_of_range("rce_pixel: label index out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - top);
  double loss = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (c == label) continue;
    loss -= std::exp(logits[c] - top) / total * log_zero;
  }
  return loss;
}

template <typename T>
ad::NodeId discrepancy_loss(ad::Graph<T>& g, ad::NodeId f1, ad::NodeId f2_mapped) {
  if (g.value(f1).shape != g.value(f2_mapped).shape) {
    throw std::invalid_argument("discrepancy_loss: feature shapes " +
                                shape_string(g.value(f1).shape) + " and " +
                                shape_string(g.value(f2_mapped).shape) + " differ");
  }
  return g.add_scalar(g.mean(g.cosine_channel(f1, f2_mapped)), T(1));
}

template <typename T>
ad::NodeId weighted_ce(ad::Graph<T>& g, ad::NodeId logits, std::span<const Label> label,
                       std::span<const double> weight) {
  check_pixels(g, logits, label.size(), "weighted_ce");
  const ad::NodeId w = g.constant(one_hot<T>(g.value(logits).shape, label, weight));
  const ad::NodeId logp = g.log(g.clamp_min(g.softmax_channel(logits), kProbFloor));
  return g.scale(g.sum(g.mul(logp, w)), T(-1));
}

template <typename T>
ad::NodeId weighted_rce(ad::Graph<T>& g, ad::NodeId logits, std::span<const Label> label,
                        std::span<const double> weight, double log_zero) {
  check_pixels(g, logits, label.size(), "weighted_rce");
  const Shape shape = g.value(logits).shape;
  // log q: 0 at the label, log_zero elsewhere, via log(max(onehot, e^A)).
  const ad::NodeId q = g.constant(one_hot<T>(shape, label, {}));
  const ad::NodeId log_q = g.log(g.clamp_min(q, std::exp(log_zero)));

  const std::size_t channels = shape[1];
  const std::size_t inner = shape_numel(shape) / (shape[0] * channels);
  auto w = Tensor<T>::zeros(shape);
  for (std::size_t j = 0; j < label.size(); ++j) {
    const std::size_t o = j / inner, i = j % inner;
    for (std::size_t c = 0; c < channels; ++c)
      w.values[(o * channels + c) * inner + i] = static_cast<T>(-weight[j]);
  }
  const ad::NodeId coeff = g.mul(log_q, g.constant(std::move(w)));
  return g.sum(g.mul(g.softmax_channel(logits), coeff));
}

template <typename T>
ad::NodeId noise_balance_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                              std::span<const Label> label, std::span<const double> conf1,
                              std::span<const double> conf2, std::span<const std::uint8_t> gamma,
                              double log_zero, NblMode mode) {
  const std::size_t n = label.size();
  if (conf1.size() != n || conf2.size() != n || gamma.size() != n) {
    throw std::invalid_argument("noise_balance_loss: misaligned pixel arrays");
  }
  const std::size_t noisy = count_set(gamma, false);
  if (mode == NblMode::off || noisy == 0) return zero(g);
  const double norm = 0.5 / static_cast<double>(noisy);

  ad::NodeId total = zero(g);
  for (const auto& [logits, conf] : {std::pair{logits1, conf1}, std::pair{logits2, conf2}}) {
    std::vector<double> w_ce(n, 0.0), w_rce(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (gamma[j]) continue;
      const double omega = mode == NblMode::rce_only ? 0.0 : conf[j];
      w_ce[j] = omega * norm;
      w_rce[j] = (1.0 - omega) * norm;
    }
    if (mode == NblMode::full) total = g.add(total, weighted_ce(g, logits, label, w_ce));
    total = g.add(total, weighted_rce(g, logits, label, w_rce, log_zero));
  }
  return total;
}

template <typename T>
ad::NodeId clean_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                      std::span<const Label> label, std::span<const std::uint8_t> gamma) {
  const std::size_t n = label.size();
  if (gamma.size() != n) throw std::invalid_argument("clean_loss: misaligned pixel arrays");
  const std::size_t clean = count_set(gamma, true);
  if (clean == 0) return zero(g);
  const double norm = 0.5 / static_cast<double>(clean);
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j) w[j] = gamma[j] ? norm : 0.0;
  return g.add(weighted_ce(g, logits1, label, w), weighted_ce(g, logits2, label, w));
}

template <typename T>
ad::NodeId total_loss(ad::Graph<T>& g, ad::NodeId clean, ad::NodeId nbl, ad::NodeId dis,
                      const LossWeights& w) {
  w.validate();
  return g.add(g.add(clean, g.scale(nbl, static_cast<T>(w.alpha))),
               g.scale(dis, static_cast<T>(w.beta)));
}

double total_loss(double clean, double nbl, double dis, const LossWeights& w) {
  w.validate();
  return clean + w.alpha * nbl + w.beta * dis;
}

template <typename T>
ad::NodeId warmup_loss(ad::Graph<T>& g, ad::NodeId logits1, ad::NodeId logits2,
                       std::span<const Label> label, ad::NodeId f1, ad::NodeId f2_mapped,
                       double beta) {
  const std::vector<std::uint8_t> all(label.size(), 1);
  const ad::NodeId clean = clean_loss(g, logits1, logits2, label, all);
  const ad::NodeId dis = discrepancy_loss(g, f1, f2_mapped);
  return g.add(clean, g.scale(dis, static_cast<T>(beta)));
}

#define CLCS_INSTANTIATE(T)                                                                       \
  template ad::NodeId discrepancy_loss<T>(ad::Graph<T>&, ad::NodeId, ad::NodeId);                 \
  template ad::NodeId weighted_ce<T>(ad::Graph<T>&, ad::NodeId, std::span<const Label>,           \
                                     std::span<const double>);                                    \
  template ad::NodeId weighted_rce<T>(ad::Graph<T>&, ad::NodeId, std::span<const Label>,          \
                                      std::span<const double>, double);                           \
  template ad::NodeId noise_balance_loss<T>(ad::Graph<T>&, ad::NodeId, ad::NodeId,                \
                                            std::span<const Label>, std::span<const double>,      \
                                            std::span<const double>,                              \
                                            std::span<const std::uint8_t>, double, NblMode);      \
  template ad::NodeId clean_loss<T>(ad::Graph<T>&, ad::NodeId, ad::NodeId,                        \
                                    std::span<const Label>, std::span<const std::uint8_t>);       \
  template ad::NodeId total_loss<T>(ad::Graph<T>&, ad::NodeId, ad::NodeId, ad::NodeId,            \
                                    const LossWeights&);                                          \
  template ad::NodeId warmup_loss<T>(ad::Graph<T>&, ad::NodeId, ad::NodeId,                       \
                                     std::span<const Label>, ad::NodeId, ad::NodeId, double);

CLCS_INSTANTIATE(float)
CLCS_INSTANTIATE(double)
#undef CLCS_INSTANTIATE

}  // namespace clcs
