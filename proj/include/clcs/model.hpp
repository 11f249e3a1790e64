#pragma once

// Two-branch encoder-decoder segmentation network.
//
// Each branch maps an [N,3,H,W] image batch to an [N,D,H/4,W/4] feature map
// (encoder) and to [N,C,H,W] logits (decoder). Branch 2 additionally owns a
// pointwise mapping layer whose output only feeds the feature discrepancy
// term; the decoder of branch 2 consumes the unmapped features.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clcs/graph.hpp"
#include "clcs/tensor.hpp"

namespace clcs {

using Label = std::uint8_t;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;

  void zero_grad() { grad.assign(value.numel(), T(0)); }
};

struct ArchConfig {
  std::size_t classes = 4;
  std::size_t feature_dim = 32;  // D
  std::size_t enc1 = 16;
  std::size_t enc2 = 32;
  std::size_t dec1 = 16;
  std::size_t dec2 = 8;
  double slope = 0.1;  // leaky-relu negative slope
  bool skip = true;    // full-resolution enc1 features also feed dec2
};

/// Parameters bound into one graph; one NodeId per parameter, same order.
using Binding = std::vector<ad::NodeId>;

template <typename T>
class BranchNet {
 public:
  BranchNet(const ArchConfig& arch, std::uint64_t seed, const std::string& prefix);

  struct Nodes {
    ad::NodeId features;
    ad::NodeId logits;
  };

  Binding bind(ad::Graph<T>& g) const;
  Nodes forward(ad::Graph<T>& g, const Binding& b, ad::NodeId image) const;

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  const ArchConfig& arch() const { return arch_; }

 private:
  ArchConfig arch_;
  std::vector<Parameter<T>> params_;
};

template <typename T>
class MappingLayer {
 public:
  MappingLayer(const ArchConfig& arch, std::uint64_t seed, const std::string& prefix);

  Binding bind(ad::Graph<T>& g) const;
  ad::NodeId forward(ad::Graph<T>& g, const Binding& b, ad::NodeId features) const;

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

 private:
  ArchConfig arch_;
  std::vector<Parameter<T>> params_;
};

/// Per-pixel argmax (ties to the lowest class) and max softmax probability.
struct Predictions {
  std::vector<Label> pred;
  std::vector<double> conf;
};

/// `logits` is [N,C,H,W] (or [C] for a single pixel); output is per pixel in
/// N,H,W order.
template <typename T>
Predictions predictions(const Tensor<T>& logits);

template <typename T>
struct TwoBranchModel {
  TwoBranchModel(const ArchConfig& arch, std::uint64_t seed);

  ArchConfig arch;
  BranchNet<T> net1;
  BranchNet<T> net2;
  MappingLayer<T> mapping;

  /// All parameters in a fixed order (branch 1, branch 2, mapping).
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  void zero_grad();
};

struct TwoBranchBinding {
  Binding net1;
  Binding net2;
  Binding mapping;
};

template <typename T>
struct TwoBranchOutputs {
  ad::NodeId f1;
  ad::NodeId f2;
  ad::NodeId f2_mapped;
  ad::NodeId logits1;
  ad::NodeId logits2;
  Predictions branch1;
  Predictions branch2;
  TwoBranchBinding binding;
};

/// Validates the [N,3,H,W] image shape (H, W divisible by 4), runs both
/// branches and the mapping layer, and derives per-branch predictions.
template <typename T>
TwoBranchOutputs<T> forward_two_branch(ad::Graph<T>& g, const TwoBranchModel<T>& model,
                                       ad::NodeId image);

/// Branch 1 alone, for inference.
template <typename T>
Predictions predict_branch1(const TwoBranchModel<T>& model, const Tensor<T>& images);

/// Adds the graph gradients of every bound parameter into Parameter::grad.
template <typename T>
void accumulate_grads(const ad::Graph<T>& g, TwoBranchModel<T>& model,
                      const TwoBranchBinding& binding);

extern template class BranchNet<float>;
extern template class BranchNet<double>;
extern template class MappingLayer<float>;
extern template class MappingLayer<double>;
extern template struct TwoBranchModel<float>;
extern template struct TwoBranchModel<double>;

}  // namespace clcs
