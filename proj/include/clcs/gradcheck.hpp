#pragma once

// Central finite-difference check of tape gradients in double precision.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "clcs/graph.hpp"
#include "clcs/tensor.hpp"

namespace clcs::ad {

/// Builds a scalar loss from the bound inputs (one leaf per input tensor).
using LossBuilder = std::function<NodeId(Graph<double>&, std::span<const NodeId>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor) per entry; the floor keeps
/// entries with vanishing gradients from dominating on roundoff alone.
/// Throws std::runtime_error if two evaluations at the same point differ.
GradCheckReport grad_check(const LossBuilder& loss_fn, const std::vector<Tensor<double>>& inputs,
                           double eps = 1e-5, double tol = 1e-4, double floor = 1e-3);

}  // namespace clcs::ad
