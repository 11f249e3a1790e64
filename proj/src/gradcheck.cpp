#include "clcs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clcs::ad {

namespace {

double evaluate(const LossBuilder& loss_fn, const std::vector<Tensor<double>>& inputs) {
  Graph<double> g;
  std::vector<NodeId> ids;
  for (const auto& t : inputs) ids.push_back(g.constant(t));
  return g.value(loss_fn(g, ids)).item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss_fn, const std::vector<Tensor<double>>& inputs,
                           double eps, double tol, double floor) {
  Graph<double> g;
  std::vector<NodeId> ids;
  for (const auto& t : inputs) ids.push_back(g.parameter(t));
  const NodeId loss = loss_fn(g, ids);
  const double base = g.value(loss).item();
  if (evaluate(loss_fn, inputs) != base)
    throw std::runtime_error("grad_check: loss is not deterministic");
  g.backward(loss);

  GradCheckReport report;
  auto probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool reached = g.has_grad(ids[i]);
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      const double analytic = reached ? g.grad(ids[i])[k] : 0.0;
      const double x = inputs[i].values[k];
      probe[i].values[k] = x + eps;
      const double up = evaluate(loss_fn, probe);
      probe[i].values[k] = x - eps;
      const double down = evaluate(loss_fn, probe);
      probe[i].values[k] = x;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), floor});
      if (err > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = k;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace clcs::ad
