#include <cmath>
#include <stdexcept>

#include "clcs/selection.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clcs;

namespace {

// Per-pixel restatement of the voting rule.
std::uint8_t vote_oracle(bool d1, bool d2, Label p1, Label p2, Label y) {
  if (!d1 || !d2) return 0;
  if (p1 != y || p2 != y) return 0;
  return 1;
}

}  // namespace

TEST_CASE("learning_status examples") {
  CHECK(learning_status(std::vector<double>{0.95, 0.5, 0.92, 0.8}, std::vector<Label>{0, 0, 1, 1}, 0.9, 2) ==
        std::vector<std::uint64_t>{1, 1});
  CHECK(learning_status(std::vector<double>(5, 0.1), std::vector<Label>{0, 1, 2, 3, 0}, 0.9, 4) ==
        std::vector<std::uint64_t>(4, 0));
  CHECK(learning_status(std::vector<double>(7, 1.0), std::vector<Label>(7, 2), 0.9, 4) ==
        std::vector<std::uint64_t>{0, 0, 7, 0});
  CHECK(learning_status({}, {}, 0.9, 3) == std::vector<std::uint64_t>(3, 0));
  CHECK_THROWS_AS(learning_status(std::vector<double>{0.95}, std::vector<Label>{4}, 0.9, 4), std::out_of_range);
}

TEST_CASE("cdt_thresholds examples") {
  // sigma_hat = {1, 0, 0.5}
  const auto t = cdt_thresholds(std::vector<std::uint64_t>{10, 0, 5}, 0.9);
  CHECK(t[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(t[1] == 0.0);
  CHECK(t[2] == doctest::Approx(0.3).epsilon(1e-12));
  const auto lin = cdt_thresholds(std::vector<std::uint64_t>{10, 0, 5}, 0.9, std::nullopt, ThresholdMapping::linear);
  CHECK(lin[2] == doctest::Approx(0.45).epsilon(1e-12));

  CHECK_THROWS_AS(cdt_thresholds(std::vector<std::uint64_t>{1, 2}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(cdt_thresholds(std::vector<std::uint64_t>{1, 2}, 0.0), std::invalid_argument);

  // All-zero status keeps earlier thresholds, or tau without history.
  CHECK(cdt_thresholds(std::vector<std::uint64_t>{0, 0}, 0.8) == std::vector<double>{0.8, 0.8});
  const std::vector<double> prev{0.5, 0.1};
  CHECK(cdt_thresholds(std::vector<std::uint64_t>{0, 0}, 0.8, prev) == prev);
}

TEST_CASE("confident_mask examples") {
  const std::vector<double> t{0.9, 0.9};
  CHECK(confident_mask(std::vector<double>{0.95}, std::vector<Label>{1}, t) == Mask{1});
  CHECK(confident_mask(std::vector<double>{0.9}, std::vector<Label>{1}, t) == Mask{0});
  CHECK(confident_mask(std::vector<double>{0.01, 0.3, 1.0}, std::vector<Label>{0, 1, 0},
                       std::vector<double>{0, 0}) == Mask{1, 1, 1});
}

TEST_CASE("collaborative_vote examples") {
  CHECK(collaborative_vote(Mask{1}, Mask{1}, std::vector<Label>{2}, std::vector<Label>{2}, std::vector<Label>{2}) == Mask{1});
  CHECK(collaborative_vote(Mask{1}, Mask{1}, std::vector<Label>{1}, std::vector<Label>{2}, std::vector<Label>{2}) == Mask{0});
  CHECK(collaborative_vote(Mask{1}, Mask{0}, std::vector<Label>{2}, std::vector<Label>{2}, std::vector<Label>{2}) == Mask{0});
  CHECK_THROWS_AS(collaborative_vote(Mask{1}, Mask{1, 0}, std::vector<Label>{2}, std::vector<Label>{2},
                                     std::vector<Label>{2}),
                  std::invalid_argument);
}

TEST_CASE("voting equals the per-pixel oracle and stays inside both masks") {
  Rng rng(11, {});
  const std::size_t n = 5000;
  Mask d1(n), d2(n);
  std::vector<Label> p1(n), p2(n), y(n);
  for (std::size_t j = 0; j < n; ++j) {
    d1[j] = rng.bernoulli(0.6);
    d2[j] = rng.bernoulli(0.6);
    p1[j] = static_cast<Label>(rng.below(3));
    p2[j] = static_cast<Label>(rng.below(3));
    y[j] = static_cast<Label>(rng.below(3));
  }
  const Mask gamma = collaborative_vote(d1, d2, p1, p2, y);
  for (std::size_t j = 0; j < n; ++j) {
    CHECK(gamma[j] == vote_oracle(d1[j], d2[j], p1[j], p2[j], y[j]));
    if (gamma[j]) CHECK((d1[j] && d2[j]));
  }
}

TEST_CASE("raising tau never increases the status") {
  Rng rng(12, {});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 300;
    std::vector<double> conf(n);
    std::vector<Label> pred(n);
    for (std::size_t j = 0; j < n; ++j) {
      conf[j] = rng.uniform();
      pred[j] = static_cast<Label>(rng.below(4));
    }
    const double lo = rng.uniform(0.01, 0.98);
    const double hi = rng.uniform(lo, 0.99);
    const auto a = learning_status(conf, pred, lo, 4);
    const auto b = learning_status(conf, pred, hi, 4);
    for (std::size_t c = 0; c < 4; ++c) CHECK(b[c] <= a[c]);
  }
}

TEST_CASE("convex threshold map") {
  CHECK(convex_map(0.0) == 0.0);
  CHECK(convex_map(1.0) == 1.0);
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double s = i * 1e-3;
    CHECK(convex_map(s) <= s + 1e-15);
    CHECK(convex_map(s) > prev);
    prev = convex_map(s);
    if (i > 0 && i < 1000)
      CHECK(convex_map(s + 1e-3) - 2 * convex_map(s) + convex_map(s - 1e-3) >= -1e-12);
  }
}

TEST_CASE("selection state windows") {
  SelectionState s(3, 0.9);
  CHECK(s.thresholds() == std::vector<double>(3, 0.9));
  s.accumulate(std::vector<double>{0.95, 0.99, 0.92, 0.5}, std::vector<Label>{0, 0, 1, 2});
  CHECK(s.pending() == std::vector<std::uint64_t>{2, 1, 0});
  s.refresh();
  CHECK(s.sigma() == std::vector<std::uint64_t>{2, 1, 0});
  CHECK(s.thresholds()[0] == doctest::Approx(0.9));
  CHECK(s.thresholds()[1] == doctest::Approx(0.5 / 1.5 * 0.9));
  CHECK(s.thresholds()[2] == 0.0);
  CHECK(s.pending() == std::vector<std::uint64_t>(3, 0));
  // An empty window holds the previous thresholds.
  const auto held = s.thresholds();
  s.refresh();
  CHECK(s.thresholds() == held);
  s.accumulate(std::vector<double>{0.95}, std::vector<Label>{2});
  s.reset_window();
  CHECK(s.pending() == std::vector<std::uint64_t>(3, 0));
  CHECK(s.epoch() == 2);
}
