#include <cmath>
#include <numbers>
#include <stdexcept>

#include "clcs/gradcheck.hpp"
#include "clcs/losses.hpp"
#include "clcs/selection.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clcs;
using ad::Graph;
using ad::NodeId;
using test::random_tensor;

namespace {

const double kLn2 = std::numbers::ln2;

double value(Graph<double>& g, NodeId id) { return g.value(id).item(); }

std::vector<double> pixel_logits(const Tensor<double>& t, std::size_t n, std::size_t j) {
  const std::size_t c = t.dim(1), inner = t.numel() / (t.dim(0) * c);
  std::vector<double> out(c);
  for (std::size_t k = 0; k < c; ++k) out[k] = t.values[((j / inner) * c + k) * inner + j % inner];
  (void)n;
  return out;
}

struct Problem {
  Tensor<double> l1, l2;
  std::vector<Label> label;
  std::vector<double> c1, c2;
  Mask gamma;
};

Problem random_problem(std::uint64_t seed, std::size_t c = 3) {
  Rng rng(seed, {21});
  Problem p{random_tensor({2, c, 2, 3}, rng, -3, 3), random_tensor({2, c, 2, 3}, rng, -3, 3), {}, {}, {}, {}};
  for (std::size_t j = 0; j < 12; ++j) {
    p.label.push_back(static_cast<Label>(rng.below(c)));
    p.c1.push_back(rng.uniform());
    p.c2.push_back(rng.uniform());
    p.gamma.push_back(rng.bernoulli(0.5));
  }
  return p;
}

}  // namespace

TEST_CASE("discrepancy examples") {
  Rng rng(1, {});
  const auto f = random_tensor({2, 4, 3, 3}, rng);
  Graph<double> g;
  const auto a = g.constant(f);
  CHECK(value(g, discrepancy_loss(g, a, a)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(value(g, discrepancy_loss(g, a, g.scale(a, -1.0)))) < 1e-12);
  // Orthogonal per-pixel vectors: (1,0) against (0,1).
  const auto e1 = g.constant(Tensor<double>({1, 2, 1, 1}, {1, 0}));
  const auto e2 = g.constant(Tensor<double>({1, 2, 1, 1}, {0, 1}));
  CHECK(value(g, discrepancy_loss(g, e1, e2)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(discrepancy_loss(g, a, e1), std::invalid_argument);
  for (int t = 0; t < 20; ++t) {
    const double v = value(g, discrepancy_loss(g, g.constant(random_tensor({1, 3, 2, 2}, rng)),
                                               g.constant(random_tensor({1, 3, 2, 2}, rng))));
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
}

TEST_CASE("pixel losses") {
  CHECK(ce_pixel(std::vector<double>{0, 0}, 0) == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(ce_pixel(std::vector<double>{10, -10}, 0) == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(ce_pixel(std::vector<double>{10, -10}, 0) == doctest::Approx(2.06e-9).epsilon(1e-2));
  CHECK(ce_pixel(std::vector<double>{10, -10}, 1) == doctest::Approx(20.0).epsilon(1e-8));
  CHECK(rce_pixel(std::vector<double>{50, 0, 0}, 0, -4) < 1e-9);
  CHECK(rce_pixel(std::vector<double>{0, 50, 0}, 0, -4) == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(rce_pixel(std::vector<double>{0, 0, 0, 0}, 2, -4) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK_THROWS_AS(ce_pixel(std::vector<double>{0, 0}, 2), std::out_of_range);

  Rng rng(2, {});
  for (int t = 0; t < 20; ++t) {
    std::vector<double> l = test::random_vector<double>(4, rng, -5, 5), s = l;
    const double shift = rng.uniform(-50, 50);
    for (auto& v : s) v += shift;
    CHECK(ce_pixel(s, 1) == doctest::Approx(ce_pixel(l, 1)).epsilon(1e-10));
    CHECK(rce_pixel(s, 1, -4) == doctest::Approx(rce_pixel(l, 1, -4)).epsilon(1e-10));
  }
}

TEST_CASE("graph CE and RCE agree with the pixel formulas") {
  const auto p = random_problem(3, 4);
  Graph<double> g;
  const auto l = g.constant(p.l1);
  std::vector<double> w(12);
  Rng rng(4, {});
  double ce = 0, rce = 0;
  for (std::size_t j = 0; j < 12; ++j) {
    w[j] = rng.uniform();
    ce += w[j] * ce_pixel(pixel_logits(p.l1, 12, j), p.label[j]);
    rce += w[j] * rce_pixel(pixel_logits(p.l1, 12, j), p.label[j], -4);
  }
  CHECK(value(g, weighted_ce(g, l, p.label, w)) == doctest::Approx(ce).epsilon(1e-12));
  CHECK(value(g, weighted_rce(g, l, p.label, w, -4)) == doctest::Approx(rce).epsilon(1e-12));
}

TEST_CASE("noise balance loss examples") {
  const auto p = random_problem(5);
  Graph<double> g;
  const auto l1 = g.constant(p.l1), l2 = g.constant(p.l2);
  CHECK(value(g, noise_balance_loss(g, l1, l2, p.label, p.c1, p.c2, Mask(12, 1), -4)) == 0.0);

  // omega == 1: half the sum of per-branch mean CE over the noise set.
  const std::vector<double> ones(12, 1.0);
  double ce1 = 0, ce2 = 0;
  std::size_t noisy = 0;
  for (std::size_t j = 0; j < 12; ++j) {
    if (p.gamma[j]) continue;
    ++noisy;
    ce1 += ce_pixel(pixel_logits(p.l1, 12, j), p.label[j]);
    ce2 += ce_pixel(pixel_logits(p.l2, 12, j), p.label[j]);
  }
  REQUIRE(noisy > 0);
  CHECK(value(g, noise_balance_loss(g, l1, l2, p.label, ones, ones, p.gamma, -4)) ==
        doctest::Approx(0.5 * (ce1 + ce2) / noisy).epsilon(1e-12));

  // Single pixel, C=2, logits [0,0], label 0, omega 0.5, A=-4.
  Graph<double> h;
  const auto z = h.constant(Tensor<double>({1, 2, 1, 1}, {0, 0}));
  const std::vector<Label> y{0};
  const std::vector<double> half{0.5};
  CHECK(value(h, noise_balance_loss(h, z, z, y, half, half, Mask{0}, -4)) ==
        doctest::Approx(0.5 * kLn2 + 1.0).epsilon(1e-12));
  CHECK(value(h, noise_balance_loss(h, z, z, y, half, half, Mask{0}, -4, NblMode::off)) == 0.0);
  CHECK(value(h, noise_balance_loss(h, z, z, y, half, half, Mask{0}, -4, NblMode::rce_only)) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("noise balance loss blends CE and RCE linearly in omega") {
  const auto p = random_problem(6);
  for (double omega : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    CAPTURE(omega);
    double direct = 0;
    std::size_t noisy = 0;
    for (std::size_t j = 0; j < 12; ++j) {
      if (p.gamma[j]) continue;
      ++noisy;
      for (const auto* t : {&p.l1, &p.l2}) {
        const auto lj = pixel_logits(*t, 12, j);
        direct += omega * ce_pixel(lj, p.label[j]) + (1 - omega) * rce_pixel(lj, p.label[j], -4);
      }
    }
    direct *= 0.5 / noisy;
    Graph<double> g;
    const std::vector<double> w(12, omega);
    CHECK(value(g, noise_balance_loss(g, g.constant(p.l1), g.constant(p.l2), p.label, w, w, p.gamma, -4)) ==
          doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("clean loss examples") {
  const auto p = random_problem(7);
  Graph<double> g;
  const auto l1 = g.constant(p.l1), l2 = g.constant(p.l2);
  CHECK(value(g, clean_loss(g, l1, l2, p.label, Mask(12, 0))) == 0.0);

  const auto z = g.constant(Tensor<double>::zeros({1, 2, 2, 2}));
  CHECK(value(g, clean_loss(g, z, z, std::vector<Label>{0, 1, 1, 0}, Mask(4, 1))) ==
        doctest::Approx(kLn2).epsilon(1e-12));

  const auto sharp = g.constant(Tensor<double>({1, 2, 1, 2}, {40, 0, 0, 0}));
  CHECK(value(g, clean_loss(g, sharp, sharp, std::vector<Label>{0, 1}, Mask{1, 0})) < 1e-12);
}

TEST_CASE("clean and noise terms partition the pixels") {
  const auto p = random_problem(8);
  Graph<double> g;
  const auto l1 = g.constant(p.l1), l2 = g.constant(p.l2);
  const std::vector<double> ones(12, 1.0);
  Mask inverse(12);
  for (std::size_t j = 0; j < 12; ++j) inverse[j] = !p.gamma[j];
  std::size_t clean = 0;
  for (auto m : p.gamma) clean += m;
  // With omega = 1 both terms are masked CE means; recombining them by
  // support size gives the CE mean over all pixels.
  const double c = value(g, clean_loss(g, l1, l2, p.label, p.gamma));
  const double n = value(g, noise_balance_loss(g, l1, l2, p.label, ones, ones, p.gamma, -4));
  const double all = value(g, clean_loss(g, l1, l2, p.label, Mask(12, 1)));
  CHECK((c * clean + n * (12 - clean)) / 12 == doctest::Approx(all).epsilon(1e-12));
  CHECK(value(g, noise_balance_loss(g, l1, l2, p.label, ones, ones, inverse, -4)) == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("total and warmup loss examples") {
  CHECK(total_loss(0.0, 0.0, 0.0, LossWeights{}) == 0.0);
  CHECK(total_loss(1.0, 2.0, 0.5, LossWeights{.alpha = 0.01, .beta = 1.0}) == doctest::Approx(1.52).epsilon(1e-14));
  CHECK(total_loss(1.25, 2.0, 0.5, LossWeights{.alpha = 0, .beta = 0}) == 1.25);
  CHECK_THROWS_AS(total_loss(1, 1, 1, LossWeights{.alpha = -1}), std::invalid_argument);
  CHECK_THROWS_AS(total_loss(1, 1, 1, LossWeights{.rce_log_zero = 0}), std::invalid_argument);

  Graph<double> g;
  const auto z = g.constant(Tensor<double>::zeros({1, 2, 2, 2}));
  const std::vector<Label> y{0, 1, 1, 0};
  const auto e1 = g.constant(Tensor<double>({1, 2, 1, 1}, {1, 0}));
  const auto e2 = g.constant(Tensor<double>({1, 2, 1, 1}, {0, 1}));
  CHECK(value(g, warmup_loss(g, z, z, y, e1, e2, 1.0)) == doctest::Approx(kLn2 + 1).epsilon(1e-12));
  CHECK(value(g, warmup_loss(g, z, z, y, e1, e1, 1.0)) == doctest::Approx(kLn2 + 2).epsilon(1e-12));
  CHECK(value(g, warmup_loss(g, z, z, y, e1, e1, 0.0)) == doctest::Approx(kLn2).epsilon(1e-12));
  const auto t = g.constant(Tensor<double>::scalar(1.0)), n = g.constant(Tensor<double>::scalar(2.0)),
             d = g.constant(Tensor<double>::scalar(0.5));
  CHECK(value(g, total_loss(g, t, n, d, LossWeights{.alpha = 0.01, .beta = 1})) == doctest::Approx(1.52).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    const auto p = random_problem(100 + seed);
    Rng rng(seed, {22});
    auto check = [](const ad::LossBuilder& fn, const std::vector<Tensor<double>>& in) {
      const auto r = ad::grad_check(fn, in, 1e-5, 1e-4);
      INFO("max rel error " << r.max_rel_error);
      CHECK(r.passed);
    };
    check([](Graph<double>& g, auto x) { return discrepancy_loss(g, x[0], x[1]); },
          {random_tensor({2, 4, 2, 2}, rng), random_tensor({2, 4, 2, 2}, rng)});
    check([&](Graph<double>& g, auto x) { return weighted_ce(g, x[0], p.label, p.c1); }, {p.l1});
    check([&](Graph<double>& g, auto x) { return weighted_rce(g, x[0], p.label, p.c1, -4); }, {p.l1});
    check([&](Graph<double>& g, auto x) {
      return noise_balance_loss(g, x[0], x[1], p.label, p.c1, p.c2, p.gamma, -4);
    }, {p.l1, p.l2});
    check([&](Graph<double>& g, auto x) { return clean_loss(g, x[0], x[1], p.label, p.gamma); },
          {p.l1, p.l2});
    check([&](Graph<double>& g, auto x) {
      return total_loss(g, clean_loss(g, x[0], x[1], p.label, p.gamma),
                        noise_balance_loss(g, x[0], x[1], p.label, p.c1, p.c2, p.gamma, -4),
                        discrepancy_loss(g, x[2], x[3]), LossWeights{.alpha = 0.3, .beta = 0.7});
    }, {p.l1, p.l2, random_tensor({2, 4, 2, 3}, rng), random_tensor({2, 4, 2, 3}, rng)});
  }
}
