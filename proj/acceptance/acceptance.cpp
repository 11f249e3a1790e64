// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../tests/network_check.hpp"
#include "clcs/config.hpp"
#include "clcs/gradcheck.hpp"
#include "clcs/losses.hpp"
#include "clcs/random.hpp"
#include "clcs/selection.hpp"
#include "clcs/trainer.hpp"

using namespace clcs;
namespace fs = std::filesystem;
using clcs::test::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Experiment profile shared by criteria 6-8.
struct Profile {
  std::size_t train_samples = 200;
  std::size_t test_samples = 100;
  std::size_t epochs = 30;
  std::size_t warmup = 10;
  double learning_rate = 0.4;
  double tau = 0.6;
  double alpha = 0.01;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  RunConfig config(std::uint64_t seed) const {
    RunConfig rc;
    rc.seed = seed;
    rc.train_samples = train_samples;
    rc.test_samples = test_samples;
    rc.train.epochs = epochs;
    rc.train.warmup_epochs = warmup;
    rc.train.learning_rate = learning_rate;
    rc.train.tau = tau;
    rc.train.weights.alpha = alpha;
    return rc;
  }
};

// ---------------------------------------------------------------- 1

Outcome gradients() {
  const double t0 = cpu_seconds();
  Outcome out;
  double worst = 0;
  std::size_t failures = 0;
  auto record = [&](const char* name, std::uint64_t seed, const ad::GradCheckReport& r) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      if (failures++ == 0) out.detail += std::string(name) + " seed " + std::to_string(seed) + " failed; ";
    }
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, {101});
    const std::size_t n = 12;
    std::vector<Label> label(n);
    std::vector<double> c1(n), c2(n);
    Mask gamma(n);
    for (std::size_t j = 0; j < n; ++j) {
      label[j] = static_cast<Label>(rng.below(3));
      c1[j] = rng.uniform(0.05, 1.0);
      c2[j] = rng.uniform(0.05, 1.0);
      gamma[j] = rng.bernoulli(0.5);
    }
    // One-hot weights select a single pixel, so the graph loss is that pixel's CE / RCE.
    std::vector<double> pick(n, 0.0);
    pick[rng.below(n)] = 1.0;
    const auto l1 = random_tensor({2, 3, 2, 3}, rng, -3, 3);
    const auto l2 = random_tensor({2, 3, 2, 3}, rng, -3, 3);
    const auto f1 = random_tensor({2, 4, 2, 3}, rng);
    const auto f2 = random_tensor({2, 4, 2, 3}, rng);
    const LossWeights w{.alpha = 0.5, .beta = 1.0};

    record("discrepancy_loss", seed, ad::grad_check([](ad::Graph<double>& g, auto x) {
      return discrepancy_loss(g, x[0], x[1]);
    }, {f1, f2}));
    record("ce_pixel", seed, ad::grad_check([&](ad::Graph<double>& g, auto x) {
      return weighted_ce(g, x[0], label, pick);
    }, {l1}));
    record("rce_pixel", seed, ad::grad_check([&](ad::Graph<double>& g, auto x) {
      return weighted_rce(g, x[0], label, pick, -4.0);
    }, {l1}));
    record("noise_balance_loss", seed, ad::grad_check([&](ad::Graph<double>& g, auto x) {
      return noise_balance_loss(g, x[0], x[1], label, c1, c2, gamma, -4.0);
    }, {l1, l2}));
    record("clean_loss", seed, ad::grad_check([&](ad::Graph<double>& g, auto x) {
      return clean_loss(g, x[0], x[1], label, gamma);
    }, {l1, l2}));
    record("total_loss", seed, ad::grad_check([&](ad::Graph<double>& g, auto x) {
      return total_loss(g, clean_loss(g, x[0], x[1], label, gamma),
                        noise_balance_loss(g, x[0], x[1], label, c1, c2, gamma, -4.0),
                        discrepancy_loss(g, x[2], x[3]), w);
    }, {l1, l2, f1, f2}));
    record("network", seed, clcs::test::network_grad_check(seed));
  }
  const double secs = cpu_seconds() - t0;
  out.pass = failures == 0 && secs < 60.0;
  out.detail += "140 checks, worst relative error " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s";
  return out;
}

// ---------------------------------------------------------------- 2

Outcome thresholds() {
  const double t0 = cpu_seconds();
  const double tau = 0.9;
  Rng rng(7, {102});
  std::size_t bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t classes = 2 + rng.below(7);
    std::vector<std::uint64_t> sigma(classes);
    for (auto& s : sigma) s = rng.bernoulli(0.2) ? 0 : rng.below(100000);
    const auto convex = cdt_thresholds(sigma, tau, std::nullopt, ThresholdMapping::convex);
    const auto linear = cdt_thresholds(sigma, tau, std::nullopt, ThresholdMapping::linear);
    const auto top = std::max_element(sigma.begin(), sigma.end());
    for (std::size_t c = 0; c < classes; ++c) {
      if (!(convex[c] >= 0.0 && convex[c] <= tau)) ++bad;
      if (convex[c] > linear[c] + 1e-12) ++bad;
    }
    if (*top > 0 && convex[static_cast<std::size_t>(top - sigma.begin())] != tau) ++bad;
  }
  // Monotone and convex on a 1e-3 grid over [0,1].
  std::vector<double> m(1001);
  for (std::size_t i = 0; i <= 1000; ++i) m[i] = convex_map(static_cast<double>(i) * 1e-3);
  for (std::size_t i = 1; i <= 1000; ++i)
    if (m[i] < m[i - 1]) ++bad;
  for (std::size_t i = 1; i < 1000; ++i)
    if (m[i + 1] - 2 * m[i] + m[i - 1] < -1e-12) ++bad;
  const double secs = cpu_seconds() - t0;
  return {bad == 0 && secs < 1.0, std::to_string(bad) + " violations, " + fmt("%.3f", secs) + " s"};
}

// ---------------------------------------------------------------- 3

Outcome voting() {
  const double t0 = cpu_seconds();
  Rng rng(11, {103});
  std::size_t mismatched = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(2048);
    const std::size_t classes = 2 + rng.below(4);
    Mask d1(n), d2(n);
    std::vector<Label> p1(n), p2(n), y(n);
    for (std::size_t j = 0; j < n; ++j) {
      d1[j] = rng.bernoulli(0.6);
      d2[j] = rng.bernoulli(0.6);
      p1[j] = static_cast<Label>(rng.below(classes));
      p2[j] = static_cast<Label>(rng.below(classes));
      y[j] = static_cast<Label>(rng.below(classes));
    }
    const Mask gamma = collaborative_vote(d1, d2, p1, p2, y);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint8_t oracle = 0;
      if (d1[j] == 1 && d2[j] == 1 && p1[j] == y[j] && p2[j] == y[j]) oracle = 1;
      if (gamma[j] != oracle) ++mismatched;
    }
  }
  const double secs = cpu_seconds() - t0;
  return {mismatched == 0 && secs < 1.0, std::to_string(mismatched) + " mismatched pixels, " + fmt("%.3f", secs) + " s"};
}

// ---------------------------------------------------------------- 4

Outcome identities() {
  Rng rng(13, {104});
  double worst = 0;
  auto dev = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  ad::Graph<double> g;
  auto val = [&](ad::NodeId id) { return g.value(id).values[0]; };

  const auto f = g.constant(random_tensor({2, 5, 3, 3}, rng));
  dev(val(discrepancy_loss(g, f, f)), 2.0);
  dev(val(discrepancy_loss(g, f, g.scale(f, -1.0))), 0.0);

  const std::size_t n = 18;
  const auto l1 = g.constant(random_tensor({2, 3, 3, 3}, rng, -3, 3));
  const auto l2 = g.constant(random_tensor({2, 3, 3, 3}, rng, -3, 3));
  std::vector<Label> y(n);
  std::vector<double> c1(n), c2(n);
  Mask gamma(n);
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = static_cast<Label>(rng.below(3));
    c1[j] = rng.uniform(0.05, 1.0);
    c2[j] = rng.uniform(0.05, 1.0);
    gamma[j] = j % 3 == 0;
  }
  dev(val(noise_balance_loss(g, l1, l2, y, c1, c2, Mask(n, 1), -4.0)), 0.0);
  dev(val(clean_loss(g, l1, l2, y, Mask(n, 0))), 0.0);

  // omega == 1: half the sum over branches of the mean CE over the noise set.
  const std::vector<double> ones(n, 1.0);
  double ce = 0;
  std::size_t noisy = 0;
  for (const auto& logits : {g.value(l1), g.value(l2)})
    for (std::size_t j = 0; j < n; ++j) {
      if (gamma[j]) continue;
      const std::size_t img = j / 9, pix = j % 9;
      std::vector<double> z(3);
      for (std::size_t c = 0; c < 3; ++c) z[c] = logits.values[(img * 3 + c) * 9 + pix];
      ce += ce_pixel(z, y[j]);
      ++noisy;
    }
  dev(val(noise_balance_loss(g, l1, l2, y, ones, ones, gamma, -4.0)), ce / static_cast<double>(noisy));

  const std::vector<double> onehot{0.0, 60.0, 0.0, 0.0};
  dev(rce_pixel(onehot, 1, -4.0), 0.0);
  dev(rce_pixel(onehot, 0, -4.0), 4.0);
  dev(rce_pixel(std::vector<double>(4, 0.0), 2, -4.0), 3.0);
  return {worst <= 1e-9, "worst deviation " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 5

Outcome calibration() {
  const double t0 = cpu_seconds();
  const RunConfig rc;
  const auto data = generate_run_data(rc);
  const auto ratios = dataset_clean_ratios(data.train, rc.dataset_spec().classes());
  const double target[] = {0.170, 0.321, 0.443};
  bool ok = true;
  std::string detail = "noise";
  for (std::size_t c = 1; c <= 3; ++c) {
    const double noise = ratios[c] ? 1.0 - *ratios[c] : 1.0;
    ok = ok && std::abs(noise - target[c - 1]) <= 0.03;
    detail += " " + fmt("%.1f%%", 100 * noise);
  }
  const double secs = cpu_seconds() - t0;
  return {ok && secs < 30.0, detail + " (targets 17.0/32.1/44.3), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 6-8

struct RunSummary {
  double dice = 0;
  std::uint64_t divergent = 0;
  std::vector<std::optional<double>> selected_ratio;
  std::vector<std::optional<double>> raw_ratio;
};

RunSummary train_once(const RunConfig& rc, Rung rung, double beta) {
  auto data = generate_run_data(rc);
  TrainConfig tc = apply_rung(rc.train_config(), rung);
  tc.weights.beta = beta;
  DiagnosticTap tap;
  for (const auto& s : data.train) tap.clean_labels.push_back(s.clean_label);
  const auto view = training_view(data.train);
  const auto result = run(view, data.test, tc, &tap);
  const EpochLog& last = result.logs.back();
  return {last.eval.mean_dice, last.divergent_pixels, last.clean_set_ratio,
          dataset_clean_ratios(data.train, rc.dataset_spec().classes())};
}

struct Experiments {
  // [rung][seed]
  std::vector<std::vector<RunSummary>> ladder;
  std::vector<RunSummary> no_beta;
  double ladder_cpu = 0;
};

const Rung kLadder[] = {Rung::baseline, Rung::discrepancy, Rung::ccv, Rung::full};

Experiments run_experiments(const Profile& p, bool need_ladder, bool need_beta) {
  Experiments e;
  const double t0 = cpu_seconds();
  if (need_ladder) {
    for (Rung r : kLadder) {
      auto& row = e.ladder.emplace_back();
      for (auto seed : p.seeds) {
        row.push_back(train_once(p.config(seed), r, 1.0));
        std::fprintf(stderr, "  %-8s seed %llu dice %.4f\n", rung_name(r).c_str(),
                     static_cast<unsigned long long>(seed), row.back().dice);
      }
    }
  }
  e.ladder_cpu = cpu_seconds() - t0;
  if (need_beta)
    for (auto seed : p.seeds) e.no_beta.push_back(train_once(p.config(seed), Rung::full, 0.0));
  return e;
}

Outcome denoising(const Experiments& e) {
  std::vector<double> med;
  for (const auto& row : e.ladder) {
    std::vector<double> d;
    for (const auto& s : row) d.push_back(100 * s.dice);
    med.push_back(median3(d));
  }
  bool ok = med[3] >= med[0] + 3.0;
  for (std::size_t i = 1; i < med.size(); ++i) ok = ok && med[i] >= med[i - 1] - 0.5;
  ok = ok && e.ladder_cpu < 1800.0;
  std::string detail = "median dice";
  for (std::size_t i = 0; i < med.size(); ++i) detail += " " + rung_name(kLadder[i]) + " " + fmt("%.2f", med[i]);
  return {ok, detail + ", " + fmt("%.0f", e.ladder_cpu) + " s CPU"};
}

Outcome purity(const Experiments& e) {
  const auto& full = e.ladder[3];
  bool ok = true;
  std::string detail = "median gain";
  for (std::size_t c = 1; c < full.front().raw_ratio.size(); ++c) {
    std::vector<double> gain;
    for (const auto& s : full) {
      const double sel = s.selected_ratio.size() > c && s.selected_ratio[c] ? *s.selected_ratio[c] : 0.0;
      gain.push_back(100 * (sel - s.raw_ratio[c].value_or(0.0)));
    }
    const double m = median3(gain);
    ok = ok && m >= 5.0;
    detail += " " + fmt("%+.1f", m);
  }
  return {ok, detail + " points"};
}

Outcome divergence(const Experiments& e) {
  std::vector<double> with, without;
  for (const auto& s : e.ladder[3]) with.push_back(static_cast<double>(s.divergent));
  for (const auto& s : e.no_beta) without.push_back(static_cast<double>(s.divergent));
  const double a = median3(with), b = median3(without);
  return {a > b, "median divergent pixels beta=1 " + fmt("%.0f", a) + ", beta=0 " + fmt("%.0f", b)};
}

// ---------------------------------------------------------------- 9

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& scratch) {
  RunConfig rc;
  rc.seed = 5;
  rc.train_samples = 24;
  rc.test_samples = 8;
  rc.train.epochs = 4;
  rc.train.warmup_epochs = 2;
  rc.train.learning_rate = 0.4;
  std::vector<std::string> names;
  for (const auto& c : rc.dataset_spec().foreground) names.push_back(c.name);
  names.insert(names.begin(), "background");
  for (int k = 0; k < 2; ++k) {
    auto data = generate_run_data(rc);
    const auto view = training_view(data.train);
    const auto result = run(view, data.test, rc.train_config());
    write_run_outputs(scratch / ("run" + std::to_string(k)), result.logs, names, rc.train_config());
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(scratch / "run0")) {
    if (entry.path().extension() != ".csv") continue;
    ++compared;
    if (read_bytes(entry.path()) != read_bytes(scratch / "run1" / entry.path().filename())) ++differing;
  }
  return {compared > 0 && differing == 0,
          std::to_string(compared) + " CSV files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLCS acceptance checks"};
  std::vector<int> only;
  fs::path scratch = fs::temp_directory_path() / "clcs_acceptance";
  Profile profile;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--scratch", scratch, "directory for the determinism runs");
  app.add_option("--train-samples", profile.train_samples, "training samples for criteria 6-8");
  app.add_option("--epochs", profile.epochs, "epochs for criteria 6-8");
  app.add_option("--warmup", profile.warmup, "warmup epochs for criteria 6-8");
  app.add_option("--tau", profile.tau, "base confidence threshold for criteria 6-8");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> want = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                          : std::set<int>(only.begin(), only.end());
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  bool all = true;
  auto report = [&](int id, const char* title, const Outcome& o) {
    std::printf("criterion %d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  };
  auto guarded = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    if (!want.count(id)) return;
    try {
      report(id, title, fn());
    } catch (const std::exception& ex) {
      report(id, title, {false, std::string("error: ") + ex.what()});
    }
  };

  guarded(1, "gradients match finite differences", gradients);
  guarded(2, "curriculum threshold properties", thresholds);
  guarded(3, "voting equals brute-force oracle", voting);
  guarded(4, "loss identities", identities);
  guarded(5, "noise calibration", calibration);

  const bool ladder = want.count(6) || want.count(7) || want.count(8);
  if (ladder) {
    Experiments e;
    std::string error;
    try {
      e = run_experiments(profile, true, want.count(8) > 0);
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    auto from = [&](auto fn) {
      return [&, fn] { return error.empty() ? fn(e) : Outcome{false, "error: " + error}; };
    };
    guarded(6, "denoising over the ablation ladder", from(denoising));
    guarded(7, "clean-set purity", from(purity));
    guarded(8, "divergence maintained by the discrepancy loss", from(divergence));
  }
  guarded(9, "byte-identical CSV outputs", [&] { return determinism(scratch); });
  return all ? 0 : 1;
}
