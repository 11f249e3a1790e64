#include <filesystem>
#include <fstream>
#include <sstream>

#include "clcs/config.hpp"
#include "clcs/io.hpp"
#include "clcs/trainer.hpp"
#include "doctest.h"

using namespace clcs;
namespace fs = std::filesystem;

namespace {

struct Small {
  GeneratedData data;
  std::vector<TrainingSample> view;
  DiagnosticTap tap;
  TrainConfig cfg;
};

Small small_problem(std::size_t epochs, std::size_t warmup) {
  RunConfig rc;
  rc.seed = 3;
  rc.train_samples = 8;
  rc.test_samples = 4;
  rc.image_size = 32;
  rc.train.epochs = epochs;
  rc.train.warmup_epochs = warmup;
  rc.train.batch_size = 4;
  rc.train.learning_rate = 0.05;
  rc.train.arch.feature_dim = 8;
  Small s{generate_run_data(rc), {}, {}, rc.train_config()};
  s.view = training_view(s.data.train);
  for (const auto& x : s.data.train) s.tap.clean_labels.push_back(x.clean_label);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("sgd examples") {
  Parameter<double> p{"p", Tensor<double>({1}, {1.0}), {2.0}};
  Parameter<double>* ps[] = {&p};
  sgd_step<double>(ps, 0.1);
  CHECK(p.value.values[0] == doctest::Approx(0.8).epsilon(1e-15));
  p.grad = {0.0};
  sgd_step<double>(ps, 0.1);
  CHECK(p.value.values[0] == doctest::Approx(0.8).epsilon(1e-15));

  Parameter<double> a{"a", Tensor<double>({2}, {0.5, -1}), {0.3, -0.7}}, b = a;
  Parameter<double>* pa[] = {&a};
  Parameter<double>* pb[] = {&b};
  sgd_step<double>(pa, 0.1);
  sgd_step<double>(pa, 0.1);
  sgd_step<double>(pb, 0.2);
  CHECK(a.value.values[0] == doctest::Approx(b.value.values[0]).epsilon(1e-14));
  CHECK(a.value.values[1] == doctest::Approx(b.value.values[1]).epsilon(1e-14));

  p.grad = {1.0, 2.0};
  CHECK_THROWS_AS(sgd_step<double>(ps, 0.1), std::invalid_argument);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.warmup_epochs = c.epochs + 1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("rungs") {
  CHECK(all_rungs().size() == 6);
  for (Rung r : all_rungs()) CHECK(parse_rung(rung_name(r)) == r);
  CHECK(!parse_rung("nope").has_value());
  const TrainConfig base;
  const auto b = apply_rung(base, Rung::baseline);
  CHECK(!b.selection_enabled);
  CHECK(!b.discrepancy_enabled);
  CHECK(b.nbl_mode == NblMode::off);
  CHECK(apply_rung(base, Rung::ccv_linear).mapping == ThresholdMapping::linear);
  CHECK(apply_rung(base, Rung::nbl_rce_only).nbl_mode == NblMode::rce_only);
  const auto f = apply_rung(base, Rung::full);
  CHECK((f.selection_enabled && f.discrepancy_enabled && f.nbl_mode == NblMode::full));
}

TEST_CASE("pure warmup run never computes thresholds") {
  auto s = small_problem(2, 2);
  const auto res = run(s.view, s.data.test, s.cfg, &s.tap);
  REQUIRE(res.logs.size() == 2);
  for (const auto& l : res.logs) {
    CHECK(l.warmup);
    CHECK(l.thresholds1.empty());
    CHECK(l.noisy_pixels == 0);
  }
}

TEST_CASE("baseline reduces to plain cross-entropy") {
  auto s = small_problem(2, 1);
  s.cfg = apply_rung(s.cfg, Rung::baseline);
  const auto res = run(s.view, s.data.test, s.cfg);
  for (const auto& l : res.logs) {
    CHECK(l.loss_nbl == 0.0);
    CHECK(l.loss_dis == 0.0);
    CHECK(l.noisy_pixels == 0);
    CHECK(l.loss_total == l.loss_clean);
  }
}

TEST_CASE("selection partitions pixels and bounds thresholds") {
  auto s = small_problem(3, 1);
  const auto res = run(s.view, s.data.test, s.cfg, &s.tap);
  for (const auto& l : res.logs) {
    std::uint64_t labeled = 0, selected = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      labeled += l.label_pixels[c];
      selected += l.selected_pixels[c];
    }
    CHECK(labeled == 8 * 32 * 32);
    CHECK(selected + l.noisy_pixels == labeled);
    if (l.warmup) continue;
    REQUIRE(l.thresholds1.size() == 4);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(l.thresholds1[c] >= 0.0);
      CHECK(l.thresholds1[c] <= s.cfg.tau);
      CHECK(l.thresholds2[c] <= s.cfg.tau);
    }
    for (std::size_t c = 0; c < 4; ++c)
      if (l.clean_set_ratio[c]) {
        CHECK(*l.clean_set_ratio[c] >= 0.0);
        CHECK(*l.clean_set_ratio[c] <= 1.0);
      }
  }
  // The first selecting epoch uses statistics from the last warmup epoch.
  CHECK(!res.logs[1].sigma1.empty());
}

TEST_CASE("runs are deterministic down to the CSV bytes") {
  auto s = small_problem(2, 1);
  const fs::path a = fs::temp_directory_path() / "clcs_test_run_a";
  const fs::path b = fs::temp_directory_path() / "clcs_test_run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::vector<std::string> names{"background", "bar", "blob", "dots"};
  write_run_outputs(a, run(s.view, s.data.test, s.cfg, &s.tap).logs, names, s.cfg);
  write_run_outputs(b, run(s.view, s.data.test, s.cfg, &s.tap).logs, names, s.cfg);
  for (const char* f : {"epochs.csv", "thresholds.csv", "selection.csv", "clean_ratio.csv",
                        "divergence.csv", "scores.csv", "summary.txt"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "epochs.csv").rfind("epoch,phase,", 0) == 0);
}

TEST_CASE("non-finite losses abort with a batch report") {
  auto s = small_problem(2, 1);
  s.cfg.learning_rate = 1e30;
  const fs::path dump = fs::temp_directory_path() / "clcs_test_nonfinite";
  fs::remove_all(dump);
  CHECK_THROWS_AS(run(s.view, s.data.test, s.cfg, nullptr, {}, dump), std::runtime_error);
  CHECK(fs::exists(dump / "nonfinite_batch.txt"));
}

TEST_CASE("mismatched inputs are rejected") {
  auto s = small_problem(1, 1);
  DiagnosticTap wrong;
  CHECK_THROWS_AS(run(s.view, s.data.test, s.cfg, &wrong), std::invalid_argument);
}
