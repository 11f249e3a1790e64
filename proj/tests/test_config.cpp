#include <filesystem>

#include "clcs/config.hpp"
#include "doctest.h"

using namespace clcs;

TEST_CASE("parse and format round-trip") {
  const RunConfig c = parse_run_config(
      "# comment\n"
      "name = demo\n"
      "seed = 7   # trailing\n"
      "epochs = 12\nwarmup_epochs = 4\n"
      "morph_rate = 0, 0.5, 0.25, 0.1\n"
      "confusion = 2>3:0.1, 3>1:0.2\n"
      "nbl = rce-only\nthresholds = linear\nselection = on\n"
      "alpha = 1\nbeta = 0.01\n");
  CHECK(c.name == "demo");
  CHECK(c.seed == 7);
  CHECK(c.train.epochs == 12);
  CHECK(c.noise.morph_rate == std::vector<double>{0, 0.5, 0.25, 0.1});
  REQUIRE(c.noise.confusion.size() == 2);
  CHECK(c.noise.confusion[1].to == 1);
  CHECK(c.train.nbl_mode == NblMode::rce_only);
  CHECK(c.train.mapping == ThresholdMapping::linear);
  CHECK(c.train.weights.alpha == 1.0);
  CHECK_NOTHROW(c.validate());

  const RunConfig again = parse_run_config(format_run_config(c));
  CHECK(format_run_config(again) == format_run_config(c));
  CHECK(again.noise.confusion[0].probability == 0.1);
  CHECK(again.train_config().seed == 7);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(parse_run_config("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("confusion = 2-3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("selection = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs = 0\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs = 5\nwarmup_epochs = 6\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("tau = 1.0\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("learning_rate = 0\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("image_size = 30\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("selection = off\nnbl = full\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("confusion = 1>1:0.5\n").validate(), ConfigError);
  CHECK_NOTHROW(parse_run_config("epochs = 10\nwarmup_epochs = 10\n").validate());
  try {
    parse_run_config("seed = 1\nfoo = 2\n", "my.cfg");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("my.cfg:2") != std::string::npos);
  }
}

TEST_CASE("missing config files are reported by type") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/clcs.cfg"), ConfigFileMissing);
}

TEST_CASE("generated splits are disjoint slices of one pool") {
  RunConfig c;
  c.train_samples = 3;
  c.test_samples = 2;
  const auto d = generate_run_data(c);
  CHECK(d.train.size() == 3);
  CHECK(d.test.size() == 2);
  CHECK(d.test[0].id == 3);
  CHECK(d.train[0].image != d.test[0].image);
  const auto again = generate_run_data(c);
  CHECK(again.test[1].noisy_label == d.test[1].noisy_label);
}
