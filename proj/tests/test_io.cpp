#include <filesystem>
#include <fstream>
#include <sstream>

#include "clcs/config.hpp"
#include "clcs/io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clcs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clcs_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("real formatting round-trips") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23}) {
    const std::string s = format_real(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_real(0.5) == "0.5");
}

TEST_CASE("tensor blob layout") {
  const Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6.5f});
  std::stringstream ss;
  write_tensor_blob(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 4 + 2 * 4 + 6 * 8);
  CHECK(bytes[0] == 2);
  CHECK(bytes[4] == 2);
  CHECK(bytes[8] == 3);
  const auto back = read_tensor_blob(ss);
  CHECK(back.shape == Shape{2, 3});
  CHECK(back.values[5] == 6.5);
  std::stringstream truncated(bytes.substr(0, 20));
  CHECK_THROWS(read_tensor_blob(truncated));
}

TEST_CASE("image files round-trip") {
  const fs::path dir = scratch("images");
  const auto s = generate_dataset(1, default_dataset_spec(), 5)[0];
  write_ppm(dir / "a.ppm", s.image, 64, 64);
  write_pgm(dir / "a.pgm", s.clean_label, 64, 64);
  std::size_t h = 0, w = 0;
  CHECK(read_ppm(dir / "a.ppm", h, w) == s.image);
  CHECK(h == 64);
  CHECK(read_pgm(dir / "a.pgm", h, w) == s.clean_label);
  CHECK(slurp(dir / "a.pgm").substr(0, 2) == "P5");
  CHECK_THROWS(read_ppm(dir / "missing.ppm", h, w));
}

TEST_CASE("checkpoints restore every parameter") {
  const fs::path dir = scratch("ckpt");
  ArchConfig arch;
  arch.feature_dim = 8;
  const TwoBranchModel<float> a(arch, 1);
  TwoBranchModel<float> b(arch, 2);
  save_checkpoint(dir / "model", a);
  load_checkpoint(dir / "model", b);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.values == pb[i]->value.values);
  TwoBranchModel<float> other(ArchConfig{}, 1);
  CHECK_THROWS(load_checkpoint(dir / "model", other));
}

TEST_CASE("dataset directories round-trip") {
  const fs::path dir = scratch("dataset");
  RunConfig rc;
  rc.train_samples = 3;
  rc.test_samples = 2;
  const auto d = generate_run_data(rc);
  DatasetFiles files{rc.dataset_spec(), rc.noise, rc.seed, d.train, d.test};
  write_dataset(dir, files);
  CHECK(fs::exists(dir / "train" / "00000.ppm"));
  CHECK(fs::exists(dir / "test" / "00004_clean.pgm"));
  const auto back = read_dataset(dir);
  REQUIRE(back.train.size() == 3);
  REQUIRE(back.test.size() == 2);
  CHECK(back.train[2].image == d.train[2].image);
  CHECK(back.train[2].noisy_label == d.train[2].noisy_label);
  CHECK(back.test[1].clean_label == d.test[1].clean_label);
  CHECK(back.noise.morph_rate == rc.noise.morph_rate);
  CHECK(back.noise.confusion.size() == rc.noise.confusion.size());

  const std::string manifest = slurp(dir / "manifest.txt");
  const fs::path again = scratch("dataset2");
  write_dataset(again, files);
  CHECK(slurp(again / "manifest.txt") == manifest);
  CHECK(slurp(again / "train" / "00001_noisy.pgm") == slurp(dir / "train" / "00001_noisy.pgm"));
  CHECK_THROWS(read_dataset(dir / "nope"));
}
