#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "clcs/data.hpp"
#include "doctest.h"

using namespace clcs;

namespace {

// 3x3 square of class 1 centred in a 9x9 map.
std::vector<Label> square_map() {
  std::vector<Label> m(81, 0);
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 6; ++x) m[y * 9 + x] = 1;
  return m;
}

std::size_t count(const std::vector<Label>& m, Label c) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), c));
}

NoiseConfig only_morph(double rate, int radius) {
  NoiseConfig cfg;
  cfg.morph_rate = {0.0, rate, rate, rate};
  cfg.max_radius = radius;
  return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic and sized") {
  const auto spec = default_dataset_spec();
  const auto a = generate_dataset(6, spec, 3);
  const auto b = generate_dataset(6, spec, 3);
  const auto c = generate_dataset(6, spec, 4);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].clean_label == b[i].clean_label);
    CHECK(a[i].image.size() == 3 * 64 * 64);
    CHECK(a[i].noisy_label == a[i].clean_label);
  }
  CHECK(a[0].image != c[0].image);
  CHECK(generate_dataset(0, spec, 3).empty());
  // A sample depends on its index only, not on how many are generated.
  CHECK(generate_dataset(2, spec, 3)[1].image == a[1].image);
}

TEST_CASE("pixel values are quantized to 8 bits") {
  const auto s = generate_dataset(1, default_dataset_spec(), 9)[0];
  for (float v : s.image) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    CHECK(std::abs(v * 255.0f - std::round(v * 255.0f)) < 1e-3f);
  }
}

TEST_CASE("class shares stay inside the configured ranges") {
  const auto spec = default_dataset_spec();
  const auto data = generate_dataset(500, spec, 17);
  std::vector<double> mean(spec.classes(), 0.0);
  for (const auto& s : data) {
    for (std::size_t c = 1; c < spec.classes(); ++c) {
      const double share = static_cast<double>(count(s.clean_label, static_cast<Label>(c))) / s.clean_label.size();
      CHECK(share >= spec.foreground[c - 1].share_lo);
      CHECK(share <= spec.foreground[c - 1].share_hi);
      mean[c] += share / data.size();
    }
  }
  // Imbalanced: bar > blob > dots on average.
  CHECK(mean[1] > mean[2]);
  CHECK(mean[2] > mean[3]);
}

TEST_CASE("infeasible specs are rejected") {
  auto spec = default_dataset_spec();
  spec.foreground[0].share_lo = 0.6;
  spec.foreground[0].share_hi = 0.7;
  spec.foreground[1].share_lo = 0.5;
  spec.foreground[1].share_hi = 0.6;
  CHECK_THROWS_AS(generate_dataset(1, spec, 0), std::invalid_argument);
}

TEST_CASE("morphology examples") {
  const auto sq = square_map();
  CHECK(inject_morphological_noise(sq, 9, 9, only_morph(0.0, 3), 5) == sq);

  // Radius-1 dilation by the plus element grows the square to 21 pixels.
  bool dilated = false, vanished = false;
  for (std::uint64_t seed = 0; seed < 64 && !dilated; ++seed) {
    const auto out = inject_morphological_noise(sq, 9, 9, only_morph(1.0, 1), seed);
    if (count(out, 1) <= 9) continue;
    dilated = true;
    CHECK(count(out, 1) == 21);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        const int dy = y < 3 ? 3 - y : y > 5 ? y - 5 : 0;
        const int dx = x < 3 ? 3 - x : x > 5 ? x - 5 : 0;
        CHECK((out[y * 9 + x] == 1) == (dx + dy <= 1));
      }
  }
  CHECK(dilated);

  // Radius-2 erosion empties the square; every clean pixel becomes wrong.
  for (std::uint64_t seed = 0; seed < 256 && !vanished; ++seed) {
    const auto out = inject_morphological_noise(sq, 9, 9, only_morph(1.0, 2), seed);
    if (count(out, 1) != 0) continue;
    vanished = true;
    CHECK(count(out, 0) == 81);
    CHECK(!clean_ratio(out, sq, 1).has_value());
    CHECK(*clean_ratio(sq, out, 1) == 0.0);
  }
  CHECK(vanished);
}

TEST_CASE("dilation only overwrites background") {
  std::vector<Label> m(25, 0);
  m[12] = 1;  // centre
  m[13] = 2;  // right neighbour, another class, never perturbed itself
  NoiseConfig cfg = only_morph(1.0, 2);
  cfg.morph_rate[2] = 0.0;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const auto out = inject_morphological_noise(m, 5, 5, cfg, seed);
    CHECK(out[13] == 2);  // never overwritten by a foreign component's dilation
    for (std::size_t i = 0; i < 25; ++i)
      if (m[i] != 0 && out[i] != 0) CHECK(out[i] == m[i]);
  }
}

TEST_CASE("confusion examples") {
  const auto sq = square_map();
  const std::vector<ConfusionPair> none{{1, 2, 0.0}}, all{{1, 2, 1.0}};
  CHECK(inject_confusion_noise(sq, 9, 9, none, 1) == sq);
  const auto flipped = inject_confusion_noise(sq, 9, 9, all, 1);
  CHECK(count(flipped, 1) == 0);
  CHECK(count(flipped, 2) == 9);
  const std::vector<ConfusionPair> self{{1, 1, 0.5}};
  CHECK_THROWS_AS(inject_confusion_noise(sq, 9, 9, self, 1), std::invalid_argument);

  // 200 isolated single-pixel components, half flipped on average.
  std::vector<Label> grid(40 * 20, 0);
  for (int y = 0; y < 20; y += 2)
    for (int x = 0; x < 40; x += 2) grid[y * 40 + x] = 1;
  REQUIRE(foreground_components(grid, 20, 40).size() == 200);
  const std::vector<ConfusionPair> half{{1, 2, 0.5}};
  const auto out = inject_confusion_noise(grid, 20, 40, half, 77);
  const double frac = count(out, 2) / 200.0;
  CHECK(frac >= 0.4);
  CHECK(frac <= 0.6);
}

TEST_CASE("components are 4-connected") {
  // Diagonal neighbours are separate components.
  std::vector<Label> m{1, 0, 0, 1};
  CHECK(foreground_components(m, 2, 2).size() == 2);
  m = {1, 1, 0, 2};
  CHECK(foreground_components(m, 2, 2).size() == 2);
}

TEST_CASE("clean_ratio examples") {
  const std::vector<Label> clean{1, 1, 1, 0, 2, 2};
  CHECK(*clean_ratio(clean, clean, 1) == 1.0);
  CHECK(*clean_ratio(clean, clean, 2) == 1.0);
  CHECK(!clean_ratio(clean, clean, 3).has_value());
  const std::vector<Label> wrong{0, 0, 0, 1, 2, 2};
  CHECK(*clean_ratio(wrong, clean, 1) == 0.0);
  const std::vector<Label> mostly{1, 1, 1, 1, 2, 2};
  CHECK(*clean_ratio(mostly, clean, 1) == 0.75);
}

TEST_CASE("noise ratio grows with the morphological rate") {
  const auto base = generate_dataset(60, default_dataset_spec(), 21);
  std::vector<double> prev(4, -1.0);
  for (double rate : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    auto data = base;
    apply_noise(data, only_morph(rate, 3), 5);
    const auto r = dataset_clean_ratios(data, 4);
    for (std::size_t c = 1; c < 4; ++c) {
      const double noise = 1.0 - r[c].value();
      CHECK(noise >= prev[c] - 1e-12);
      prev[c] = noise;
    }
  }
}

TEST_CASE("noise is reproducible per sample") {
  auto a = generate_dataset(5, default_dataset_spec(), 2);
  auto b = a;
  apply_noise(a, reference_noise_config(), 8);
  apply_noise(b, reference_noise_config(), 8);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].noisy_label == b[i].noisy_label);
    changed += a[i].noisy_label != a[i].clean_label;
  }
  CHECK(changed > 0);
  auto c = std::vector<Sample>(b.begin() + 2, b.end());
  apply_noise(c, reference_noise_config(), 8);
  CHECK(c[0].noisy_label == a[2].noisy_label);
}

TEST_CASE("training view hides clean labels") {
  auto data = generate_dataset(2, default_dataset_spec(), 1);
  apply_noise(data, reference_noise_config(), 1);
  const auto view = training_view(data);
  CHECK(view[1].label == data[1].noisy_label);
  CHECK(view[1].image == data[1].image);
}

TEST_CASE("noise config validation") {
  CHECK_NOTHROW(reference_noise_config().validate(4));
  NoiseConfig bad = reference_noise_config();
  bad.morph_rate[1] = 1.5;
  CHECK_THROWS_AS(bad.validate(4), std::invalid_argument);
  bad = reference_noise_config();
  bad.confusion.push_back({0, 1, 0.5});
  CHECK_THROWS_AS(bad.validate(4), std::invalid_argument);
  bad = reference_noise_config();
  bad.max_radius = 0;
  CHECK_THROWS_AS(bad.validate(4), std::invalid_argument);
}

TEST_CASE("stack_images packs NCHW") {
  const auto data = generate_dataset(2, default_dataset_spec(), 4);
  const float* ptrs[] = {data[0].image.data(), data[1].image.data()};
  const auto t = stack_images<double>(ptrs, 64, 64);
  CHECK(t.shape == Shape{2, 3, 64, 64});
  CHECK(t.values[3 * 4096 + 5] == doctest::Approx(data[1].image[5]));
}
