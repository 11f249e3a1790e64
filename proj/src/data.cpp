#include "clcs/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "clcs/random.hpp"

namespace clcs {

namespace {

constexpr int kSceneAttempts = 200;

// Stream tags for stream_key; distinct per consumer.
enum : std::uint64_t { kSceneStream = 11, kPixelStream = 12, kConfusionStream = 21, kMorphStream = 22 };

struct Vec2 {
  double x = 0, y = 0;
};

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

struct Scene {
  Vec2 entry, tip;
  double bar_half_width = 4;
  double angle = 0;
  Vec2 blob_center;
  double blob_rx = 6, blob_ry = 5;
  std::vector<Vec2> dots;
  double dot_radius = 2.5;
};

Scene draw_scene(Rng& rng, std::size_t h, std::size_t w) {
  Scene s;
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  s.tip = {rng.uniform(0.3 * W, 0.7 * W), rng.uniform(0.3 * H, 0.7 * H)};
  s.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  // The bar runs from far outside the image to the tip along -direction.
  const Vec2 dir{std::cos(s.angle), std::sin(s.angle)};
  s.entry = {s.tip.x - 2.0 * W * dir.x, s.tip.y - 2.0 * H * dir.y};
  s.bar_half_width = rng.uniform(0.055, 0.085) * W;
  const double scale = W / 64.0;
  s.blob_rx = rng.uniform(5.5, 8.0) * scale;
  s.blob_ry = rng.uniform(4.5, 6.5) * scale;
  s.blob_center = {s.tip.x + 0.5 * s.blob_rx * dir.x, s.tip.y + 0.5 * s.blob_rx * dir.y};
  s.dot_radius = rng.uniform(2.5, 3.5) * scale;
  const double reach = s.blob_rx * 0.5 + s.blob_rx + s.dot_radius + rng.uniform(0.5, 2.5) * scale;
  const double spread = rng.uniform(2.5, 4.5) * scale;
  const Vec2 normal{-dir.y, dir.x};
  for (double side : {-1.0, 1.0}) {
    s.dots.push_back({s.tip.x + reach * dir.x + side * spread * normal.x,
                      s.tip.y + reach * dir.y + side * spread * normal.y});
  }
  return s;
}

std::vector<Label> rasterize(const Scene& s, std::size_t h, std::size_t w) {
  std::vector<Label> label(h * w, 0);
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Vec2 p{x + 0.5, y + 0.5};
      Label c = 0;
      if (segment_distance(p, s.entry, s.tip) <= s.bar_half_width) c = 1;
      const double dx = p.x - s.blob_center.x, dy = p.y - s.blob_center.y;
      const double u = (dx * ca + dy * sa) / s.blob_rx, v = (-dx * sa + dy * ca) / s.blob_ry;
      if (u * u + v * v <= 1.0) c = 2;
      for (const auto& d : s.dots) {
        const double ex = p.x - d.x, ey = p.y - d.y;
        if (ex * ex + ey * ey <= s.dot_radius * s.dot_radius) c = 3;
      }
      label[y * w + x] = c;
    }
  return label;
}

bool shares_ok(const std::vector<Label>& label, const DatasetSpec& spec) {
  std::vector<std::size_t> count(spec.classes(), 0);
  for (Label l : label) ++count[l];
  for (std::size_t c = 1; c < spec.classes(); ++c) {
    const double share = static_cast<double>(count[c]) / static_cast<double>(label.size());
    const auto& cs = spec.foreground[c - 1];
    if (share < cs.share_lo || share > cs.share_hi) return false;
  }
  return true;
}

// Class 1..=3 map to bar, blob, dots in the default scene; specs with other
// kinds reuse the same scene with their class index assigned by kind.
std::vector<Label> relabel_by_kind(const std::vector<Label>& scene_label, const DatasetSpec& spec) {
  std::array<Label, 4> map{0, 0, 0, 0};
  for (std::size_t c = 1; c < spec.classes(); ++c) {
    const auto kind = spec.foreground[c - 1].kind;
    const std::size_t slot = kind == ShapeKind::bar ? 1 : kind == ShapeKind::blob ? 2 : 3;
    map[slot] = static_cast<Label>(c);
  }
  std::vector<Label> out(scene_label.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = map[scene_label[i]];
  return out;
}

std::vector<float> render(const std::vector<Label>& label, const DatasetSpec& spec, Rng& rng) {
  const std::size_t h = spec.height, w = spec.width, plane = h * w;
  std::vector<float> image(3 * plane);
  // Smooth background texture: a few random low-frequency waves.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k) {
    waves.push_back({rng.uniform(-2.0, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(w),
                     rng.uniform(-2.0, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(h),
                     rng.uniform(0.0, 2.0 * std::numbers::pi), spec.background_texture / 3.0});
  }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double texture = 0.0;
      for (const auto& wv : waves) texture += wv.amp * std::cos(wv.fx * x + wv.fy * y + wv.phase);
      const Label c = label[y * w + x];
      const auto& base = c == 0 ? spec.background : spec.foreground[c - 1].color;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = base[ch] + texture + spec.pixel_noise * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        image[ch * plane + y * w + x] = static_cast<float>(std::round(v * 255.0) / 255.0);
      }
    }
  return image;
}

// One step of 4-neighborhood erosion; out-of-image neighbors count as inside.
std::vector<std::uint8_t> erode_once(const std::vector<std::uint8_t>& m, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> out(m.size(), 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (!m[i]) continue;
      const bool keep = (x == 0 || m[i - 1]) && (x + 1 == w || m[i + 1]) && (y == 0 || m[i - w]) &&
                        (y + 1 == h || m[i + w]);
      out[i] = keep ? 1 : 0;
    }
  return out;
}

std::vector<std::uint8_t> dilate_once(const std::vector<std::uint8_t>& m, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> out(m);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (m[i]) continue;
      const bool hit = (x > 0 && m[i - 1]) || (x + 1 < w && m[i + 1]) || (y > 0 && m[i - w]) ||
                       (y + 1 < h && m[i + w]);
      out[i] = hit ? 1 : 0;
    }
  return out;
}

void check_label_size(std::span<const Label> label, std::size_t h, std::size_t w) {
  if (label.size() != h * w) {
    throw std::invalid_argument("label map has " + std::to_string(label.size()) +
                                " pixels, expected " + std::to_string(h * w));
  }
}

}  // namespace

void DatasetSpec::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("dataset: empty image size");
  if (foreground.empty() || foreground.size() > 3) {
    throw std::invalid_argument("dataset: need 1-3 foreground classes");
  }
  double lo_sum = 0.0;
  for (const auto& c : foreground) {
    if (!(c.share_lo >= 0.0 && c.share_lo <= c.share_hi && c.share_hi <= 1.0)) {
      throw std::invalid_argument("dataset: invalid share range for class " + c.name);
    }
    lo_sum += c.share_lo;
  }
  if (lo_sum >= 1.0) throw std::invalid_argument("dataset: foreground shares sum to >= 1");
  for (std::size_t i = 0; i < foreground.size(); ++i)
    for (std::size_t j = i + 1; j < foreground.size(); ++j)
      if (foreground[i].kind == foreground[j].kind) {
        throw std::invalid_argument("dataset: duplicate shape kind");
      }
}

DatasetSpec default_dataset_spec() {
  DatasetSpec spec;
  spec.foreground = {
      {"bar", ShapeKind::bar, 0.07, 0.17, {0.85, 0.45, 0.25}},
      {"blob", ShapeKind::blob, 0.02, 0.065, {0.30, 0.80, 0.35}},
      {"dots", ShapeKind::dots, 0.008, 0.03, {0.30, 0.40, 0.90}},
  };
  return spec;
}

void NoiseConfig::validate(std::size_t classes) const {
  for (double r : morph_rate)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("noise: morphological rate outside [0,1]");
  if (morph_rate.size() > classes) throw std::invalid_argument("noise: more rates than classes");
  if (max_radius < 1) throw std::invalid_argument("noise: max radius must be >= 1");
  for (const auto& p : confusion) {
    if (!(p.probability >= 0.0 && p.probability <= 1.0))
      throw std::invalid_argument("noise: confusion probability outside [0,1]");
    if (p.from == p.to) throw std::invalid_argument("noise: confusion pair maps a class to itself");
    if (p.from >= classes || p.to >= classes) throw std::invalid_argument("noise: confusion class out of range");
    if (p.from == 0) throw std::invalid_argument("noise: confusion source must be a foreground class");
  }
}

NoiseConfig reference_noise_config() {
  NoiseConfig cfg;
  cfg.morph_rate = {0.0, 0.85, 0.8, 0.7};
  cfg.max_radius = 3;
  cfg.confusion = {{2, 3, 0.04}, {3, 2, 0.30}};
  return cfg;
}

std::vector<TrainingSample> training_view(std::span<const Sample> samples) {
  std::vector<TrainingSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s.id, s.height, s.width, s.image, s.noisy_label});
  return out;
}

std::vector<Sample> generate_dataset(std::size_t n, const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng scene_rng(seed, {kSceneStream, i});
    std::vector<Label> label;
    int attempt = 0;
    for (; attempt < kSceneAttempts; ++attempt) {
      label = relabel_by_kind(rasterize(draw_scene(scene_rng, spec.height, spec.width), spec.height,
                                        spec.width),
                              spec);
      if (shares_ok(label, spec)) break;
    }
    if (attempt == kSceneAttempts) {
      throw std::runtime_error("generate_dataset: could not satisfy class shares for sample " +
                               std::to_string(i));
    }
    Rng pixel_rng(seed, {kPixelStream, i});
    auto& s = out[i];
    s.id = i;
    s.height = spec.height;
    s.width = spec.width;
    s.image = render(label, spec, pixel_rng);
    s.clean_label = label;
    s.noisy_label = std::move(label);
  }
  return out;
}

std::vector<std::vector<std::size_t>> foreground_components(std::span<const Label> label,
                                                           std::size_t height, std::size_t width) {
  check_label_size(label, height, width);
  std::vector<std::vector<std::size_t>> comps;
  std::vector<std::uint8_t> seen(label.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < label.size(); ++start) {
    if (label[start] == 0 || seen[start]) continue;
    const Label c = label[start];
    std::vector<std::size_t> comp;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const std::size_t y = i / width, x = i % width;
      auto visit = [&](std::size_t j) {
        if (!seen[j] && label[j] == c) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < width) visit(i + 1);
      if (y > 0) visit(i - width);
      if (y + 1 < height) visit(i + width);
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

std::vector<Label> inject_morphological_noise(std::span<const Label> label, std::size_t height,
                                              std::size_t width, const NoiseConfig& cfg,
                                              std::uint64_t seed) {
  check_label_size(label, height, width);
  std::vector<Label> out(label.begin(), label.end());
  Rng rng(seed);
  for (const auto& comp : foreground_components(label, height, width)) {
    const Label c = label[comp.front()];
    const double rate = c < cfg.morph_rate.size() ? cfg.morph_rate[c] : 0.0;
    // Draws happen for every component so one class's rate does not shift
    // the randomness seen by the others.
    const bool hit = rng.bernoulli(rate);
    const bool erode = rng.bernoulli(0.5);
    const auto radius = static_cast<int>(rng.between(1, cfg.max_radius));
    if (!hit) continue;
    std::vector<std::uint8_t> mask(label.size(), 0);
    for (std::size_t i : comp) mask[i] = 1;
    for (int r = 0; r < radius; ++r) mask = erode ? erode_once(mask, height, width) : dilate_once(mask, height, width);
    if (erode) {
      for (std::size_t i : comp)
        if (!mask[i] && out[i] == c) out[i] = 0;
    } else {
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] && label[i] == 0 && out[i] == 0) out[i] = c;
    }
  }
  return out;
}

std::vector<Label> inject_confusion_noise(std::span<const Label> label, std::size_t height,
                                          std::size_t width, std::span<const ConfusionPair> pairs,
                                          std::uint64_t seed) {
  check_label_size(label, height, width);
  for (const auto& p : pairs)
    if (p.from == p.to) throw std::invalid_argument("confusion pair maps class " + std::to_string(p.from) + " to itself");
  std::vector<Label> out(label.begin(), label.end());
  Rng rng(seed);
  for (const auto& comp : foreground_components(label, height, width)) {
    const Label c = label[comp.front()];
    for (const auto& p : pairs) {
      const bool flip = rng.bernoulli(p.probability);
      if (p.from != c || !flip) continue;
      for (std::size_t i : comp) out[i] = p.to;
      break;
    }
  }
  return out;
}

void apply_noise(std::vector<Sample>& samples, const NoiseConfig& cfg, std::uint64_t seed) {
  for (auto& s : samples) {
    auto flipped = inject_confusion_noise(s.clean_label, s.height, s.width, cfg.confusion,
                                          stream_key(seed, {kConfusionStream, s.id}));
    s.noisy_label = inject_morphological_noise(flipped, s.height, s.width, cfg,
                                               stream_key(seed, {kMorphStream, s.id}));
  }
}

std::optional<double> clean_ratio(std::span<const Label> noisy, std::span<const Label> clean, Label c) {
  if (noisy.size() != clean.size()) throw std::invalid_argument("clean_ratio: misaligned label maps");
  std::size_t labeled = 0, correct = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (noisy[i] != c) continue;
    ++labeled;
    if (clean[i] == c) ++correct;
  }
  if (labeled == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(labeled);
}

std::vector<std::optional<double>> dataset_clean_ratios(std::span<const Sample> samples,
                                                        std::size_t classes) {
  std::vector<std::size_t> labeled(classes, 0), correct(classes, 0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < s.noisy_label.size(); ++i) {
      const Label c = s.noisy_label[i];
      ++labeled[c];
      if (s.clean_label[i] == c) ++correct[c];
    }
  std::vector<std::optional<double>> out(classes);
  for (std::size_t c = 0; c < classes; ++c)
    if (labeled[c]) out[c] = static_cast<double>(correct[c]) / static_cast<double>(labeled[c]);
  return out;
}

template <typename T>
Tensor<T> stack_images(std::span<const float* const> images, std::size_t height, std::size_t width) {
  const std::size_t per = 3 * height * width;
  auto out = Tensor<T>::zeros({images.size(), 3, height, width});
  for (std::size_t n = 0; n < images.size(); ++n)
    std::transform(images[n], images[n] + per, out.values.begin() + n * per,
                   [](float v) { return static_cast<T>(v); });
  return out;
}

template Tensor<float> stack_images<float>(std::span<const float* const>, std::size_t, std::size_t);
template Tensor<double> stack_images<double>(std::span<const float* const>, std::size_t, std::size_t);

}  // namespace clcs
