#include "clcs/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "clcs/io.hpp"
#include "clcs/random.hpp"

namespace clcs {

namespace {

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kNoiseStream = 2;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

double to_real(const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("not a non-negative integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

NblMode to_nbl(const std::string& v) {
  if (v == "off") return NblMode::off;
  if (v == "rce-only") return NblMode::rce_only;
  if (v == "full") return NblMode::full;
  throw ConfigError("nbl must be off, rce-only or full, got '" + v + "'");
}

ThresholdMapping to_mapping(const std::string& v) {
  if (v == "convex") return ThresholdMapping::convex;
  if (v == "linear") return ThresholdMapping::linear;
  throw ConfigError("thresholds must be convex or linear, got '" + v + "'");
}

std::string nbl_text(NblMode m) {
  return m == NblMode::full ? "full" : m == NblMode::rce_only ? "rce-only" : "off";
}

// confusion = from>to:p, ...
std::vector<ConfusionPair> to_confusion(const std::string& v) {
  std::vector<ConfusionPair> out;
  if (v.empty() || v == "none") return out;
  for (const auto& item : split(v, ',')) {
    const auto gt = item.find('>'), colon = item.find(':');
    if (gt == std::string::npos || colon == std::string::npos || colon < gt)
      throw ConfigError("confusion entries look like 2>3:0.15, got '" + item + "'");
    const auto from = to_uint(trim(item.substr(0, gt)));
    const auto to = to_uint(trim(item.substr(gt + 1, colon - gt - 1)));
    if (from > 255 || to > 255) throw ConfigError("confusion class out of range in '" + item + "'");
    out.push_back({static_cast<Label>(from), static_cast<Label>(to), to_real(trim(item.substr(colon + 1)))});
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"name", [](RunConfig& c, const std::string& v) { c.name = v; }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_uint(v); }},
      {"train_samples", [](RunConfig& c, const std::string& v) { c.train_samples = to_uint(v); }},
      {"test_samples", [](RunConfig& c, const std::string& v) { c.test_samples = to_uint(v); }},
      {"image_size", [](RunConfig& c, const std::string& v) { c.image_size = to_uint(v); }},
      {"pixel_noise", [](RunConfig& c, const std::string& v) { c.pixel_noise = to_real(v); }},
      {"morph_rate",
       [](RunConfig& c, const std::string& v) {
         c.noise.morph_rate.clear();
         for (const auto& r : split(v, ',')) c.noise.morph_rate.push_back(to_real(r));
       }},
      {"max_radius", [](RunConfig& c, const std::string& v) { c.noise.max_radius = static_cast<int>(to_uint(v)); }},
      {"confusion", [](RunConfig& c, const std::string& v) { c.noise.confusion = to_confusion(v); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_uint(v); }},
      {"warmup_epochs", [](RunConfig& c, const std::string& v) { c.train.warmup_epochs = to_uint(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_uint(v); }},
      {"learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_real(v); }},
      {"tau", [](RunConfig& c, const std::string& v) { c.train.tau = to_real(v); }},
      {"alpha", [](RunConfig& c, const std::string& v) { c.train.weights.alpha = to_real(v); }},
      {"beta", [](RunConfig& c, const std::string& v) { c.train.weights.beta = to_real(v); }},
      {"rce_clamp", [](RunConfig& c, const std::string& v) { c.train.weights.rce_log_zero = to_real(v); }},
      {"discrepancy", [](RunConfig& c, const std::string& v) { c.train.discrepancy_enabled = to_bool(v); }},
      {"selection", [](RunConfig& c, const std::string& v) { c.train.selection_enabled = to_bool(v); }},
      {"nbl", [](RunConfig& c, const std::string& v) { c.train.nbl_mode = to_nbl(v); }},
      {"thresholds", [](RunConfig& c, const std::string& v) { c.train.mapping = to_mapping(v); }},
      {"feature_dim", [](RunConfig& c, const std::string& v) { c.train.arch.feature_dim = to_uint(v); }},
      {"eval_batch", [](RunConfig& c, const std::string& v) { c.train.eval_batch = to_uint(v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (train_samples == 0) throw ConfigError("train_samples must be >= 1");
  if (image_size == 0 || image_size % 4 != 0) throw ConfigError("image_size must be a positive multiple of 4");
  if (image_size < 32) throw ConfigError("image_size must be >= 32 for the default scene");
  if (!(pixel_noise >= 0.0)) throw ConfigError("pixel_noise must be >= 0");
  try {
    dataset_spec().validate();
    noise.validate(dataset_spec().classes());
    train_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.arch.classes != dataset_spec().classes())
    throw ConfigError("model class count does not match the dataset");
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec spec = default_dataset_spec();
  spec.height = spec.width = image_size;
  spec.pixel_noise = pixel_noise;
  return spec;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigFileMissing("config file not found: " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return parse_run_config(text.str(), path.string());
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
    return s;
  };
  std::string confusion;
  for (const auto& p : c.noise.confusion)
    confusion += (confusion.empty() ? "" : ",") + std::to_string(p.from) + ">" + std::to_string(p.to) + ":" +
                 format_real(p.probability);
  os << "name = " << c.name << '\n'
     << "out = " << c.out.string() << '\n'
     << "seed = " << c.seed << '\n'
     << "train_samples = " << c.train_samples << '\n'
     << "test_samples = " << c.test_samples << '\n'
     << "image_size = " << c.image_size << '\n'
     << "pixel_noise = " << format_real(c.pixel_noise) << '\n'
     << "morph_rate = " << list(c.noise.morph_rate) << '\n'
     << "max_radius = " << c.noise.max_radius << '\n'
     << "confusion = " << (confusion.empty() ? "none" : confusion) << '\n'
     << "epochs = " << c.train.epochs << '\n'
     << "warmup_epochs = " << c.train.warmup_epochs << '\n'
     << "batch_size = " << c.train.batch_size << '\n'
     << "learning_rate = " << format_real(c.train.learning_rate) << '\n'
     << "tau = " << format_real(c.train.tau) << '\n'
     << "alpha = " << format_real(c.train.weights.alpha) << '\n'
     << "beta = " << format_real(c.train.weights.beta) << '\n'
     << "rce_clamp = " << format_real(c.train.weights.rce_log_zero) << '\n'
     << "discrepancy = " << (c.train.discrepancy_enabled ? "on" : "off") << '\n'
     << "selection = " << (c.train.selection_enabled ? "on" : "off") << '\n'
     << "nbl = " << nbl_text(c.train.nbl_mode) << '\n'
     << "thresholds = " << (c.train.mapping == ThresholdMapping::convex ? "convex" : "linear") << '\n'
     << "feature_dim = " << c.train.arch.feature_dim << '\n'
     << "eval_batch = " << c.train.eval_batch << '\n';
  return os.str();
}

GeneratedData generate_run_data(const RunConfig& cfg) {
  cfg.validate();
  auto pool = generate_dataset(cfg.train_samples + cfg.test_samples, cfg.dataset_spec(),
                               stream_key(cfg.seed, {kDataStream}));
  apply_noise(pool, cfg.noise, stream_key(cfg.seed, {kNoiseStream}));
  GeneratedData out;
  out.train.assign(std::make_move_iterator(pool.begin()),
                   std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(cfg.train_samples)));
  out.test.assign(std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(cfg.train_samples)),
                  std::make_move_iterator(pool.end()));
  return out;
}

}  // namespace clcs
