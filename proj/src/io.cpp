#include "clcs/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace clcs {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

// Netpbm header: magic, width, height, maxval, one whitespace byte.
void read_pnm_header(std::istream& is, const char* magic, const fs::path& path, std::size_t& height,
                     std::size_t& width) {
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (is.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  if (token() != magic) throw std::runtime_error(path.string() + ": expected " + magic + " image");
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    if (std::stoul(token()) != 255) throw std::runtime_error("maxval");
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed header");
  }
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("tensor blob truncated");
  return v;
}

std::string sample_stem(std::size_t id) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << id;
  return os.str();
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_real failed");
  return std::string(buf, end);
}

void write_text_file(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

void write_ppm(const fs::path& path, const std::vector<float>& image, std::size_t height,
               std::size_t width) {
  const std::size_t plane = height * width;
  if (image.size() != 3 * plane) throw std::invalid_argument("write_ppm: image size mismatch");
  std::vector<unsigned char> bytes(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      bytes[3 * i + c] = static_cast<unsigned char>(
          std::lround(std::clamp(image[c * plane + i], 0.0f, 1.0f) * 255.0f));
  auto os = open_out(path);
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<float> read_ppm(const fs::path& path, std::size_t& height, std::size_t& width) {
  auto is = open_in(path);
  read_pnm_header(is, "P6", path, height, width);
  const std::size_t plane = height * width;
  std::vector<unsigned char> bytes(3 * plane);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  std::vector<float> image(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      image[c * plane + i] = static_cast<float>(bytes[3 * i + c] / 255.0);
  return image;
}

void write_pgm(const fs::path& path, const std::vector<Label>& label, std::size_t height,
               std::size_t width) {
  if (label.size() != height * width) throw std::invalid_argument("write_pgm: label size mismatch");
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(label.data()), static_cast<std::streamsize>(label.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Label> read_pgm(const fs::path& path, std::size_t& height, std::size_t& width) {
  auto is = open_in(path);
  read_pnm_header(is, "P5", path, height, width);
  std::vector<Label> label(height * width);
  if (!is.read(reinterpret_cast<char*>(label.data()), static_cast<std::streamsize>(label.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  return label;
}

template <typename T>
void write_tensor_blob(std::ostream& os, const Tensor<T>& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
  for (T v : t.values) {
    const double d = static_cast<double>(v);
    os.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
}

Tensor<double> read_tensor_blob(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  if (rank > 8) throw std::runtime_error("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = read_u32(is);
  std::vector<double> values(shape_numel(shape));
  if (!is.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double))))
    throw std::runtime_error("tensor blob truncated");
  return Tensor<double>(shape, std::move(values));
}

template <typename T>
void save_checkpoint(const fs::path& stem, const TwoBranchModel<T>& model) {
  fs::path bin = stem, manifest = stem;
  bin += ".bin";
  manifest += ".manifest";
  auto os = open_out(bin);
  std::ostringstream text;
  text << "# name offset shape\n";
  for (const Parameter<T>* p : model.parameters()) {
    text << p->name << ' ' << static_cast<std::uint64_t>(os.tellp()) << ' ' << shape_string(p->value.shape)
         << '\n';
    write_tensor_blob(os, p->value);
  }
  if (!os) throw std::runtime_error("failed writing " + bin.string());
  write_text_file(manifest, text.str());
}

template <typename T>
void load_checkpoint(const fs::path& stem, TwoBranchModel<T>& model) {
  fs::path bin = stem, manifest = stem;
  bin += ".bin";
  manifest += ".manifest";
  auto mf = open_in(manifest);
  std::map<std::string, std::uint64_t> offsets;
  for (std::string line; std::getline(mf, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    std::uint64_t offset = 0;
    if (!(ls >> name >> offset)) throw std::runtime_error(manifest.string() + ": bad line: " + line);
    offsets[name] = offset;
  }
  auto is = open_in(bin);
  for (Parameter<T>* p : model.parameters()) {
    auto it = offsets.find(p->name);
    if (it == offsets.end()) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    is.seekg(static_cast<std::streamoff>(it->second));
    const Tensor<double> t = read_tensor_blob(is);
    if (t.shape != p->value.shape) {
      throw std::runtime_error("checkpoint parameter " + p->name + " has shape " + shape_string(t.shape) +
                               ", model expects " + shape_string(p->value.shape));
    }
    std::transform(t.values.begin(), t.values.end(), p->value.values.begin(),
                   [](double v) { return static_cast<T>(v); });
  }
}

void write_dataset(const fs::path& dir, const DatasetFiles& data) {
  std::ostringstream m;
  m << "format clcs-dataset 1\n";
  m << "seed " << data.seed << '\n';
  m << "height " << data.spec.height << '\n';
  m << "width " << data.spec.width << '\n';
  m << "classes background";
  for (const auto& c : data.spec.foreground) m << ' ' << c.name;
  m << '\n';
  m << "morph_rate";
  for (double r : data.noise.morph_rate) m << ' ' << format_real(r);
  m << '\n';
  m << "max_radius " << data.noise.max_radius << '\n';
  for (const auto& p : data.noise.confusion)
    m << "confusion " << int(p.from) << ' ' << int(p.to) << ' ' << format_real(p.probability) << '\n';
  for (const auto& [split, samples] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    for (const Sample& s : *samples) {
      const std::string stem = sample_stem(s.id);
      const fs::path base = dir / split;
      write_ppm(base / (stem + ".ppm"), s.image, s.height, s.width);
      write_pgm(base / (stem + "_noisy.pgm"), s.noisy_label, s.height, s.width);
      write_pgm(base / (stem + "_clean.pgm"), s.clean_label, s.height, s.width);
      m << "sample " << split << ' ' << s.id << '\n';
    }
  }
  write_text_file(dir / "manifest.txt", m.str());
}

DatasetFiles read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  if (!fs::exists(manifest)) throw std::runtime_error("no dataset manifest at " + manifest.string());
  auto is = open_in(manifest);
  DatasetFiles data;
  data.spec = default_dataset_spec();
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string name;
      int version = 0;
      ls >> name >> version;
      if (name != "clcs-dataset" || version != 1) throw std::runtime_error(manifest.string() + ": unknown format");
    } else if (key == "seed") {
      ls >> data.seed;
    } else if (key == "height") {
      ls >> data.spec.height;
    } else if (key == "width") {
      ls >> data.spec.width;
    } else if (key == "classes") {
      std::vector<std::string> names;
      for (std::string n; ls >> n;) names.push_back(n);
      if (names.size() < 2) throw std::runtime_error(manifest.string() + ": need at least two classes");
      data.spec.foreground.resize(names.size() - 1);
      for (std::size_t c = 1; c < names.size(); ++c) data.spec.foreground[c - 1].name = names[c];
    } else if (key == "morph_rate") {
      for (double r; ls >> r;) data.noise.morph_rate.push_back(r);
    } else if (key == "max_radius") {
      ls >> data.noise.max_radius;
    } else if (key == "confusion") {
      int from = 0, to = 0;
      double p = 0;
      ls >> from >> to >> p;
      data.noise.confusion.push_back({static_cast<Label>(from), static_cast<Label>(to), p});
    } else if (key == "sample") {
      std::string split;
      std::size_t id = 0;
      ls >> split >> id;
      if (split != "train" && split != "test") throw std::runtime_error(manifest.string() + ": bad split " + split);
      const fs::path base = dir / split;
      const std::string stem = sample_stem(id);
      Sample s;
      s.id = id;
      std::size_t h = 0, w = 0;
      s.image = read_ppm(base / (stem + ".ppm"), s.height, s.width);
      s.noisy_label = read_pgm(base / (stem + "_noisy.pgm"), h, w);
      if (h != s.height || w != s.width) throw std::runtime_error("label/image size mismatch for " + stem);
      s.clean_label = read_pgm(base / (stem + "_clean.pgm"), h, w);
      if (h != s.height || w != s.width) throw std::runtime_error("label/image size mismatch for " + stem);
      (split == "train" ? data.train : data.test).push_back(std::move(s));
    } else {
      throw std::runtime_error(manifest.string() + ": unknown key " + key);
    }
    if (ls.fail() && !ls.eof()) throw std::runtime_error(manifest.string() + ": bad line: " + line);
  }
  return data;
}

template void write_tensor_blob<float>(std::ostream&, const Tensor<float>&);
template void write_tensor_blob<double>(std::ostream&, const Tensor<double>&);
template void save_checkpoint<float>(const fs::path&, const TwoBranchModel<float>&);
template void save_checkpoint<double>(const fs::path&, const TwoBranchModel<double>&);
template void load_checkpoint<float>(const fs::path&, TwoBranchModel<float>&);
template void load_checkpoint<double>(const fs::path&, TwoBranchModel<double>&);

}  // namespace clcs
