#include "svae/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <random>

#include "svae/binary_io.hpp"
#include "svae/errors.hpp"
#include "svae/rng.hpp"

namespace svae::data {

namespace fs = std::filesystem;
using color::RgbImage;
using color::YccImage;

namespace {

constexpr std::uint32_t kTruthMagic = 0x54535653;  // "SVST"
constexpr std::uint32_t kTruthVersion = 1;

class PnmCursor {
 public:
  explicit PnmCursor(const std::vector<std::uint8_t>& b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw FormatError("malformed PNM header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1u << 24)) throw FormatError("PNM dimension too large");
    }
    return v;
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<std::uint8_t>& b_;
};

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

void write_bytes(const std::string& path, const std::string& header,
                 const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> all(header.begin(), header.end());
  all.insert(all.end(), payload.begin(), payload.end());
  io::write_file_atomic(path, all);
}

// Weights of source cells overlapping each output cell, for one axis.
struct AxisWeights {
  std::vector<std::size_t> begin;
  std::vector<std::vector<double>> weights;
};

AxisWeights area_weights(std::size_t in, std::size_t out) {
  AxisWeights a;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
    std::vector<double> w;
    for (std::size_t i = first; i < last; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      w.push_back(std::max(0.0, overlap) / scale);
    }
    a.begin.push_back(first);
    a.weights.push_back(std::move(w));
  }
  return a;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Luma mean in [0, 255] for one synthetic image.
std::vector<double> luma_mean(MeanFamily family, std::size_t n, std::mt19937_64& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> m(n * n, 0.0);
  auto add_waves = [&](int count, double fmin, double fmax, double amin, double amax) {
    for (int k = 0; k < count; ++k) {
      const double f = uniform(rng, fmin, fmax), theta = uniform(rng, 0.0, two_pi);
      const double fx = f * std::cos(theta), fy = f * std::sin(theta);
      const double amp = uniform(rng, amin, amax), phase = uniform(rng, 0.0, two_pi);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          m[y * n + x] += amp * std::cos(two_pi * (fx * x + fy * y) / static_cast<double>(n) + phase);
        }
      }
    }
  };

  const double base = uniform(rng, 100.0, 156.0);
  for (auto& v : m) v = base;
  switch (family) {
    case MeanFamily::Smooth:
      add_waves(3, 0.2, 1.5, 5.0, 15.0);
      break;
    case MeanFamily::Texture:
      add_waves(2, 0.2, 1.0, 5.0, 12.0);
      add_waves(1, 2.0, 4.0, 10.0, 20.0);
      break;
    case MeanFamily::Shapes: {
      const int shapes = 1 + static_cast<int>(rng() % 3);
      for (int s = 0; s < shapes; ++s) {
        const double cy = uniform(rng, 0.2, 0.8) * n, cx = uniform(rng, 0.2, 0.8) * n;
        const double rad = uniform(rng, 0.1, 0.3) * n;
        const double level = (rng() % 2 ? 1.0 : -1.0) * uniform(rng, 15.0, 35.0);
        const bool disk = rng() % 2;
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            const double dist = disk ? std::hypot(dy, dx) : std::max(std::abs(dy), std::abs(dx));
            // One-pixel soft edge.
            const double t = std::clamp(rad - dist + 0.5, 0.0, 1.0);
            m[y * n + x] += level * t;
          }
        }
      }
      break;
    }
  }
  for (auto& v : m) v = std::clamp(v, 64.0, 192.0);
  return m;
}

std::vector<double> chroma_mean(std::size_t n, std::mt19937_64& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double base = uniform(rng, 108.0, 148.0);
  const double f = uniform(rng, 0.2, 1.0), theta = uniform(rng, 0.0, two_pi);
  const double amp = uniform(rng, 3.0, 10.0), phase = uniform(rng, 0.0, two_pi);
  std::vector<double> m(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      m[y * n + x] = base + amp * std::cos(two_pi * f * (std::cos(theta) * x + std::sin(theta) * y) /
                                               static_cast<double>(n) + phase);
    }
  }
  return m;
}

void write_spec(io::ByteWriter& w, const SyntheticSpec& s) {
  w.u64(s.size);
  w.u8(static_cast<std::uint8_t>(s.family));
  w.u8(s.grayscale ? 1 : 0);
  w.f64(s.noise_sigma);
  w.f64(s.noise_correlation);
  w.u64(s.patch_size);
  w.f64(s.chroma_sigma);
  w.u64(s.seed);
}

SyntheticSpec read_spec(io::ByteReader& r) {
  SyntheticSpec s;
  s.size = r.u64();
  const auto fam = r.u8();
  if (fam > 2) throw FormatError("unknown mean family in truth file");
  s.family = static_cast<MeanFamily>(fam);
  s.grayscale = r.u8() != 0;
  s.noise_sigma = r.f64();
  s.noise_correlation = r.f64();
  s.patch_size = r.u64();
  s.chroma_sigma = r.f64();
  s.seed = r.u64();
  return s;
}

}  // namespace

RgbImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file");
  }
  const bool color = bytes[1] == '6';
  PnmCursor cur(bytes);
  cur.pos_ = 2;
  const auto w = cur.number(), h = cur.number(), maxval = cur.number();
  if (maxval != 255) throw FormatError("only maxval 255 is supported, got " + std::to_string(maxval));
  if (w == 0 || h == 0) throw FormatError("empty PNM image");
  if (cur.pos_ >= bytes.size() || !std::isspace(bytes[cur.pos_])) throw FormatError("malformed PNM header");
  ++cur.pos_;
  const std::size_t channels = color ? 3 : 1;
  if (bytes.size() - cur.pos_ < w * h * channels) throw FormatError("truncated PNM payload");

  RgbImage img(h, w);
  const auto n = w * h;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.data[c * n + i] = bytes[cur.pos_ + i * channels + (color ? c : 0)];
    }
  }
  return img;
}

RgbImage read_pnm(const std::string& path) { return decode_pnm(io::read_file(path)); }

void write_ppm(const std::string& path, const RgbImage& img) {
  const auto n = img.pixels();
  std::vector<std::uint8_t> payload(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) payload[3 * i + c] = to_byte(img.data[c * n + i]);
  }
  write_bytes(path, "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
              payload);
}

void write_pgm(const std::string& path, const std::vector<double>& plane, std::size_t height,
               std::size_t width) {
  if (plane.size() != height * width) throw UsageError("write_pgm: plane size mismatch");
  std::vector<std::uint8_t> payload(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) payload[i] = to_byte(plane[i]);
  write_bytes(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", payload);
}

RgbImage center_crop(const RgbImage& img) {
  const auto side = std::min(img.height, img.width);
  const auto oy = (img.height - side) / 2, ox = (img.width - side) / 2;
  RgbImage out(side, side);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) out.at(c, y, x) = img.at(c, y + oy, x + ox);
    }
  }
  return out;
}

RgbImage resize_area(const RgbImage& img, std::size_t size) {
  if (img.height == size && img.width == size) return img;
  const auto wy = area_weights(img.height, size), wx = area_weights(img.width, size);
  RgbImage out(size, size);
  std::vector<double> rows(img.height * size);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t ox = 0; ox < size; ++ox) {
        double s = 0.0;
        for (std::size_t k = 0; k < wx.weights[ox].size(); ++k) {
          s += wx.weights[ox][k] * img.at(c, y, wx.begin[ox] + k);
        }
        rows[y * size + ox] = s;
      }
    }
    for (std::size_t oy = 0; oy < size; ++oy) {
      for (std::size_t ox = 0; ox < size; ++ox) {
        double s = 0.0;
        for (std::size_t k = 0; k < wy.weights[oy].size(); ++k) {
          s += wy.weights[oy][k] * rows[(wy.begin[oy] + k) * size + ox];
        }
        out.at(c, oy, ox) = s;
      }
    }
  }
  return out;
}

Dataset load_folder(const std::string& path, std::size_t size, std::size_t limit) {
  if (size == 0) throw ConfigError("image size must be positive");
  if (!fs::is_directory(path)) throw ConfigError("data_dir '" + path + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  Dataset ds;
  ds.size = size;
  ds.grayscale = true;
  for (const auto& f : files) {
    if (limit != 0 && ds.records.size() == limit) break;
    std::vector<std::uint8_t> bytes;
    try {
      bytes = io::read_file(f.string());
      auto img = resize_area(center_crop(decode_pnm(bytes)), size);
      if (bytes[1] == '6') ds.grayscale = false;
      ds.records.push_back({f.filename().string(), std::move(img)});
    } catch (const FormatError& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  if (ds.records.empty()) throw ConfigError("no decodable images in '" + path + "'");
  return ds;
}

RgbImage flip_horizontal(const RgbImage& img) {
  RgbImage out(img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

YccImage to_ycc(const RgbImage& img, std::size_t chroma_factor) {
  auto ycc = color::rgb_to_ycbcr(img);
  return chroma_factor == 1 ? ycc : color::downsample_chroma(ycc, chroma_factor);
}

MeanFamily parse_mean_family(const std::string& name) {
  if (name == "smooth") return MeanFamily::Smooth;
  if (name == "shapes") return MeanFamily::Shapes;
  if (name == "texture") return MeanFamily::Texture;
  throw ConfigError("unknown mean family '" + name + "' (smooth, shapes, texture)");
}

std::string to_string(MeanFamily family) {
  switch (family) {
    case MeanFamily::Smooth: return "smooth";
    case MeanFamily::Shapes: return "shapes";
    case MeanFamily::Texture: return "texture";
  }
  return "smooth";
}

double SyntheticTruth::expected_log_density_y_model_units() const {
  // Scaling x by 1/255 scales Lambda by 255^2: +0.5 * n * log(255^2).
  const double n = static_cast<double>(spec.size * spec.size);
  return expected_log_density_y + n * std::log(255.0);
}

structured::PackedCholesky synthetic_factor(const SyntheticSpec& spec) {
  if (!(spec.noise_sigma > 0.0)) throw ConfigError("noise_sigma must be positive");
  if (spec.patch_size < 3) throw ConfigError("synthetic noise needs patch_size >= 3");
  auto pattern = std::make_shared<const structured::SparsityPattern>(
      structured::SparsityPattern::build(spec.size, spec.size, spec.patch_size, 1));
  std::vector<double> coeffs(pattern->nonzero_count(), 0.0);
  const auto slots = pattern->all_slots();
  const auto offsets = pattern->slot_offsets();
  const double d = 1.0 / spec.noise_sigma;
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    const auto off = offsets[slots[k]];
    if (slots[k] == 0) {
      coeffs[k] = std::log(d);
    } else if ((off.dy == 0 && off.dx == -1) || (off.dy == -1 && off.dx == 0)) {
      coeffs[k] = -spec.noise_correlation * d;
    }
  }
  return structured::PackedCholesky(std::move(pattern), std::move(coeffs));
}

SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::size_t count) {
  if (spec.size == 0) throw ConfigError("synthetic image size must be positive");
  if (count == 0) throw ConfigError("synthetic dataset needs at least one image");
  SyntheticDataset out;
  out.truth.spec = spec;
  out.truth.factor = std::make_shared<structured::PackedCholesky>(synthetic_factor(spec));
  const auto& factor = *out.truth.factor;
  const auto n = spec.size, np = n * n;
  out.truth.expected_log_density_y = 0.5 * structured::log_det_precision(factor) -
                                     0.5 * static_cast<double>(np) -
                                     0.5 * static_cast<double>(np) * std::log(2.0 * std::numbers::pi);
  out.dataset.size = n;
  out.dataset.grayscale = spec.grayscale;

  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, i));
    YccImage mean{n, n, 1, luma_mean(spec.family, n, rng), std::vector<double>(np, 128.0),
                  std::vector<double>(np, 128.0)};
    if (!spec.grayscale) {
      mean.cb = chroma_mean(n, rng);
      mean.cr = chroma_mean(n, rng);
    }
    auto y = structured::sample(factor, mean.y, rng);

    RgbImage rgb(n, n);
    if (spec.grayscale) {
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < np; ++p) rgb.data[c * np + p] = std::clamp(y[p], 0.0, 255.0);
      }
    } else {
      std::normal_distribution<double> noise(0.0, spec.chroma_sigma);
      YccImage noisy{n, n, 1, std::move(y), mean.cb, mean.cr};
      for (auto& v : noisy.cb) v += noise(rng);
      for (auto& v : noisy.cr) v += noise(rng);
      rgb = color::ycbcr_to_rgb(noisy);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "synthetic_%05zu", i);
    out.dataset.records.push_back({name, std::move(rgb)});
    out.truth.means.push_back(std::move(mean));
  }
  return out;
}

void write_folder(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& r : dataset.records) {
    const auto base = (fs::path(dir) / r.name).string();
    if (dataset.grayscale) {
      write_pgm(base + ".pgm", std::vector<double>(r.rgb.data.begin(), r.rgb.data.begin() + r.rgb.pixels()),
                r.rgb.height, r.rgb.width);
    } else {
      write_ppm(base + ".ppm", r.rgb);
    }
  }
}

void save_truth(const SyntheticTruth& truth, const std::string& path) {
  io::ByteWriter body;
  write_spec(body, truth.spec);
  const auto factor = structured::serialize(*truth.factor);
  body.u64(factor.size());
  body.raw(factor);
  body.f64(truth.expected_log_density_y);
  body.u64(truth.means.size());
  for (const auto& m : truth.means) {
    body.f64s(m.y);
    body.f64s(m.cb);
    body.f64s(m.cr);
  }
  io::ByteWriter out;
  out.u32(kTruthMagic);
  out.u32(kTruthVersion);
  out.u64(body.bytes().size());
  out.raw(body.bytes());
  out.u32(io::crc32(body.bytes()));
  io::write_file_atomic(path, out.bytes());
}

SyntheticTruth load_truth(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader in(bytes);
  if (in.u32() != kTruthMagic) throw FormatError("'" + path + "' is not a synthetic truth file");
  if (in.u32() != kTruthVersion) throw FormatError("unsupported truth file version");
  const auto size = in.u64();
  if (size > in.remaining()) throw FormatError("truncated truth file");
  const auto body_bytes = in.raw(size);
  if (in.u32() != io::crc32(body_bytes)) throw FormatError("truth file checksum mismatch");

  io::ByteReader body(body_bytes);
  SyntheticTruth t;
  t.spec = read_spec(body);
  const auto flen = body.u64();
  t.factor = std::make_shared<structured::PackedCholesky>(
      structured::deserialize_packed_cholesky(body.raw(flen)));
  t.expected_log_density_y = body.f64();
  const auto count = body.u64();
  const auto np = t.spec.size * t.spec.size;
  for (std::size_t i = 0; i < count; ++i) {
    YccImage m{t.spec.size, t.spec.size, 1, body.f64s(np), body.f64s(np), body.f64s(np)};
    t.means.push_back(std::move(m));
  }
  return t;
}

}  // namespace svae::data
