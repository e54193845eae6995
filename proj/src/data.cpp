// Copyright 2026 The ensdiv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ensdiv/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ensdiv/csv.hpp"
#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "ensdiv/rng.hpp"
#include "ensdiv/tensor_io.hpp"

namespace ensdiv {
namespace {

using Color = std::array<double, 3>;

constexpr std::size_t kShapes = 4;
constexpr std::array<Color, kMaxShapeClasses / kShapes> kPalette = {{
    {0.90, 0.15, 0.15},  // red
    {0.15, 0.30, 0.90},  // blue
    {0.15, 0.80, 0.20},  // green
    {0.95, 0.85, 0.10},  // yellow
    {0.80, 0.20, 0.80},  // magenta
    {0.10, 0.85, 0.85},  // cyan
}};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool inside_glyph(std::size_t shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::fabs(dx) <= 0.8 * r && std::fabs(dy) <= 0.8 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= 0.8 * r && std::fabs(dx) <= 0.5 * (dy + r);
    default:  // plus
      return (std::fabs(dx) <= 0.3 * r && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= 0.3 * r && std::fabs(dx) <= r);
  }
}

void render(Tensor& images, std::size_t index, std::size_t label, const ShapesOptions& o,
            Rng& rng) {
  const std::size_t c = o.channels, h = o.size, w = o.size;
  const double size = static_cast<double>(o.size);
  const double base = o.shifted ? uniform(rng, 0.25, 0.65) : uniform(rng, 0.35, 0.55);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double slope = uniform(rng, 0.0, 0.1);
  const double noise = o.shifted ? 0.08 : 0.05;
  const double jitter = (o.shifted ? 0.2 : 0.15) * size;
  const double r = (o.shifted ? uniform(rng, 0.18, 0.36) : uniform(rng, 0.22, 0.32)) * size;
  const double cx = 0.5 * size + uniform(rng, -jitter, jitter);
  const double cy = 0.5 * size + uniform(rng, -jitter, jitter);
  Color color = kPalette[label / kShapes];
  for (double& v : color) v = clamp01(v + uniform(rng, -0.05, 0.05));
  const std::size_t shape = label % kShapes;
  const double luminance = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
  const auto out = images.data().subspan(index * c * h * w, c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const bool on = inside_glyph(shape, px - cx, py - cy, r);
      const double ramp = slope * ((px / size - 0.5) * std::cos(angle) +
                                   (py / size - 0.5) * std::sin(angle));
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double target = c == 1 ? luminance : color[ch];
        const double v = on ? target : base + ramp;
        out[(ch * h + y) * w + x] = clamp01(v + uniform(rng, -noise, noise));
      }
    }
  }
}

std::uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) fail(ErrorCode::kFormat, "truncated IDX file while reading " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

// Corruption helpers. Each image i gets its own stream derived from the
// corruption seed; independent sub-streams per drawn element keep the
// geometry identical across strengths.

Rng element_rng(std::uint64_t seed, std::size_t image, std::size_t element) {
  return make_rng(derive_seed(seed, image), element);
}

struct View {
  std::span<double> data;
  std::size_t c, h, w;
  double& at(std::size_t ch, std::size_t y, std::size_t x) { return data[(ch * h + y) * w + x]; }
};

void apply_lines(View img, double s, std::uint64_t seed, std::size_t index) {
  const auto count = static_cast<std::size_t>(std::ceil(2.5 * s));
  const double alpha = std::min(0.9, 0.35 * s);
  const double half_width = 0.5 + 0.25 * s;
  const double hs = static_cast<double>(img.h), ws = static_cast<double>(img.w);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng = element_rng(seed, index, k);
    const double x0 = uniform(rng, 0, ws), y0 = uniform(rng, 0, hs);
    const double angle = uniform(rng, 0, std::numbers::pi);
    const double length = uniform(rng, 0.5, 1.0) * std::max(hs, ws);
    const double tone = uniform(rng, 0, 1) < 0.5 ? uniform(rng, 0.0, 0.15) : uniform(rng, 0.85, 1.0);
    const double ux = std::cos(angle), uy = std::sin(angle);
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        const double px = static_cast<double>(x) + 0.5 - x0, py = static_cast<double>(y) + 0.5 - y0;
        const double t = std::clamp(px * ux + py * uy, -0.5 * length, 0.5 * length);
        const double dx = px - t * ux, dy = py - t * uy;
        if (dx * dx + dy * dy > half_width * half_width) continue;
        for (std::size_t ch = 0; ch < img.c; ++ch) {
          double& v = img.at(ch, y, x);
          v = (1.0 - alpha) * v + alpha * tone;
        }
      }
    }
  }
}

void apply_checkerboard(View img, double s, std::uint64_t seed, std::size_t index) {
  // Alternate cells are scaled by (1 - contrast) and (1 + contrast).
  const double contrast = std::min(0.9, 0.15 * s);
  const std::size_t cell = std::max<std::size_t>(2, img.w / 8);
  Rng rng = element_rng(seed, index, 0);
  const auto ox = std::uniform_int_distribution<std::size_t>(0, 2 * cell - 1)(rng);
  const auto oy = std::uniform_int_distribution<std::size_t>(0, 2 * cell - 1)(rng);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      const bool dark = ((x + ox) / cell + (y + oy) / cell) % 2 == 0;
      const double gain = dark ? 1.0 - contrast : 1.0 + contrast;
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        double& v = img.at(ch, y, x);
        v = clamp01(v * gain);
      }
    }
  }
}

/// Diamond-square fractal on a (2^k + 1)^2 grid, rescaled to zero mean and
/// unit maximum magnitude.
std::vector<double> plasma_field(std::size_t min_size, Rng& rng) {
  std::size_t n = 2;
  while (n + 1 < min_size) n *= 2;
  const std::size_t side = n + 1;
  std::vector<double> f(side * side, 0.0);
  auto at = [&](std::size_t y, std::size_t x) -> double& { return f[y * side + x]; };
  for (std::size_t y : {std::size_t{0}, n}) {
    for (std::size_t x : {std::size_t{0}, n}) at(y, x) = uniform(rng, -1, 1);
  }
  double scale = 1.0;
  for (std::size_t step = n; step > 1; step /= 2) {
    const std::size_t half = step / 2;
    for (std::size_t y = half; y < side; y += step) {
      for (std::size_t x = half; x < side; x += step) {
        at(y, x) = 0.25 * (at(y - half, x - half) + at(y - half, x + half) +
                           at(y + half, x - half) + at(y + half, x + half)) +
                   scale * uniform(rng, -1, 1);
      }
    }
    for (std::size_t y = 0; y < side; y += half) {
      for (std::size_t x = (y / half) % 2 == 0 ? half : 0; x < side; x += step) {
        double acc = 0.0;
        int count = 0;
        if (y >= half) acc += at(y - half, x), ++count;
        if (y + half < side) acc += at(y + half, x), ++count;
        if (x >= half) acc += at(y, x - half), ++count;
        if (x + half < side) acc += at(y, x + half), ++count;
        at(y, x) = acc / count + scale * uniform(rng, -1, 1);
      }
    }
    scale *= 0.6;
  }
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double peak = 0.0;
  for (double& v : f) peak = std::max(peak, std::fabs(v -= mean));
  if (peak > 0.0) {
    for (double& v : f) v /= peak;
  }
  return f;
}

void apply_plasma(View img, double s, std::uint64_t seed, std::size_t index) {
  const double amplitude = 0.09 * s;
  Rng rng = element_rng(seed, index, 0);
  const std::vector<double> field = plasma_field(std::max(img.h, img.w), rng);
  const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(field.size())));
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        double& v = img.at(ch, y, x);
        v = clamp01(v + amplitude * field[y * side + x]);
      }
    }
  }
}

double bilinear(const std::vector<double>& src, std::size_t ch, std::size_t h, std::size_t w,
                double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto p = [&](std::size_t yy, std::size_t xx) { return src[(ch * h + yy) * w + xx]; };
  return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) +
         fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
}

void apply_waterdrop(View img, double s, std::uint64_t seed, std::size_t index) {
  const auto drops = 2 + static_cast<std::size_t>(std::floor(s / 2.0));
  const double magnify = std::min(0.85, 0.1 * s);
  const double hs = static_cast<double>(img.h), ws = static_cast<double>(img.w);
  std::vector<double> src(img.data.begin(), img.data.end());
  for (std::size_t k = 0; k < drops; ++k) {
    Rng rng = element_rng(seed, index, k);
    const double cx = uniform(rng, 0, ws), cy = uniform(rng, 0, hs);
    const double radius = uniform(rng, 0.15, 0.3) * std::max(hs, ws);
    src.assign(img.data.begin(), img.data.end());
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double r2 = (dx * dx + dy * dy) / (radius * radius);
        if (r2 >= 1.0) continue;
        // Lens: pull samples toward the center, strongest in the middle.
        const double pull = 1.0 - magnify * (1.0 - r2);
        for (std::size_t ch = 0; ch < img.c; ++ch) {
          img.at(ch, y, x) = bilinear(src, ch, img.h, img.w, cy + dy * pull, cx + dx * pull);
        }
      }
    }
  }
}

}  // namespace

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) {
    fail(ErrorCode::kInvalidArgument, "bad dataset range [" + std::to_string(begin) + ", " +
                                          std::to_string(end) + ") of " + std::to_string(size()));
  }
  Dataset out = *this;
  out.images = kernels::slice(images, 0, begin, end);
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

Dataset gen_shapes(const ShapesOptions& o) {
  if (o.classes < 2 || o.classes > kMaxShapeClasses) {
    fail(ErrorCode::kConfig, "shapes data supports 2.." + std::to_string(kMaxShapeClasses) +
                                 " classes, got " + std::to_string(o.classes));
  }
  if (o.channels != 1 && o.channels != 3) fail(ErrorCode::kConfig, "channels must be 1 or 3");
  if (o.size < 8) fail(ErrorCode::kConfig, "images must be at least 8x8 to hold a glyph");
  if (o.n == 0) fail(ErrorCode::kConfig, "dataset size must be >= 1");
  Dataset data;
  data.classes = o.classes;
  data.split = o.split;
  data.seed = o.seed;
  data.labels.resize(o.n);
  for (std::size_t i = 0; i < o.n; ++i) data.labels[i] = i % o.classes;
  Rng order = make_rng(o.seed, 0xC1A55);
  std::shuffle(data.labels.begin(), data.labels.end(), order);
  data.images = Tensor({o.n, o.channels, o.size, o.size});
  for (std::size_t i = 0; i < o.n; ++i) {
    Rng rng = make_rng(o.seed, i);
    render(data.images, i, data.labels[i], o, rng);
  }
  return data;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes) {
  std::istringstream is(io::read_file(images), std::ios::binary);
  const std::uint32_t magic = read_be32(is, "image magic");
  if (magic != 0x00000803 && magic != 0x00000804) {
    fail(ErrorCode::kFormat, images.string() + ": bad IDX image magic");
  }
  const std::size_t dims = magic & 0xFF;
  std::vector<std::size_t> shape;
  for (std::size_t d = 0; d < dims; ++d) {
    const std::uint32_t v = read_be32(is, "image dimensions");
    if (v == 0) fail(ErrorCode::kFormat, images.string() + ": zero-sized IDX dimension");
    shape.push_back(v);
  }
  if (dims == 3) shape.insert(shape.begin() + 1, 1);
  std::istringstream ls(io::read_file(labels), std::ios::binary);
  if (read_be32(ls, "label magic") != 0x00000801) {
    fail(ErrorCode::kFormat, labels.string() + ": bad IDX label magic");
  }
  const std::size_t n_labels = read_be32(ls, "label count");
  if (n_labels != shape[0]) {
    fail(ErrorCode::kFormat, "IDX count mismatch: " + std::to_string(shape[0]) + " images vs " +
                                 std::to_string(n_labels) + " labels");
  }
  Dataset data;
  data.images = Tensor(shape);
  const std::string pixels = io::read_bytes(is, data.images.numel(), "image pixels");
  io::expect_eof(is, "IDX images");
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    data.images[i] = static_cast<double>(static_cast<unsigned char>(pixels[i])) / 255.0;
  }
  const std::string bytes = io::read_bytes(ls, n_labels, "labels");
  io::expect_eof(ls, "IDX labels");
  std::size_t max_label = 0;
  for (char b : bytes) {
    data.labels.push_back(static_cast<unsigned char>(b));
    max_label = std::max(max_label, data.labels.back());
  }
  data.classes = classes == 0 ? max_label + 1 : classes;
  if (max_label >= data.classes) {
    fail(ErrorCode::kFormat, "IDX label " + std::to_string(max_label) + " out of range for " +
                                 std::to_string(data.classes) + " classes");
  }
  data.split = images.stem().string();
  return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  const Shape& s = data.images.shape();
  std::string img;
  const bool gray = s[1] == 1;
  write_be32(img, gray ? 0x00000803 : 0x00000804);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  if (!gray) write_be32(img, static_cast<std::uint32_t>(s[1]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : data.images.values()) {
    img.push_back(static_cast<char>(std::lround(clamp01(v) * 255.0)));
  }
  std::string lab;
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) {
    if (y > 255) fail(ErrorCode::kFormat, "IDX labels are single bytes");
    lab.push_back(static_cast<char>(y));
  }
  io::write_file(images, img);
  io::write_file(labels, lab);
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  Tensor labels({data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = static_cast<double>(data.labels[i]);
  const std::vector<NamedTensor> tensors = {
      {"images", data.images},
      {"labels", labels},
      {"classes", Tensor::scalar(static_cast<double>(data.classes))}};
  io::save_tensors(path, tensors);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto t = io::load_tensors(path);
  if (t.size() != 3 || t[0].name != "images" || t[1].name != "labels" || t[2].name != "classes" ||
      t[0].tensor.rank() != 4 || t[1].tensor.rank() != 1 ||
      t[1].tensor.dim(0) != t[0].tensor.dim(0)) {
    fail(ErrorCode::kFormat, path.string() + " is not a dataset dump");
  }
  Dataset data;
  data.images = t[0].tensor;
  data.classes = static_cast<std::size_t>(t[2].tensor.item());
  for (double v : t[1].tensor.values()) {
    if (v < 0 || v >= static_cast<double>(data.classes)) {
      fail(ErrorCode::kFormat, path.string() + ": label out of range");
    }
    data.labels.push_back(static_cast<std::size_t>(v));
  }
  data.split = path.stem().string();
  return data;
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kLines: return "lines";
    case CorruptionKind::kCheckerboard: return "checkerboard";
    case CorruptionKind::kPlasma: return "plasma";
    case CorruptionKind::kWaterdrop: return "waterdrop";
  }
  return "unknown";
}

CorruptionKind corruption_from_string(const std::string& s) {
  for (CorruptionKind k : {CorruptionKind::kLines, CorruptionKind::kCheckerboard,
                           CorruptionKind::kPlasma, CorruptionKind::kWaterdrop}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown corruption '" + s + "'");
}

std::string CorruptionSpec::str() const {
  return "kind=" + to_string(kind) + ",strength=" + csv::format_number(strength) +
         ",seed=" + std::to_string(seed);
}

std::string CorruptionSpec::label() const {
  return to_string(kind) + "-" + csv::format_number(strength);
}

CorruptionSpec parse_corruption(const std::string& text) {
  CorruptionSpec spec;
  bool has_kind = false, has_strength = false;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidArgument, "corruption field '" + item + "' is not key=value");
    }
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "kind") {
        spec.kind = corruption_from_string(value);
        has_kind = true;
      } else if (key == "strength") {
        spec.strength = csv::parse_double(value);
        has_strength = true;
      } else if (key == "seed") {
        spec.seed = csv::parse_index(value);
      } else {
        fail(ErrorCode::kInvalidArgument, "unknown corruption key '" + key + "'");
      }
    } catch (const Error& e) {
      fail(ErrorCode::kInvalidArgument, "bad corruption spec '" + text + "': " + e.what());
    }
  }
  if (!has_kind || !has_strength) {
    fail(ErrorCode::kInvalidArgument, "corruption spec needs kind= and strength=: '" + text + "'");
  }
  if (!(spec.strength >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "corruption strength must be >= 0");
  }
  return spec;
}

std::vector<CorruptionSpec> reference_corruptions(std::uint64_t seed) {
  return {{CorruptionKind::kPlasma, 4.0, seed},
          {CorruptionKind::kCheckerboard, 4.0, seed},
          {CorruptionKind::kWaterdrop, 7.0, seed},
          {CorruptionKind::kLines, 1.6, seed}};
}

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec) {
  if (!(spec.strength >= 0.0) || !std::isfinite(spec.strength)) {
    fail(ErrorCode::kInvalidArgument, "corruption strength must be a finite value >= 0");
  }
  Dataset out = data;
  out.split = data.split + "+" + spec.label();
  if (spec.strength == 0.0) return out;
  const Shape& s = data.images.shape();
  const std::size_t per_image = s[1] * s[2] * s[3];
  for (std::size_t i = 0; i < s[0]; ++i) {
    View img{out.images.data().subspan(i * per_image, per_image), s[1], s[2], s[3]};
    switch (spec.kind) {
      case CorruptionKind::kLines: apply_lines(img, spec.strength, spec.seed, i); break;
      case CorruptionKind::kCheckerboard: apply_checkerboard(img, spec.strength, spec.seed, i); break;
      case CorruptionKind::kPlasma: apply_plasma(img, spec.strength, spec.seed, i); break;
      case CorruptionKind::kWaterdrop: apply_waterdrop(img, spec.strength, spec.seed, i); break;
    }
  }
  return out;
}

}  // namespace ensdiv
