#include "roarbench/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "roarbench/error.hpp"
#include "roarbench/rng.hpp"

namespace roarbench {

namespace {

// clang-format off
constexpr std::array<std::array<std::uint8_t, 25>, kGlyphCount> kGlyphs{{
    {0,0,1,0,0, 0,0,1,0,0, 1,1,1,1,1, 0,0,1,0,0, 0,0,1,0,0},  // plus
    {1,1,1,1,1, 1,0,0,0,1, 1,0,0,0,1, 1,0,0,0,1, 1,1,1,1,1},  // box
    {1,0,0,0,0, 0,1,0,0,0, 0,0,1,0,0, 0,0,0,1,0, 0,0,0,0,1},  // diag
    {0,0,0,0,1, 0,0,0,1,0, 0,0,1,0,0, 0,1,0,0,0, 1,0,0,0,0},  // antidiag
    {1,0,0,0,1, 0,1,0,1,0, 0,0,1,0,0, 0,1,0,1,0, 1,0,0,0,1},  // cross
    {1,1,1,1,1, 0,0,1,0,0, 0,0,1,0,0, 0,0,1,0,0, 0,0,1,0,0},  // tee
    {1,0,0,0,0, 1,0,0,0,0, 1,0,0,0,0, 1,0,0,0,0, 1,1,1,1,1},  // ell
    {0,0,0,0,0, 0,1,1,1,0, 0,1,0,1,0, 0,1,1,1,0, 0,0,0,0,0},  // ring
}};
// clang-format on

constexpr std::array<const char*, kGlyphCount> kGlyphNames{"plus", "box",  "diag", "antidiag",
                                                           "cross", "tee", "ell",  "ring"};

constexpr char kMagic[4] = {'R', 'L', 'A', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

float to_pixel(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

struct Canvas {
  std::vector<float> pixels;
  std::vector<std::uint8_t> signal;
};

// Background noise only; every kind starts from this.
Canvas blank_canvas(const SynthSpec& spec, Rng& rng) {
  Canvas c;
  c.pixels.assign(spec.channels * spec.height * spec.width, 0.0f);
  c.signal.assign(spec.height * spec.width, 0);
  if (spec.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (auto& p : c.pixels) p = to_pixel(noise(rng));
  }
  return c;
}

void paint(const SynthSpec& spec, Canvas& c, std::size_t y, std::size_t x, double value, Rng& rng) {
  const std::size_t plane = spec.height * spec.width;
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    const double eps = spec.noise_std > 0.0 ? noise(rng) : 0.0;
    c.pixels[ch * plane + y * spec.width + x] = to_pixel(value + eps);
  }
  c.signal[y * spec.width + x] = 1;
}

Canvas draw_sample(const SynthSpec& spec, int label, Rng& rng) {
  Canvas c = blank_canvas(spec, rng);
  switch (spec.kind) {
    case SynthKind::Shapes: {
      const std::size_t scale = glyph_scale(spec.height, spec.width), side = kGlyphSize * scale;
      std::uniform_int_distribution<std::size_t> py(0, spec.height - side);
      std::uniform_int_distribution<std::size_t> px(0, spec.width - side);
      const std::size_t oy = py(rng), ox = px(rng);
      const auto& g = kGlyphs[static_cast<std::size_t>(label)];
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          if (g[(y / scale) * kGlyphSize + x / scale]) paint(spec, c, oy + y, ox + x, 1.0, rng);
        }
      }
      break;
    }
    case SynthKind::BlockSignal: {
      const std::size_t s = signal_block_side(spec.height, spec.width);
      std::uniform_int_distribution<std::size_t> py(0, spec.height - s);
      std::uniform_int_distribution<std::size_t> px(0, spec.width - s);
      const std::size_t oy = py(rng), ox = px(rng);
      const double level = signal_level(label, spec.num_classes);
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) paint(spec, c, oy + y, ox + x, level, rng);
      }
      break;
    }
    case SynthKind::ScatterSignal: {
      const std::size_t s = signal_block_side(spec.height, spec.width);
      std::vector<std::size_t> cells(spec.height * spec.width);
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
      // Partial Fisher-Yates: the first s*s cells are a uniform random subset.
      for (std::size_t i = 0; i < s * s; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
        std::swap(cells[i], cells[pick(rng)]);
      }
      const double level = signal_level(label, spec.num_classes);
      for (std::size_t i = 0; i < s * s; ++i) {
        paint(spec, c, cells[i] / spec.width, cells[i] % spec.width, level, rng);
      }
      break;
    }
  }
  return c;
}

void fill_split(const SynthSpec& spec, std::size_t n, std::string_view split, Dataset& ds,
                std::vector<Mask>& masks) {
  Rng rng(SeedBuilder(spec.seed).add(to_string(spec.kind)).add(split).seed());
  ds.name = to_string(spec.kind) + "-" + std::string(split);
  ds.seed = spec.seed;
  ds.num_classes = spec.num_classes;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.pixels.reserve(n * ds.sample_numel());
  ds.labels.reserve(n);
  masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Balanced labels: class i mod C, so every class has n/C samples (+-1).
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    Canvas c = draw_sample(spec, label, rng);
    ds.pixels.insert(ds.pixels.end(), c.pixels.begin(), c.pixels.end());
    ds.labels.push_back(label);
    const double frac = static_cast<double>(std::count(c.signal.begin(), c.signal.end(), 1)) /
                        static_cast<double>(c.signal.size());
    masks.push_back(make_mask(spec.height, spec.width, std::move(c.signal), frac, "ground-truth"));
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

}  // namespace

std::span<const float> Dataset::image(std::size_t i) const {
  return std::span<const float>(pixels).subspan(i * sample_numel(), sample_numel());
}

std::span<float> Dataset::image(std::size_t i) {
  return std::span<float>(pixels).subspan(i * sample_numel(), sample_numel());
}

Tensor Dataset::image_tensor(std::size_t i, bool requires_grad) const {
  const auto img = image(i);
  return Tensor({1, channels, height, width}, std::vector<double>(img.begin(), img.end()), requires_grad);
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InvalidInput("empty batch");
  std::vector<double> v;
  v.reserve(indices.size() * sample_numel());
  for (auto i : indices) {
    if (i >= size()) throw InvalidInput("sample index out of range");
    const auto img = image(i);
    v.insert(v.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), channels, height, width}, std::move(v));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> y;
  y.reserve(indices.size());
  for (auto i : indices) y.push_back(labels.at(i));
  return y;
}

void Dataset::validate() const {
  if (num_classes < 1) throw InvalidInput("dataset needs at least one class");
  if (channels == 0 || height == 0 || width == 0) throw InvalidInput("dataset dimensions must be positive");
  if (pixels.size() != size() * sample_numel()) {
    throw InvalidInput("dataset pixel count does not match n * C * H * W");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InvalidInput("label " + std::to_string(y) + " out of range");
  }
  for (float p : pixels) {
    if (!(p >= 0.0f && p <= 1.0f)) throw InvalidInput("pixel value outside [0, 1]");
  }
}

bool same_samples(const Dataset& a, const Dataset& b) {
  return a.num_classes == b.num_classes && a.channels == b.channels && a.height == b.height &&
         a.width == b.width && a.labels == b.labels && a.pixels.size() == b.pixels.size() &&
         std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0;
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::Shapes: return "shapes";
    case SynthKind::BlockSignal: return "block-signal";
    case SynthKind::ScatterSignal: return "scatter-signal";
  }
  return "unknown";
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "shapes") return SynthKind::Shapes;
  if (s == "block-signal") return SynthKind::BlockSignal;
  if (s == "scatter-signal") return SynthKind::ScatterSignal;
  throw InvalidInput("unknown dataset kind '" + s + "' (expected shapes, block-signal or scatter-signal)");
}

void SynthSpec::validate() const {
  if (height < 8 || width < 8) throw InvalidInput("synthetic images must be at least 8x8");
  if (channels == 0) throw InvalidInput("synthetic images need at least one channel");
  if (num_classes < 2) throw InvalidInput("need at least two classes");
  if (kind == SynthKind::Shapes && num_classes > kGlyphCount) {
    throw InvalidInput("shapes supports at most " + std::to_string(kGlyphCount) + " classes, got " +
                       std::to_string(num_classes));
  }
  if (!(noise_std >= 0.0)) throw InvalidInput("noise_std must be >= 0");
  if (n_train == 0 || n_test == 0) throw InvalidInput("train and test splits must be non-empty");
}

std::span<const std::uint8_t> glyph_template(int g) {
  if (g < 0 || g >= kGlyphCount) throw InvalidInput("glyph index out of range");
  return kGlyphs[static_cast<std::size_t>(g)];
}

std::size_t glyph_scale(std::size_t height, std::size_t width) {
  return std::max<std::size_t>(1, std::min(height, width) / 8);
}

std::string glyph_name(int g) {
  if (g < 0 || g >= kGlyphCount) throw InvalidInput("glyph index out of range");
  return kGlyphNames[static_cast<std::size_t>(g)];
}

double signal_level(int label, int num_classes) {
  return static_cast<double>(label + 1) / static_cast<double>(num_classes + 1);
}

std::size_t signal_block_side(std::size_t height, std::size_t width) {
  return std::max<std::size_t>(2, std::min(height, width) / 4);
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  SynthData out;
  fill_split(spec, spec.n_train, "train", out.train, out.train_masks);
  fill_split(spec, spec.n_test, "test", out.test, out.test_masks);
  return out;
}

std::vector<std::uint8_t> encode_rlab(const Dataset& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + ds.size() * (ds.sample_numel() * 4 + 4));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ds.size()));
  put_u32(out, static_cast<std::uint32_t>(ds.channels));
  put_u32(out, static_cast<std::uint32_t>(ds.height));
  put_u32(out, static_cast<std::uint32_t>(ds.width));
  put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float p : ds.image(i)) put_u32(out, std::bit_cast<std::uint32_t>(p));
    put_u32(out, static_cast<std::uint32_t>(ds.labels[i]));
  }
  return out;
}

Dataset decode_rlab(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::BadMagic, 0, "bad magic at offset 0: expected \"RLAB\"");
  }
  if (bytes.size() < kHeaderBytes) {
    throw ParseError(ParseError::Kind::Truncated, bytes.size(), "truncated header");
  }
  if (get_u32(bytes, 4) != kVersion) {
    throw ParseError(ParseError::Kind::BadVersion, 4, "unsupported version " + std::to_string(get_u32(bytes, 4)));
  }
  const std::uint64_t n = get_u32(bytes, 8), c = get_u32(bytes, 12), h = get_u32(bytes, 16),
                      w = get_u32(bytes, 20), classes = get_u32(bytes, 24);
  // Per-sample record size must fit comfortably in memory and in size_t math.
  constexpr std::uint64_t kMaxSampleFloats = std::uint64_t{1} << 28;
  if (c == 0 || h == 0 || w == 0 || c * h * w > kMaxSampleFloats || classes == 0 ||
      classes > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) {
    throw ParseError(ParseError::Kind::DimensionOverflow, 12,
                     "implausible dimensions " + std::to_string(c) + "x" + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::uint64_t record = (c * h * w + 1) * 4;
  if (n > (std::numeric_limits<std::uint64_t>::max() - kHeaderBytes) / record) {
    throw ParseError(ParseError::Kind::DimensionOverflow, 8, "sample count overflows file size");
  }
  const std::uint64_t expected = kHeaderBytes + n * record;
  if (bytes.size() < expected) {
    throw ParseError(ParseError::Kind::Truncated, bytes.size(),
                     "truncated: expected " + std::to_string(expected) + " bytes, have " +
                         std::to_string(bytes.size()));
  }

  Dataset ds;
  ds.num_classes = static_cast<int>(classes);
  ds.channels = c;
  ds.height = h;
  ds.width = w;
  ds.pixels.resize(n * c * h * w);
  ds.labels.resize(n);
  std::size_t off = kHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    auto img = ds.image(i);
    for (auto& p : img) {
      p = std::bit_cast<float>(get_u32(bytes, off));
      off += 4;
    }
    const std::uint32_t label = get_u32(bytes, off);
    if (label >= classes) {
      throw ParseError(ParseError::Kind::Syntax, off, "label " + std::to_string(label) + " out of range");
    }
    ds.labels[i] = static_cast<int>(label);
    off += 4;
  }
  return ds;
}

void save(const Dataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_rlab(ds);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError(path.string(), "write failed");
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open for reading");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Dataset ds = decode_rlab(bytes);
  ds.name = path.stem().string();
  return ds;
}

void export_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.labels[i];
    for (float p : ds.image(i)) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(p));
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError(path.string(), "write failed");
}

}  // namespace roarbench
