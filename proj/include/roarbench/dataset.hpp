#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "roarbench/mask.hpp"
#include "roarbench/tensor.hpp"

namespace roarbench {

// Labelled image set held as contiguous float32 pixels.
struct Dataset {
  std::string name;
  std::uint64_t seed = 0;
  int num_classes = 0;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // size() * channels * height * width
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const;
  std::span<float> image(std::size_t i);

  // (1, C, H, W) tensor of one sample.
  Tensor image_tensor(std::size_t i, bool requires_grad = false) const;
  // (n, C, H, W) tensor of the given samples, in order.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  // Throws InvalidInput if any documented invariant is broken.
  void validate() const;
};

// Content equality, bit for bit; name and seed are metadata and ignored.
bool same_samples(const Dataset& a, const Dataset& b);

enum class SynthKind { Shapes, BlockSignal, ScatterSignal };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(const std::string& s);

struct SynthSpec {
  SynthKind kind = SynthKind::Shapes;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  int num_classes = 4;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  double noise_std = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  Dataset train;
  Dataset test;
  // Pixels that carry the class signal, one mask per sample.
  std::vector<Mask> train_masks;
  std::vector<Mask> test_masks;
};

inline constexpr int kGlyphCount = 8;
inline constexpr std::size_t kGlyphSize = 5;

// 5 x 5 template for glyph g (row-major, 1 = stroke).
std::span<const std::uint8_t> glyph_template(int g);
// Each template cell is drawn as a scale x scale block: max(1, min(H, W) / 8).
std::size_t glyph_scale(std::size_t height, std::size_t width);
std::string glyph_name(int g);

// Class-dependent intensity used by block- and scatter-signal images.
double signal_level(int label, int num_classes);
std::size_t signal_block_side(std::size_t height, std::size_t width);

SynthData generate(const SynthSpec& spec);

// RLAB binary format, little endian:
//   "RLAB" u32 version=1, n, channels, height, width, num_classes
//   then per sample channels*height*width float32 pixels and a u32 label.
void save(const Dataset& ds, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_rlab(const Dataset& ds);
Dataset decode_rlab(std::span<const std::uint8_t> bytes);

// One row per sample: label, then pixels. For eyeballing in a spreadsheet.
void export_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace roarbench
