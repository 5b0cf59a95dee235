#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bwft/tensor.hpp"

namespace bwft::data {

/// Images stored contiguously as [M, H, W, C] floats in [0, 1].
struct LabeledDataset {
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * channels; }
  Shape image_shape() const { return {height, width, channels}; }

  /// [indices.size(), H, W, C] batch tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::uint16_t> batch_labels(std::span<const std::size_t> indices) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;

  /// Throws ConfigError when counts disagree or labels/pixels are out of range.
  void validate() const;
};

enum class ShiftKind { None, Color, Frequency, SpatialScale };

std::string to_string(ShiftKind kind);
ShiftKind parse_shift(const std::string& text);

/// Procedural texture task. Each class is an oriented sinusoidal grating with
/// its own angle and frequency plus randomly placed blobs; the class cue is
/// the orientation. `family_seed` picks the class parameters; `seed` drives
/// per-sample variation. A shifted target uses the source's family and seed
/// space with `shift` applied to every sample.
struct SyntheticTaskSpec {
  std::size_t num_classes = 5;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 32;
  std::uint64_t family_seed = 1;
  std::uint64_t seed = 1;

  float angle_jitter = 0.10f;      // radians
  float frequency_min = 0.08f;     // cycles per pixel
  float frequency_max = 0.12f;
  float frequency_jitter = 0.05f;  // relative
  float blob_density = 1.0f;       // mean blobs per image
  float blob_radius = 1.5f;        // pixels
  float noise = 0.04f;             // additive pixel noise std-dev
  float contrast = 1.0f;
  float color_jitter = 0.1f;       // 0: palette fixed per class, 1: palette drawn per sample
  float palette_spread = 0.0f;     // 0: every class shares the family palette

  ShiftKind shift = ShiftKind::None;
  float shift_magnitude = 0.0f;
};

/// Parses "key=value" lines ('#' starts a comment). Unknown keys throw ConfigError.
SyntheticTaskSpec parse_task_spec(const std::string& text);
/// Sets one field by its key; throws ConfigError for unknown keys or bad values.
void set_task_field(SyntheticTaskSpec& spec, const std::string& key, const std::string& value);
/// Throws ConfigError when a field is out of range.
void validate_task_spec(const SyntheticTaskSpec& spec);
std::string format_task_spec(const SyntheticTaskSpec& spec);

struct ClassTexture {
  float angle = 0.0f;
  float frequency = 0.1f;
  float color_a[3]{};
  float color_b[3]{};
  float blob_density = 0.0f;
};

/// The per-class parameters `generate` renders, after the shift is applied.
std::vector<ClassTexture> class_textures(const SyntheticTaskSpec& spec);

/// Balanced dataset: samples_per_class images per class, class-major order.
LabeledDataset generate(const SyntheticTaskSpec& spec);

/// Maps integer-valued pixels in [0, 255] to [0, 1]. Values that are not
/// integers in that range (e.g. already scaled data) throw ConfigError.
std::vector<float> preprocess(std::span<const float> raw);
std::vector<float> preprocess(std::span<const std::uint8_t> raw);

struct SplitSpec {
  double search_fraction = 0.10;  // of the whole dataset, drawn from train
  double test_fraction = 0.30;
  double train_fraction = 0.70;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> search;
};

SplitIndices split(const LabeledDataset& data, const SplitSpec& spec);

/// Layout: "BWFT-DATA", u16 version, u32 M, u16 H, W, C, u16 num_classes,
/// u16 labels[M], f32 pixels[M*H*W*C], u32 CRC-32 of everything before it.
std::vector<std::uint8_t> serialize(const LabeledDataset& data);
LabeledDataset deserialize(std::span<const std::uint8_t> bytes);
void save(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load(const std::filesystem::path& path);

inline constexpr std::uint16_t kFormatVersion = 1;

}  // namespace bwft::data
