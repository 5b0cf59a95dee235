#include "bwft/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "bwft/error.hpp"
#include "bwft/rng.hpp"

namespace bwft::data {

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = image_size();
  Tensor out({indices.size(), height, width, channels});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ConfigError("sample index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per, out.raw() + i * per);
  }
  return out;
}

std::vector<std::uint16_t> LabeledDataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::uint16_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.num_classes = num_classes;
  out.class_names = class_names;
  const std::size_t per = image_size();
  out.pixels.resize(indices.size() * per);
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.labels[i] = labels.at(indices[i]);
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) ++counts.at(l);
  return counts;
}

void LabeledDataset::validate() const {
  if (pixels.size() != labels.size() * image_size()) throw ConfigError("pixel count does not match label count");
  for (auto l : labels)
    if (l >= num_classes) throw ConfigError("label " + std::to_string(l) + " out of range");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("pixel value outside [0, 1]");
}

// ---------------------------------------------------------------------------

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::None: return "none";
    case ShiftKind::Color: return "color-shift";
    case ShiftKind::Frequency: return "frequency-shift";
    case ShiftKind::SpatialScale: return "spatial-scale-shift";
  }
  return "none";
}

ShiftKind parse_shift(const std::string& text) {
  if (text == "none") return ShiftKind::None;
  if (text == "color-shift" || text == "color") return ShiftKind::Color;
  if (text == "frequency-shift" || text == "frequency") return ShiftKind::Frequency;
  if (text == "spatial-scale-shift" || text == "spatial-scale") return ShiftKind::SpatialScale;
  throw ConfigError("unknown shift '" + text + "'");
}

namespace {

using Setter = std::function<void(SyntheticTaskSpec&, const std::string&)>;

template <class T>
Setter field(T SyntheticTaskSpec::*member) {
  return [member](SyntheticTaskSpec& s, const std::string& v) {
    std::istringstream is(v);
    T value{};
    is >> value;
    if (!is || !is.eof()) throw ConfigError("bad value '" + v + "'");
    s.*member = value;
  };
}

const std::map<std::string, Setter>& spec_fields() {
  static const std::map<std::string, Setter> fields{
      {"num_classes", field(&SyntheticTaskSpec::num_classes)},
      {"samples_per_class", field(&SyntheticTaskSpec::samples_per_class)},
      {"image_size", field(&SyntheticTaskSpec::image_size)},
      {"family_seed", field(&SyntheticTaskSpec::family_seed)},
      {"seed", field(&SyntheticTaskSpec::seed)},
      {"angle_jitter", field(&SyntheticTaskSpec::angle_jitter)},
      {"frequency_min", field(&SyntheticTaskSpec::frequency_min)},
      {"frequency_max", field(&SyntheticTaskSpec::frequency_max)},
      {"frequency_jitter", field(&SyntheticTaskSpec::frequency_jitter)},
      {"blob_density", field(&SyntheticTaskSpec::blob_density)},
      {"blob_radius", field(&SyntheticTaskSpec::blob_radius)},
      {"noise", field(&SyntheticTaskSpec::noise)},
      {"contrast", field(&SyntheticTaskSpec::contrast)},
      {"color_jitter", field(&SyntheticTaskSpec::color_jitter)},
      {"palette_spread", field(&SyntheticTaskSpec::palette_spread)},
      {"shift", [](SyntheticTaskSpec& s, const std::string& v) { s.shift = parse_shift(v); }},
      {"shift_magnitude", field(&SyntheticTaskSpec::shift_magnitude)},
  };
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void validate_task_spec(const SyntheticTaskSpec& s) {
  if (s.num_classes == 0 || s.num_classes > 65535) throw ConfigError("num_classes must be in [1, 65535]");
  if (s.image_size < 4 || s.image_size > 1024) throw ConfigError("image_size must be in [4, 1024]");
  if (!(s.frequency_min > 0.0f && s.frequency_max >= s.frequency_min)) throw ConfigError("bad frequency range");
  if (s.color_jitter < 0.0f || s.color_jitter > 1.0f) throw ConfigError("color_jitter must lie in [0, 1]");
  if (s.palette_spread < 0.0f || s.palette_spread > 1.0f) throw ConfigError("palette_spread must lie in [0, 1]");
  if (s.noise < 0.0f || s.blob_density < 0.0f || s.blob_radius <= 0.0f) throw ConfigError("bad texture parameters");
  if (s.shift_magnitude < 0.0f) throw ConfigError("shift_magnitude must be non-negative");
}

void set_task_field(SyntheticTaskSpec& spec, const std::string& key, const std::string& value) {
  const auto it = spec_fields().find(key);
  if (it == spec_fields().end()) throw ConfigError("unknown task key '" + key + "'");
  it->second(spec, value);
}

SyntheticTaskSpec parse_task_spec(const std::string& text) {
  SyntheticTaskSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!spec_fields().contains(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      set_task_field(spec, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  validate_task_spec(spec);
  return spec;
}

std::string format_task_spec(const SyntheticTaskSpec& s) {
  std::ostringstream os;
  os.precision(9);
  os << "num_classes=" << s.num_classes << "\nsamples_per_class=" << s.samples_per_class
     << "\nimage_size=" << s.image_size << "\nfamily_seed=" << s.family_seed << "\nseed=" << s.seed
     << "\nangle_jitter=" << s.angle_jitter << "\nfrequency_min=" << s.frequency_min
     << "\nfrequency_max=" << s.frequency_max << "\nfrequency_jitter=" << s.frequency_jitter
     << "\nblob_density=" << s.blob_density << "\nblob_radius=" << s.blob_radius << "\nnoise=" << s.noise
     << "\ncontrast=" << s.contrast << "\ncolor_jitter=" << s.color_jitter << "\npalette_spread=" << s.palette_spread << "\nshift=" << to_string(s.shift) << "\nshift_magnitude=" << s.shift_magnitude
     << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<ClassTexture> class_textures(const SyntheticTaskSpec& spec) {
  validate_task_spec(spec);
  Rng rng(spec.family_seed, /*stream=*/0x66616d);
  const float base_angle = rng.uniform(0.0f, std::numbers::pi_v<float>);
  float family_a[3], family_b[3];
  for (int k = 0; k < 3; ++k) {
    family_a[k] = rng.uniform(0.1f, 0.9f);
    family_b[k] = rng.uniform(0.1f, 0.9f);
  }
  std::vector<ClassTexture> classes(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto& t = classes[c];
    t.angle = base_angle + std::numbers::pi_v<float> * static_cast<float>(c) / static_cast<float>(spec.num_classes);
    t.frequency = rng.uniform(spec.frequency_min, spec.frequency_max);
    for (int k = 0; k < 3; ++k) {
      t.color_a[k] = (1.0f - spec.palette_spread) * family_a[k] + spec.palette_spread * rng.uniform(0.1f, 0.9f);
      t.color_b[k] = (1.0f - spec.palette_spread) * family_b[k] + spec.palette_spread * rng.uniform(0.1f, 0.9f);
    }
    t.blob_density = spec.blob_density * rng.uniform(0.5f, 1.5f);
  }

  const float m = spec.shift_magnitude;
  switch (spec.shift) {
    case ShiftKind::None:
    case ShiftKind::Color:  // applied per pixel in render
      break;
    case ShiftKind::Frequency:
      for (auto& t : classes) t.frequency *= 1.0f + m;
      break;
    case ShiftKind::SpatialScale:
      for (auto& t : classes) t.frequency /= 1.0f + m;
      break;
  }
  return classes;
}

namespace {

std::uint32_t poisson(Rng& rng, float mean) {
  const double limit = std::exp(-static_cast<double>(mean));
  double p = 1.0;
  std::uint32_t k = 0;
  while (true) {
    p *= rng.uniform_double();
    if (p <= limit) return k;
    ++k;
  }
}

void render(const SyntheticTaskSpec& spec, const ClassTexture& t, Rng& rng, std::uint8_t* out) {
  const std::size_t n = spec.image_size;
  const float angle = t.angle + spec.angle_jitter * rng.normal();
  const float freq = std::max(1e-3f, t.frequency * (1.0f + spec.frequency_jitter * rng.normal()));
  const float phase = rng.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
  const float ca = std::cos(angle), sa = std::sin(angle);
  const float scale = spec.shift == ShiftKind::SpatialScale ? 1.0f + spec.shift_magnitude : 1.0f;
  float color_a[3], color_b[3];
  for (int k = 0; k < 3; ++k) {
    color_a[k] = (1.0f - spec.color_jitter) * t.color_a[k] + spec.color_jitter * rng.uniform(0.1f, 0.9f);
    color_b[k] = (1.0f - spec.color_jitter) * t.color_b[k] + spec.color_jitter * rng.uniform(0.1f, 0.9f);
  }

  std::vector<float> img(n * n * 3);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const float u = static_cast<float>(x) * ca + static_cast<float>(y) * sa;
      const float s = 0.5f + 0.5f * spec.contrast * std::sin(2.0f * std::numbers::pi_v<float> * freq * u + phase);
      for (int k = 0; k < 3; ++k) img[(y * n + x) * 3 + k] = color_a[k] * (1.0f - s) + color_b[k] * s;
    }

  const std::uint32_t blobs = poisson(rng, t.blob_density);
  for (std::uint32_t i = 0; i < blobs; ++i) {
    const float cx = rng.uniform(0.0f, static_cast<float>(n));
    const float cy = rng.uniform(0.0f, static_cast<float>(n));
    const float r = spec.blob_radius * scale * rng.uniform(0.7f, 1.3f);
    float color[3];
    for (float& c : color) c = rng.uniform();
    const float inv = 1.0f / (2.0f * r * r);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const float dx = static_cast<float>(x) - cx, dy = static_cast<float>(y) - cy;
        const float alpha = std::exp(-(dx * dx + dy * dy) * inv);
        if (alpha < 1e-3f) continue;
        for (int k = 0; k < 3; ++k) {
          float& p = img[(y * n + x) * 3 + k];
          p = p * (1.0f - alpha) + color[k] * alpha;
        }
      }
  }

  if (spec.shift == ShiftKind::Color) {
    // Blend every pixel toward its inverted, channel-rotated colour.
    const float m = spec.shift_magnitude;
    for (std::size_t i = 0; i < img.size(); i += 3) {
      const float r = img[i], g = img[i + 1], b = img[i + 2];
      img[i] = (1.0f - m) * r + m * (1.0f - g);
      img[i + 1] = (1.0f - m) * g + m * (1.0f - b);
      img[i + 2] = (1.0f - m) * b + m * (1.0f - r);
    }
  }

  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img[i] + spec.noise * rng.normal(), 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
}

}  // namespace

LabeledDataset generate(const SyntheticTaskSpec& spec) {
  const auto classes = class_textures(spec);
  LabeledDataset d;
  d.height = d.width = spec.image_size;
  d.channels = 3;
  d.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) d.class_names.push_back("class_" + std::to_string(c));

  const std::size_t m = spec.num_classes * spec.samples_per_class;
  const std::size_t per = d.image_size();
  std::vector<std::uint8_t> raw(m * per);
  d.labels.resize(m);
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t j = 0; j < spec.samples_per_class; ++j) {
      const std::size_t i = c * spec.samples_per_class + j;
      d.labels[i] = static_cast<std::uint16_t>(c);
      Rng rng(spec.seed, /*stream=*/i);
      render(spec, classes[c], rng, raw.data() + i * per);
    }
  d.pixels = preprocess(raw);
  return d;
}

std::vector<float> preprocess(std::span<const std::uint8_t> raw) {
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

std::vector<float> preprocess(std::span<const float> raw) {
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = raw[i];
    if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
      throw ConfigError("preprocess expects integer pixels in [0, 255]; value " + std::to_string(v) + " at index " +
                        std::to_string(i) + " (already scaled?)");
    }
    out[i] = v / 255.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

SplitIndices split(const LabeledDataset& data, const SplitSpec& spec) {
  if (std::abs(spec.test_fraction + spec.train_fraction - 1.0) > 1e-9)
    throw ConfigError("test_fraction + train_fraction must equal 1");
  if (!(spec.test_fraction > 0.0 && spec.train_fraction > 0.0))
    throw ConfigError("train and test fractions must be positive");
  if (!(spec.search_fraction > 0.0 && spec.search_fraction <= spec.train_fraction))
    throw ConfigError("search_fraction must lie in (0, train_fraction]");

  std::vector<std::vector<std::size_t>> strata;
  if (spec.stratified) {
    strata.resize(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) strata[data.labels[i]].push_back(i);
  } else {
    strata.emplace_back(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) strata[0][i] = i;
  }

  SplitIndices out;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto& idx = strata[s];
    const auto n = static_cast<double>(idx.size());
    const auto n_test = static_cast<std::size_t>(std::llround(n * spec.test_fraction));
    const std::size_t n_train = idx.size() - n_test;
    const auto n_search = static_cast<std::size_t>(std::llround(n * spec.search_fraction));
    if (n_test == 0 || n_train == 0 || n_search == 0 || n_search > n_train) {
      throw ConfigError("class " + std::to_string(s) + " has " + std::to_string(idx.size()) +
                        " samples, too few for the requested train/test/search split");
    }
    Rng rng(spec.seed, /*stream=*/s);
    shuffle(idx, rng);
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    out.search.insert(out.search.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_search));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.search.begin(), out.search.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "BWFT-DATA";

std::uint16_t narrow16(std::size_t v, const char* what) {
  if (v > 65535) throw ConfigError(std::string(what) + " does not fit the file format");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

std::vector<std::uint8_t> serialize(const LabeledDataset& data) {
  data.validate();
  if (data.size() > 0xffffffffULL) throw ConfigError("too many samples for the file format");
  io::ByteWriter w;
  w.text(kMagic);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u16(narrow16(data.height, "height"));
  w.u16(narrow16(data.width, "width"));
  w.u16(narrow16(data.channels, "channels"));
  w.u16(narrow16(data.num_classes, "num_classes"));
  w.bytes(data.labels.data(), data.labels.size() * sizeof(std::uint16_t));
  w.f32s(data.pixels);
  auto& buf = w.buffer();
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  w.u32(crc);
  return std::move(buf);
}

LabeledDataset deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  r.expect(kMagic);
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version));
  LabeledDataset d;
  const std::uint32_t m = r.u32();
  d.height = r.u16();
  d.width = r.u16();
  d.channels = r.u16();
  d.num_classes = r.u16();
  const std::size_t body = static_cast<std::size_t>(m) * (sizeof(std::uint16_t) + d.image_size() * sizeof(float));
  r.need(body + sizeof(std::uint32_t));
  d.labels.resize(m);
  r.copy(d.labels.data(), d.labels.size() * sizeof(std::uint16_t));
  d.pixels.resize(static_cast<std::size_t>(m) * d.image_size());
  r.copy(d.pixels.data(), d.pixels.size() * sizeof(float));
  const std::size_t crc_offset = r.offset();
  const std::uint32_t stored = r.u32();
  const auto actual = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(crc_offset)));
  if (stored != actual) {
    throw FormatError("dataset: checksum mismatch at offset " + std::to_string(crc_offset));
  }
  if (!r.done()) r.fail("trailing bytes");
  for (std::size_t c = 0; c < d.num_classes; ++c) d.class_names.push_back("class_" + std::to_string(c));
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return d;
}

void save(const LabeledDataset& data, const std::filesystem::path& path) {
  io::write_file_atomic(path.string(), serialize(data));
}

LabeledDataset load(const std::filesystem::path& path) { return deserialize(io::read_file(path.string())); }

}  // namespace bwft::data
