#include "bwft/snapshot.hpp"

#include <limits>

#include "binary_io.hpp"
#include "bwft/error.hpp"

namespace bwft::model {

namespace {

constexpr std::string_view kMagic = "BWFT-SNAP";

}  // namespace

Snapshot Snapshot::capture(const SequentialModel& model, Provenance provenance) {
  auto data = std::make_shared<Data>();
  data->fingerprint = model.fingerprint();
  data->provenance = std::move(provenance);
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& l = model.layer(i);
    for (const auto& p : l.params()) data->tensors.push_back({l.name() + "/" + p.name, p.value});
    for (const auto& b : l.buffers()) data->tensors.push_back({l.name() + "/" + b.name, b.value});
  }
  return Snapshot(std::move(data));
}

void Snapshot::restore(SequentialModel& model) const {
  if (model.fingerprint() != data_->fingerprint) {
    throw ConfigError("snapshot architecture " + hex(data_->fingerprint).substr(0, 12) +
                      " does not match model architecture " + hex(model.fingerprint()).substr(0, 12));
  }
  std::size_t k = 0;
  const auto& ts = data_->tensors;
  auto take = [&](const std::string& name, Tensor& dst) {
    if (k >= ts.size() || ts[k].name != name || ts[k].value.shape() != dst.shape()) {
      throw ConfigError("snapshot tensor layout mismatch at '" + name + "'");
    }
    dst = ts[k++].value;
  };
  for (std::size_t i = 0; i < model.size(); ++i) {
    auto& l = model.layer(i);
    for (auto& p : l.params()) take(l.name() + "/" + p.name, p.value);
    for (auto& b : l.buffers()) take(l.name() + "/" + b.name, b.value);
    l.clear_cache();
  }
  if (k != ts.size()) throw ConfigError("snapshot has " + std::to_string(ts.size() - k) + " unused tensors");
}

std::vector<std::uint8_t> Snapshot::serialize() const {
  io::ByteWriter w;
  w.text(kMagic);
  w.u16(kVersion);
  w.bytes(data_->fingerprint.data(), data_->fingerprint.size());
  for (const auto& t : data_->tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw ConfigError("tensor name too long");
    if (t.value.rank() > std::numeric_limits<std::uint8_t>::max()) throw ConfigError("tensor rank too large");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.text(t.name);
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) {
      if (e > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("tensor extent too large");
      w.u32(static_cast<std::uint32_t>(e));
    }
    w.f32s(t.value.data());
  }
  return std::move(w.buffer());
}

Snapshot Snapshot::deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "snapshot");
  r.expect(kMagic);
  const std::uint16_t version = r.u16();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  auto data = std::make_shared<Data>();
  r.copy(data->fingerprint.data(), data->fingerprint.size());
  while (!r.done()) {
    NamedTensor t;
    t.name = r.text(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    const std::size_t n = shape_product(shape);
    if (n > r.remaining() / sizeof(float)) {
      r.need(n * sizeof(float));
    }
    std::vector<float> values(n);
    r.copy(values.data(), n * sizeof(float));
    t.value = Tensor(std::move(shape), std::move(values));
    data->tensors.push_back(std::move(t));
  }
  return Snapshot(std::move(data));
}

std::string Snapshot::content_digest() const { return hex(sha256(serialize())); }

void Snapshot::save(const std::filesystem::path& path) const { io::write_file_atomic(path.string(), serialize()); }

Snapshot Snapshot::load(const std::filesystem::path& path) { return deserialize(io::read_file(path.string())); }

}  // namespace bwft::model
