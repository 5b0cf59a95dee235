#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bwft/model.hpp"

namespace bwft::model {

struct NamedTensor {
  std::string name;  // "<layer>/<param or buffer>"
  Tensor value;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// Immutable deep copy of every parameter and buffer of a model. Copies
/// share the same read-only storage, so a snapshot can be handed to many
/// concurrent runs.
class Snapshot {
 public:
  static Snapshot capture(const SequentialModel& model, Provenance provenance = {});

  /// Overwrites the model's parameters and buffers. Throws ConfigError when
  /// the architecture fingerprints differ.
  void restore(SequentialModel& model) const;

  const Digest& fingerprint() const { return data_->fingerprint; }
  std::span<const NamedTensor> tensors() const { return data_->tensors; }
  const Provenance& provenance() const { return data_->provenance; }
  /// SHA-256 over the serialized bytes.
  std::string content_digest() const;

  /// File layout: "BWFT-SNAP", u16 version, 32-byte fingerprint, then per
  /// tensor: u16 name length, name, u8 rank, u32 extents, f32 data. All
  /// integers and floats little-endian.
  std::vector<std::uint8_t> serialize() const;
  static Snapshot deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Snapshot load(const std::filesystem::path& path);

  static constexpr std::uint16_t kVersion = 1;

 private:
  struct Data {
    Digest fingerprint{};
    std::vector<NamedTensor> tensors;
    Provenance provenance;
  };
  explicit Snapshot(std::shared_ptr<const Data> data) : data_(std::move(data)) {}
  std::shared_ptr<const Data> data_;
};

}  // namespace bwft::model
