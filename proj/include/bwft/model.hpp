#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bwft/layer.hpp"
#include "bwft/rng.hpp"
#include "bwft/tensor.hpp"

namespace bwft::model {

using Digest = std::array<std::uint8_t, 32>;

std::string hex(const Digest& digest);
Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);

/// Ordered layer stack. Layers at or after head_boundary() form the
/// classifier head; everything before it is the backbone.
class SequentialModel {
 public:
  explicit SequentialModel(Shape input_shape);
  SequentialModel(const SequentialModel& other);
  SequentialModel& operator=(const SequentialModel& other);
  SequentialModel(SequentialModel&&) noexcept = default;
  SequentialModel& operator=(SequentialModel&&) noexcept = default;
  ~SequentialModel();

  /// Appends a layer fed by the current output shape. Names must be unique.
  void add(nn::LayerSpec spec);

  std::size_t size() const { return layers_.size(); }
  nn::Layer& layer(std::size_t i) { return *layers_.at(i); }
  const nn::Layer& layer(std::size_t i) const { return *layers_.at(i); }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const;

  std::optional<std::size_t> head_boundary() const { return head_boundary_; }
  void set_head_boundary(std::size_t index);
  bool has_head() const { return head_boundary_.has_value(); }
  /// Number of layers before the head (all layers when no head is attached).
  std::size_t backbone_size() const { return head_boundary_.value_or(layers_.size()); }
  /// Removes the head layers, leaving the backbone.
  void strip_head();

  /// Weighted and not frozen.
  bool trainable(std::size_t i) const;
  std::vector<bool> trainable_mask() const;

  std::vector<std::size_t> weighted_backbone() const;
  std::vector<std::size_t> weighted_head() const;
  std::vector<nn::LayerKind> backbone_kinds() const;

  void initialize(Rng& rng);

  /// Runs layers [first, last). `input` must match the input of layer `first`.
  Tensor forward(const Tensor& input, nn::Mode mode, Rng& rng, std::size_t first = 0,
                 std::size_t last = static_cast<std::size_t>(-1));
  /// Eval-mode forward of the whole model.
  Tensor predict(const Tensor& input);
  /// Back-propagates `grad` (the gradient at the output of layer last-1) down
  /// to layer `first`; no input gradient is formed for layer `first`.
  void backward(const Tensor& grad, std::size_t first, std::size_t last);

  /// Canonical text of input shape, layer names, kinds and head boundary.
  std::string architecture() const;
  Digest fingerprint() const;

 private:
  Shape input_shape_;
  std::vector<std::unique_ptr<nn::Layer>> layers_;
  std::optional<std::size_t> head_boundary_;
};

// ---------------------------------------------------------------------------
// Zoo

struct ZooEntry {
  std::string name;
  std::vector<nn::LayerSpec> backbone;
};

/// mini-vgg, mini-vgg-bn, mini-cnn-wide, mini-cnn-deep, mini-cnn-pool.
const std::vector<std::string>& zoo_names();
/// Throws ConfigError for an unknown name.
ZooEntry zoo_entry(std::string_view name);

inline const Shape kDefaultInputShape{32, 32, 3};

/// Backbone with He-uniform weights drawn from `seed`; no head attached.
SequentialModel build_backbone(const ZooEntry& entry, const Shape& input_shape, std::uint64_t seed);

/// Appends Flatten, Dense(128), Dropout(0.5), Dense(64), relu,
/// Dense(num_classes), softmax and marks the Flatten as the head boundary.
/// Head weights are drawn from `rng`.
void attach_classifier(SequentialModel& model, std::size_t num_classes, Rng& rng);

/// Unfreezes exactly `unit` plus every weighted head layer. `unit` must name
/// weighted backbone layers.
void set_trainable(SequentialModel& model, std::span<const std::size_t> unit);

struct LayerParamCount {
  std::string name;
  std::size_t count = 0;
};

std::vector<LayerParamCount> count_params(const SequentialModel& model);
std::size_t total_params(const SequentialModel& model);

}  // namespace bwft::model
