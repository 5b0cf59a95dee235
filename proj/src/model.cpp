#include "bwft/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "bwft/error.hpp"

namespace bwft::model {

std::string hex(const Digest& digest) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : digest) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw Error("SHA-256 failed");
  }
  return out;
}

Digest sha256(std::string_view text) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

SequentialModel::SequentialModel(Shape input_shape) : input_shape_(std::move(input_shape)) {
  if (input_shape_.empty() || shape_product(input_shape_) == 0) {
    throw ConfigError("model input shape must be non-empty, got " + shape_string(input_shape_));
  }
}

SequentialModel::SequentialModel(const SequentialModel& other)
    : input_shape_(other.input_shape_), head_boundary_(other.head_boundary_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

SequentialModel& SequentialModel::operator=(const SequentialModel& other) {
  if (this != &other) {
    SequentialModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

SequentialModel::~SequentialModel() = default;

void SequentialModel::add(nn::LayerSpec spec) {
  for (const auto& l : layers_) {
    if (l->name() == spec.name) throw ConfigError("duplicate layer name '" + spec.name + "'");
  }
  if (spec.name.empty()) throw ConfigError("layer name must not be empty");
  const Shape in = layers_.empty() ? input_shape_ : layers_.back()->output_shape();
  layers_.push_back(nn::make_layer(spec, in));
}

const Shape& SequentialModel::output_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back()->output_shape();
}

void SequentialModel::set_head_boundary(std::size_t index) {
  if (index >= layers_.size()) throw ConfigError("head boundary beyond the last layer");
  head_boundary_ = index;
}

void SequentialModel::strip_head() {
  if (!head_boundary_) return;
  layers_.resize(*head_boundary_);
  head_boundary_.reset();
}

bool SequentialModel::trainable(std::size_t i) const {
  const auto& l = layer(i);
  return l.weighted() && !l.frozen();
}

std::vector<bool> SequentialModel::trainable_mask() const {
  std::vector<bool> mask(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) mask[i] = trainable(i);
  return mask;
}

std::vector<std::size_t> SequentialModel::weighted_backbone() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < backbone_size(); ++i)
    if (layers_[i]->weighted()) out.push_back(i);
  return out;
}

std::vector<std::size_t> SequentialModel::weighted_head() const {
  std::vector<std::size_t> out;
  for (std::size_t i = backbone_size(); i < layers_.size(); ++i)
    if (layers_[i]->weighted()) out.push_back(i);
  return out;
}

std::vector<nn::LayerKind> SequentialModel::backbone_kinds() const {
  std::vector<nn::LayerKind> kinds;
  for (std::size_t i = 0; i < backbone_size(); ++i) kinds.push_back(layers_[i]->spec().kind);
  return kinds;
}

void SequentialModel::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

Tensor SequentialModel::forward(const Tensor& input, nn::Mode mode, Rng& rng, std::size_t first, std::size_t last) {
  last = std::min(last, layers_.size());
  if (first > last) throw ConfigError("forward range is empty");
  if (first == last) return input;
  Tensor x = layers_[first]->forward(input, mode, rng);
  for (std::size_t i = first + 1; i < last; ++i) x = layers_[i]->forward(x, mode, rng);
  return x;
}

Tensor SequentialModel::predict(const Tensor& input) {
  Rng unused(0);
  return forward(input, nn::Mode::Eval, unused);
}

void SequentialModel::backward(const Tensor& grad, std::size_t first, std::size_t last) {
  if (first >= last || last > layers_.size()) throw ConfigError("backward range is invalid");
  Tensor g = grad;
  for (std::size_t i = last; i-- > first;) g = layers_[i]->backward(g, i > first);
}

std::string SequentialModel::architecture() const {
  std::ostringstream os;
  os << "input " << shape_string(input_shape_) << '\n';
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    os << i << ' ' << layers_[i]->name() << ' ' << nn::describe(layers_[i]->spec().kind) << '\n';
  }
  if (head_boundary_) os << "head " << *head_boundary_ << '\n';
  return os.str();
}

Digest SequentialModel::fingerprint() const { return sha256(architecture()); }

// ---------------------------------------------------------------------------
// Zoo

namespace {

// Names layers "<prefix><n>" with a running count per prefix.
class BackboneBuilder {
 public:
  BackboneBuilder& conv(std::size_t filters, std::size_t kernel = 3, std::size_t stride = 1) {
    return push(nn::Conv2D{filters, kernel, stride, nn::Padding::Same}, "conv");
  }
  BackboneBuilder& relu() { return push(nn::Activation{nn::ActivationFn::Relu}, "relu"); }
  BackboneBuilder& pool() { return push(nn::MaxPool2D{2, 2}, "pool"); }
  BackboneBuilder& bn() { return push(nn::BatchNorm{}, "bn"); }

  std::vector<nn::LayerSpec> done() { return std::move(specs_); }

 private:
  BackboneBuilder& push(nn::LayerKind kind, const std::string& prefix) {
    specs_.push_back({std::move(kind), prefix + std::to_string(++counts_[prefix])});
    return *this;
  }
  std::vector<nn::LayerSpec> specs_;
  std::map<std::string, int> counts_;
};

}  // namespace

const std::vector<std::string>& zoo_names() {
  static const std::vector<std::string> names{"mini-vgg", "mini-vgg-bn", "mini-cnn-wide", "mini-cnn-deep",
                                              "mini-cnn-pool"};
  return names;
}

ZooEntry zoo_entry(std::string_view name) {
  BackboneBuilder b;
  if (name == "mini-vgg") {
    b.conv(16).relu().conv(16).relu().pool();
    b.conv(32).relu().conv(32).relu().pool();
    b.conv(32).relu().pool();
  } else if (name == "mini-vgg-bn") {
    b.conv(16).bn().relu().conv(16).bn().relu().pool();
    b.conv(32).bn().relu().conv(32).bn().relu().pool();
    b.conv(32).bn().relu().pool();
  } else if (name == "mini-cnn-wide") {
    b.conv(24, 5).relu().pool();
    b.conv(48).relu().conv(48).relu().pool();
    b.conv(64).relu().conv(64).relu().pool();
  } else if (name == "mini-cnn-deep") {
    // 1x1 projection feeding a 3x3 conv with no activation in between, so
    // these pairs form two-layer blocks.
    b.conv(16).relu();
    b.conv(16, 1).conv(16).bn().relu().pool();
    b.conv(24, 1).conv(24).relu();
    b.conv(24, 1).conv(24).bn().relu().pool();
    b.conv(32, 1).conv(32).relu().pool();
  } else if (name == "mini-cnn-pool") {
    b.conv(16).relu().pool();
    b.conv(24).relu().pool();
    b.conv(32).relu().pool();
    b.conv(32).relu().conv(32).relu();
  } else {
    throw ConfigError("unknown zoo entry '" + std::string(name) + "'");
  }
  return {std::string(name), b.done()};
}

SequentialModel build_backbone(const ZooEntry& entry, const Shape& input_shape, std::uint64_t seed) {
  SequentialModel model(input_shape);
  for (const auto& spec : entry.backbone) model.add(spec);
  Rng rng(seed, /*stream=*/0x696e6974);
  model.initialize(rng);
  return model;
}

void attach_classifier(SequentialModel& model, std::size_t num_classes, Rng& rng) {
  if (model.has_head()) throw ConfigError("model already has a classifier head");
  if (num_classes == 0) throw ConfigError("classifier needs at least one class");
  const std::size_t boundary = model.size();
  model.add({nn::Flatten{}, "flatten"});
  model.add({nn::Dense{128}, "fc1"});
  model.add({nn::Dropout{0.5f}, "dropout"});
  model.add({nn::Dense{64}, "fc2"});
  model.add({nn::Activation{nn::ActivationFn::Relu}, "fc2_relu"});
  model.add({nn::Dense{num_classes}, "predictions"});
  model.add({nn::Activation{nn::ActivationFn::Softmax}, "softmax"});
  model.set_head_boundary(boundary);
  for (std::size_t i = boundary; i < model.size(); ++i) model.layer(i).initialize(rng);
}

void set_trainable(SequentialModel& model, std::span<const std::size_t> unit) {
  const std::size_t backbone = model.backbone_size();
  std::set<std::size_t> chosen;
  for (std::size_t i : unit) {
    if (i >= backbone) {
      throw ConfigError("layer index " + std::to_string(i) + " is outside the backbone (" + std::to_string(backbone) +
                        " layers)");
    }
    if (!model.layer(i).weighted()) {
      throw ConfigError("layer " + std::to_string(i) + " ('" + model.layer(i).name() + "') has no weights");
    }
    chosen.insert(i);
  }
  for (std::size_t i = 0; i < model.size(); ++i) {
    const bool in_head = i >= backbone;
    model.layer(i).set_frozen(!(in_head || chosen.contains(i)));
  }
}

std::vector<LayerParamCount> count_params(const SequentialModel& model) {
  std::vector<LayerParamCount> out;
  out.reserve(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) out.push_back({model.layer(i).name(), model.layer(i).param_count()});
  return out;
}

std::size_t total_params(const SequentialModel& model) {
  std::size_t total = 0;
  for (const auto& c : count_params(model)) total += c.count;
  return total;
}

}  // namespace bwft::model
