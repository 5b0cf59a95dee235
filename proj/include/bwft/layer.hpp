#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "bwft/rng.hpp"
#include "bwft/tensor.hpp"

namespace bwft::nn {

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };
enum class ActivationFn { Relu, Softmax };

struct Dense {
  std::size_t units = 1;
};
struct Conv2D {
  std::size_t filters = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};
struct MaxPool2D {
  std::size_t window = 2;
  std::size_t stride = 2;
};
struct Flatten {};
struct Dropout {
  float rate = 0.5f;
};
struct BatchNorm {};
struct Activation {
  ActivationFn fn = ActivationFn::Relu;
};

using LayerKind = std::variant<Dense, Conv2D, MaxPool2D, Flatten, Dropout, BatchNorm, Activation>;

struct LayerSpec {
  LayerKind kind;
  std::string name;
};

/// True exactly for Dense, Conv2D and BatchNorm.
bool is_weighted(const LayerKind& kind);
/// "Dense", "Conv2D", "MaxPool2D", "Flatten", "Dropout", "BatchNorm", "Activation".
std::string kind_name(const LayerKind& kind);
/// Kind plus its hyper-parameters, e.g. "Conv2D(16,3,1,same)". Used for fingerprints.
std::string describe(const LayerKind& kind);
/// Throws ConfigError for out-of-range hyper-parameters.
void validate(const LayerKind& kind);

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

struct Buffer {
  std::string name;
  Tensor value;
};

/// A layer instance bound to a per-sample input shape. Shapes passed to
/// forward/backward carry a leading batch axis.
class Layer {
 public:
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  /// Train mode caches what backward needs; eval mode caches nothing.
  virtual Tensor forward(const Tensor& input, Mode mode, Rng& rng) = 0;

  /// Consumes the cache of the last train-mode forward. Parameter gradients
  /// are written into params()[i].grad unless the layer is frozen. When
  /// want_input_grad is false an empty tensor is returned.
  virtual Tensor backward(const Tensor& upstream, bool want_input_grad = true) = 0;

  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  std::size_t param_count() const;
  bool weighted() const { return is_weighted(spec_.kind); }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  /// He-uniform for kernels, zeros for biases, unit scale for batch-norm.
  virtual void initialize(Rng& rng);

  /// Drops cached activations.
  void clear_cache() { has_cache_ = false; }

 protected:
  Layer(LayerSpec spec, Shape input_shape, Shape output_shape)
      : spec_(std::move(spec)), input_shape_(std::move(input_shape)),
        output_shape_(std::move(output_shape)) {}
  Layer(const Layer&) = default;

  /// Batch extent of `input`, after checking the per-sample shape.
  std::size_t check_input(const Tensor& input) const;
  void require_cache() const;
  Shape batched(const Shape& sample, std::size_t batch) const;

  LayerSpec spec_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<Param> params_;
  std::vector<Buffer> buffers_;
  bool frozen_ = false;
  bool has_cache_ = false;
};

/// Instantiates a layer for the given per-sample input shape. Throws
/// ConfigError when the kind cannot accept that shape.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape);

/// Batch-norm running statistics momentum (running = m * running + (1-m) * batch).
inline constexpr float kBatchNormMomentum = 0.99f;
inline constexpr float kBatchNormEpsilon = 1e-3f;

}  // namespace bwft::nn
