#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bwft/tensor.hpp"

namespace bwft::nn {

class Layer;

/// Fused softmax + categorical cross-entropy. `probs` are softmax outputs
/// [batch, classes]; `grad` is with respect to the pre-softmax logits,
/// (probs - one_hot) / batch.
struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;
};

inline constexpr double kProbabilityFloor = 1e-12;

CrossEntropy cross_entropy(const Tensor& probs, const Tensor& one_hot);
/// Same as above with labels given as class indices.
CrossEntropy cross_entropy(const Tensor& probs, std::span<const std::uint16_t> labels);

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for a list of parameter tensors.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<Shape> param_shapes);

  /// One update. values/grads/trainable are parallel to the shapes given at
  /// construction; entries with trainable == false are left untouched
  /// together with their moments. t advances by one per call.
  void step(std::span<Tensor* const> values, std::span<const Tensor* const> grads,
            std::span<const bool> trainable);

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

/// Reduce-on-plateau monitoring a metric that should increase.
struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-7;
  double threshold = 1e-6;
};

class PlateauSchedule {
 public:
  explicit PlateauSchedule(PlateauConfig config = {});

  /// Call once per epoch with that epoch's validation accuracy; returns the
  /// learning rate for the next epoch.
  double update(double lr, double val_acc);

  const PlateauConfig& config() const { return config_; }
  double best() const { return best_; }
  int epochs_since_improvement() const { return waited_; }

 private:
  PlateauConfig config_;
  double best_;
  int waited_ = 0;
};

}  // namespace bwft::nn
