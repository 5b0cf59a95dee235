#include "bwft/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bwft/error.hpp"

namespace bwft::nn {

namespace {

void check_probs(const Tensor& probs) {
  if (probs.rank() != 2) throw ConfigError("cross_entropy expects [batch, classes] probabilities");
  if (!probs.all_finite()) throw NumericError("non-finite probabilities in cross_entropy");
  const std::size_t width = probs.dim(1);
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += probs[r * width + j];
    if (std::abs(total - 1.0) > 1e-5) throw ConfigError("probability row " + std::to_string(r) + " sums to " + std::to_string(total));
  }
}

}  // namespace

CrossEntropy cross_entropy(const Tensor& probs, std::span<const std::uint16_t> labels) {
  check_probs(probs);
  const std::size_t batch = probs.dim(0);
  const std::size_t width = probs.dim(1);
  if (labels.size() != batch) {
    throw ConfigError("cross_entropy batch mismatch: " + std::to_string(batch) + " rows, " +
                      std::to_string(labels.size()) + " labels");
  }
  if (batch == 0) throw ConfigError("cross_entropy on an empty batch");
  CrossEntropy out;
  out.grad = probs;
  double total = 0.0;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= width) throw ConfigError("label " + std::to_string(labels[r]) + " out of range");
    const double p = std::max(static_cast<double>(probs[r * width + labels[r]]), kProbabilityFloor);
    total -= std::log(p);
    out.grad[r * width + labels[r]] -= 1.0f;
  }
  for (float& g : out.grad.data()) g *= inv_batch;
  out.loss = total / static_cast<double>(batch);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  return out;
}

CrossEntropy cross_entropy(const Tensor& probs, const Tensor& one_hot) {
  if (probs.shape() != one_hot.shape()) {
    throw ConfigError("cross_entropy shape mismatch: " + shape_string(probs.shape()) + " vs " +
                      shape_string(one_hot.shape()));
  }
  check_probs(probs);
  const std::size_t width = probs.dim(1);
  std::vector<std::uint16_t> labels(probs.dim(0));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const float v = one_hot[r * width + j];
      if (v == 1.0f) {
        labels[r] = static_cast<std::uint16_t>(j);
        ++ones;
      } else if (v != 0.0f) {
        ones = 2;
      }
    }
    if (ones != 1) throw ConfigError("row " + std::to_string(r) + " is not a one-hot vector");
  }
  return cross_entropy(probs, labels);
}

Adam::Adam(AdamConfig config, std::vector<Shape> param_shapes) : config_(config) {
  if (!(config.learning_rate > 0.0) || !(config.beta1 > 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 > 0.0 && config.beta2 < 1.0) || !(config.epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  m_.reserve(param_shapes.size());
  v_.reserve(param_shapes.size());
  for (auto& s : param_shapes) {
    m_.emplace_back(s);
    v_.emplace_back(std::move(s));
  }
}

void Adam::step(std::span<Tensor* const> values, std::span<const Tensor* const> grads,
                std::span<const bool> trainable) {
  if (values.size() != m_.size() || grads.size() != m_.size() || trainable.size() != m_.size()) {
    throw ConfigError("Adam step: parameter count mismatch");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (!trainable[i]) continue;
    if (values[i]->shape() != m_[i].shape() || grads[i]->shape() != m_[i].shape()) {
      throw ConfigError("Adam step: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i]->all_finite()) throw NumericError("non-finite gradient for parameter " + std::to_string(i));
  }

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (!trainable[i]) continue;
    float* w = values[i]->raw();
    const float* g = grads[i]->raw();
    float* m = m_[i].raw();
    float* v = v_[i].raw();
    const std::size_t n = m_[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      const double mj = b1 * m[j] + (1.0 - b1) * g[j];
      const double vj = b2 * v[j] + (1.0 - b2) * static_cast<double>(g[j]) * g[j];
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      w[j] = static_cast<float>(w[j] - lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

PlateauSchedule::PlateauSchedule(PlateauConfig config)
    : config_(config), best_(-std::numeric_limits<double>::infinity()) {
  if (!(config.factor > 0.0 && config.factor < 1.0) || config.patience <= 0 || config.min_lr < 0.0) {
    throw ConfigError("invalid plateau schedule parameters");
  }
}

double PlateauSchedule::update(double lr, double val_acc) {
  if (val_acc > best_ + config_.threshold) {
    best_ = val_acc;
    waited_ = 0;
    return lr;
  }
  if (++waited_ >= config_.patience) {
    waited_ = 0;
    return std::min(lr, std::max(lr * config_.factor, config_.min_lr));
  }
  return lr;
}

}  // namespace bwft::nn
