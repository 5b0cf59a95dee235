#include "bwft/layer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bwft/error.hpp"
#include "bwft/kernels.hpp"

namespace bwft::nn {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool is_weighted(const LayerKind& kind) {
  return std::holds_alternative<Dense>(kind) || std::holds_alternative<Conv2D>(kind) ||
         std::holds_alternative<BatchNorm>(kind);
}

std::string kind_name(const LayerKind& kind) {
  return std::visit(Overloaded{
                        [](const Dense&) { return std::string("Dense"); },
                        [](const Conv2D&) { return std::string("Conv2D"); },
                        [](const MaxPool2D&) { return std::string("MaxPool2D"); },
                        [](const Flatten&) { return std::string("Flatten"); },
                        [](const Dropout&) { return std::string("Dropout"); },
                        [](const BatchNorm&) { return std::string("BatchNorm"); },
                        [](const Activation&) { return std::string("Activation"); },
                    },
                    kind);
}

std::string describe(const LayerKind& kind) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const Dense& d) { os << "Dense(" << d.units << ")"; },
                 [&](const Conv2D& c) {
                   os << "Conv2D(" << c.filters << "," << c.kernel << "," << c.stride << ","
                      << (c.padding == Padding::Same ? "same" : "valid") << ")";
                 },
                 [&](const MaxPool2D& p) { os << "MaxPool2D(" << p.window << "," << p.stride << ")"; },
                 [&](const Flatten&) { os << "Flatten"; },
                 [&](const Dropout& d) { os << "Dropout(" << d.rate << ")"; },
                 [&](const BatchNorm&) { os << "BatchNorm"; },
                 [&](const Activation& a) {
                   os << "Activation(" << (a.fn == ActivationFn::Relu ? "relu" : "softmax") << ")";
                 },
             },
             kind);
  return os.str();
}

void validate(const LayerKind& kind) {
  std::visit(Overloaded{
                 [](const Dense& d) {
                   if (d.units == 0) throw ConfigError("Dense units must be positive");
                 },
                 [](const Conv2D& c) {
                   if (c.filters == 0 || c.kernel == 0 || c.stride == 0)
                     throw ConfigError("Conv2D filters, kernel and stride must be positive");
                 },
                 [](const MaxPool2D& p) {
                   if (p.window == 0 || p.stride == 0)
                     throw ConfigError("MaxPool2D window and stride must be positive");
                 },
                 [](const Flatten&) {},
                 [](const Dropout& d) {
                   if (!(d.rate >= 0.0f && d.rate < 1.0f))
                     throw ConfigError("Dropout rate must lie in [0, 1)");
                 },
                 [](const BatchNorm&) {},
                 [](const Activation&) {},
             },
             kind);
}

std::size_t Layer::param_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

void Layer::initialize(Rng&) {}

std::size_t Layer::check_input(const Tensor& input) const {
  const Shape& s = input.shape();
  if (s.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), s.begin() + 1)) {
    throw ConfigError("layer '" + name() + "' expects [batch]" + shape_string(input_shape_) + ", got " +
                      shape_string(s));
  }
  return s[0];
}

void Layer::require_cache() const {
  if (!has_cache_) throw UsageError("backward on layer '" + name() + "' without a train-mode forward");
}

Shape Layer::batched(const Shape& sample, std::size_t batch) const {
  Shape s;
  s.reserve(sample.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

namespace {

void check_finite(const Tensor& t, const std::string& layer, const char* what) {
  if (!t.all_finite()) throw NumericError("non-finite " + std::string(what) + " in layer '" + layer + "'");
}

template <class Derived>
class LayerImpl : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Derived>(static_cast<const Derived&>(*this));
  }

 protected:
  using Layer::Layer;
};

void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (float& v : t.data()) v = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------------------

class DenseLayer final : public LayerImpl<DenseLayer> {
 public:
  DenseLayer(const LayerSpec& spec, const Shape& in)
      : LayerImpl(spec, in, Shape{std::get<Dense>(spec.kind).units}) {
    if (in.size() != 1) throw ConfigError("Dense layer '" + spec.name + "' needs a flat input, got " + shape_string(in));
    in_f_ = in[0];
    out_f_ = output_shape_[0];
    params_.push_back({"kernel", Tensor({in_f_, out_f_}), Tensor({in_f_, out_f_})});
    params_.push_back({"bias", Tensor({out_f_}), Tensor({out_f_})});
  }

  void initialize(Rng& rng) override {
    he_uniform(params_[0].value, in_f_, rng);
    params_[1].value.fill(0.0f);
  }

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    const std::size_t batch = check_input(input);
    Tensor out(batched(output_shape_, batch));
    kernels::parallel::dense_forward(batch, in_f_, out_f_, input.data(), params_[0].value.data(),
                                     params_[1].value.data(), out.data());
    check_finite(out, name(), "output");
    if (mode == Mode::Train) {
      input_ = input;
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    const std::size_t batch = input_.dim(0);
    if (!frozen_) {
      kernels::parallel::dense_backward_params(batch, in_f_, out_f_, input_.data(), upstream.data(),
                                               params_[0].grad.data(), params_[1].grad.data());
    }
    if (!want_input_grad) return {};
    Tensor grad(input_.shape());
    kernels::parallel::dense_backward_input(batch, in_f_, out_f_, upstream.data(), params_[0].value.data(),
                                            grad.data());
    return grad;
  }

 private:
  std::size_t in_f_ = 0, out_f_ = 0;
  Tensor input_;
};

// ---------------------------------------------------------------------------

class Conv2DLayer final : public LayerImpl<Conv2DLayer> {
 public:
  Conv2DLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, {}) {
    const auto& c = std::get<Conv2D>(spec.kind);
    if (in.size() != 3) throw ConfigError("Conv2D layer '" + spec.name + "' needs an HxWxC input, got " + shape_string(in));
    geom_.in_h = in[0];
    geom_.in_w = in[1];
    geom_.in_c = in[2];
    geom_.out_c = c.filters;
    geom_.kernel = c.kernel;
    geom_.stride = c.stride;
    if (c.padding == Padding::Same) {
      geom_.out_h = (in[0] + c.stride - 1) / c.stride;
      geom_.out_w = (in[1] + c.stride - 1) / c.stride;
      const auto pad = [&](std::size_t out, std::size_t extent) {
        const long total = static_cast<long>((out - 1) * c.stride + c.kernel) - static_cast<long>(extent);
        return static_cast<std::size_t>(std::max(total, 0L) / 2);
      };
      geom_.pad_top = pad(geom_.out_h, in[0]);
      geom_.pad_left = pad(geom_.out_w, in[1]);
    } else {
      if (in[0] < c.kernel || in[1] < c.kernel)
        throw ConfigError("Conv2D layer '" + spec.name + "' kernel larger than input " + shape_string(in));
      geom_.out_h = (in[0] - c.kernel) / c.stride + 1;
      geom_.out_w = (in[1] - c.kernel) / c.stride + 1;
    }
    output_shape_ = {geom_.out_h, geom_.out_w, geom_.out_c};
    const Shape kshape{c.kernel, c.kernel, geom_.in_c, c.filters};
    params_.push_back({"kernel", Tensor(kshape), Tensor(kshape)});
    params_.push_back({"bias", Tensor({c.filters}), Tensor({c.filters})});
  }

  void initialize(Rng& rng) override {
    he_uniform(params_[0].value, geom_.kernel * geom_.kernel * geom_.in_c, rng);
    params_[1].value.fill(0.0f);
  }

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    const std::size_t batch = check_input(input);
    kernels::ConvGeometry g = geom_;
    g.batch = batch;
    Tensor out(batched(output_shape_, batch));
    kernels::parallel::conv2d_forward(g, input.data(), params_[0].value.data(), params_[1].value.data(),
                                      out.data());
    check_finite(out, name(), "output");
    if (mode == Mode::Train) {
      input_ = input;
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    kernels::ConvGeometry g = geom_;
    g.batch = input_.dim(0);
    if (!frozen_) {
      kernels::parallel::conv2d_backward_params(g, input_.data(), upstream.data(), params_[0].grad.data(),
                                                params_[1].grad.data());
    }
    if (!want_input_grad) return {};
    Tensor grad(input_.shape());
    kernels::parallel::conv2d_backward_input(g, upstream.data(), params_[0].value.data(), grad.data());
    return grad;
  }

 private:
  kernels::ConvGeometry geom_;
  Tensor input_;
};

// ---------------------------------------------------------------------------

class MaxPoolLayer final : public LayerImpl<MaxPoolLayer> {
 public:
  MaxPoolLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, {}) {
    const auto& p = std::get<MaxPool2D>(spec.kind);
    if (in.size() != 3) throw ConfigError("MaxPool2D layer '" + spec.name + "' needs an HxWxC input, got " + shape_string(in));
    if (in[0] < p.window || in[1] < p.window)
      throw ConfigError("MaxPool2D layer '" + spec.name + "' window larger than input " + shape_string(in));
    geom_.in_h = in[0];
    geom_.in_w = in[1];
    geom_.channels = in[2];
    geom_.window = p.window;
    geom_.stride = p.stride;
    geom_.out_h = (in[0] - p.window) / p.stride + 1;
    geom_.out_w = (in[1] - p.window) / p.stride + 1;
    output_shape_ = {geom_.out_h, geom_.out_w, geom_.channels};
  }

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    const std::size_t batch = check_input(input);
    kernels::PoolGeometry g = geom_;
    g.batch = batch;
    Tensor out(batched(output_shape_, batch));
    std::vector<std::uint32_t> argmax(out.size());
    kernels::parallel::maxpool2d_forward(g, input.data(), out.data(), argmax);
    check_finite(out, name(), "output");
    if (mode == Mode::Train) {
      argmax_ = std::move(argmax);
      in_full_ = input.shape();
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    if (!want_input_grad) return {};
    kernels::PoolGeometry g = geom_;
    g.batch = in_full_[0];
    Tensor grad(in_full_);
    kernels::parallel::maxpool2d_backward(g, upstream.data(), argmax_, grad.data());
    return grad;
  }

 private:
  kernels::PoolGeometry geom_;
  std::vector<std::uint32_t> argmax_;
  Shape in_full_;
};

// ---------------------------------------------------------------------------

class FlattenLayer final : public LayerImpl<FlattenLayer> {
 public:
  FlattenLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, Shape{shape_product(in)}) {}

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    const std::size_t batch = check_input(input);
    Tensor out = input;
    out.reshape(batched(output_shape_, batch));
    if (mode == Mode::Train) {
      in_full_ = input.shape();
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    if (!want_input_grad) return {};
    Tensor grad = upstream;
    grad.reshape(in_full_);
    return grad;
  }

 private:
  Shape in_full_;
};

// ---------------------------------------------------------------------------

class DropoutLayer final : public LayerImpl<DropoutLayer> {
 public:
  DropoutLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, in) {
    rate_ = std::get<Dropout>(spec.kind).rate;
  }

  Tensor forward(const Tensor& input, Mode mode, Rng& rng) override {
    check_input(input);
    if (mode == Mode::Eval) return input;
    // Inverted dropout: kept units are scaled at train time.
    const float keep = 1.0f - rate_;
    const float scale = 1.0f / keep;
    mask_ = Tensor(input.shape());
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
      const float m = rng.uniform() < keep ? scale : 0.0f;
      mask_[i] = m;
      out[i] = input[i] * m;
    }
    has_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    if (!want_input_grad) return {};
    Tensor grad(upstream.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = upstream[i] * mask_[i];
    return grad;
  }

 private:
  float rate_ = 0.5f;
  Tensor mask_;
};

// ---------------------------------------------------------------------------

// Normalizes over the last axis. A frozen layer runs on its moving
// statistics in both modes and never updates them.
class BatchNormLayer final : public LayerImpl<BatchNormLayer> {
 public:
  BatchNormLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, in) {
    if (in.empty()) throw ConfigError("BatchNorm layer '" + spec.name + "' needs a non-scalar input");
    channels_ = in.back();
    params_.push_back({"gamma", Tensor({channels_}, 1.0f), Tensor({channels_})});
    params_.push_back({"beta", Tensor({channels_}), Tensor({channels_})});
    buffers_.push_back({"moving_mean", Tensor({channels_})});
    buffers_.push_back({"moving_variance", Tensor({channels_}, 1.0f)});
  }

  void initialize(Rng&) override {
    params_[0].value.fill(1.0f);
    params_[1].value.fill(0.0f);
    buffers_[0].value.fill(0.0f);
    buffers_[1].value.fill(1.0f);
  }

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    check_input(input);
    const std::size_t rows = input.size() / channels_;
    const float* gamma = params_[0].value.raw();
    const float* beta = params_[1].value.raw();
    Tensor out(input.shape());
    inv_std_.assign(channels_, 0.0f);

    const bool batch_stats = mode == Mode::Train && !frozen_;
    if (batch_stats) {
      std::vector<double> mean(channels_, 0.0), var(channels_, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) mean[c] += input[r * channels_ + c];
      for (auto& m : mean) m /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) {
          const double d = input[r * channels_ + c] - mean[c];
          var[c] += d * d;
        }
      for (auto& v : var) v /= static_cast<double>(rows);
      float* mm = buffers_[0].value.raw();
      float* mv = buffers_[1].value.raw();
      for (std::size_t c = 0; c < channels_; ++c) {
        inv_std_[c] = static_cast<float>(1.0 / std::sqrt(var[c] + kBatchNormEpsilon));
        mm[c] = kBatchNormMomentum * mm[c] + (1.0f - kBatchNormMomentum) * static_cast<float>(mean[c]);
        mv[c] = kBatchNormMomentum * mv[c] + (1.0f - kBatchNormMomentum) * static_cast<float>(var[c]);
      }
      xhat_ = Tensor(input.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t i = r * channels_ + c;
          xhat_[i] = static_cast<float>((input[i] - mean[c]) * inv_std_[c]);
          out[i] = gamma[c] * xhat_[i] + beta[c];
        }
    } else {
      const float* mm = buffers_[0].value.raw();
      const float* mv = buffers_[1].value.raw();
      for (std::size_t c = 0; c < channels_; ++c) inv_std_[c] = 1.0f / std::sqrt(mv[c] + kBatchNormEpsilon);
      if (mode == Mode::Train) xhat_ = Tensor(input.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t i = r * channels_ + c;
          const float xh = (input[i] - mm[c]) * inv_std_[c];
          if (mode == Mode::Train) xhat_[i] = xh;
          out[i] = gamma[c] * xh + beta[c];
        }
    }
    check_finite(out, name(), "output");
    if (mode == Mode::Train) {
      used_batch_stats_ = batch_stats;
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    const std::size_t rows = upstream.size() / channels_;
    const float* gamma = params_[0].value.raw();
    std::vector<double> sum_g(channels_, 0.0), sum_gx(channels_, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t i = r * channels_ + c;
        sum_g[c] += upstream[i];
        sum_gx[c] += static_cast<double>(upstream[i]) * xhat_[i];
      }
    if (!frozen_) {
      for (std::size_t c = 0; c < channels_; ++c) {
        params_[0].grad[c] = static_cast<float>(sum_gx[c]);
        params_[1].grad[c] = static_cast<float>(sum_g[c]);
      }
    }
    if (!want_input_grad) return {};
    Tensor grad(upstream.shape());
    if (used_batch_stats_) {
      const double n = static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t i = r * channels_ + c;
          const double dxhat_sum = gamma[c] * sum_g[c];
          const double dxhat_x_sum = gamma[c] * sum_gx[c];
          const double dxhat = gamma[c] * upstream[i];
          grad[i] = static_cast<float>(inv_std_[c] / n * (n * dxhat - dxhat_sum - xhat_[i] * dxhat_x_sum));
        }
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t i = r * channels_ + c;
          grad[i] = upstream[i] * gamma[c] * inv_std_[c];
        }
    }
    return grad;
  }

 private:
  std::size_t channels_ = 0;
  Tensor xhat_;
  std::vector<float> inv_std_;
  bool used_batch_stats_ = false;
};

// ---------------------------------------------------------------------------

class ActivationLayer final : public LayerImpl<ActivationLayer> {
 public:
  ActivationLayer(const LayerSpec& spec, const Shape& in) : LayerImpl(spec, in, in) {
    fn_ = std::get<Activation>(spec.kind).fn;
    if (fn_ == ActivationFn::Softmax && in.size() != 1)
      throw ConfigError("softmax layer '" + spec.name + "' needs a flat input, got " + shape_string(in));
  }

  Tensor forward(const Tensor& input, Mode mode, Rng&) override {
    check_input(input);
    Tensor out(input.shape());
    if (fn_ == ActivationFn::Relu) {
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    } else {
      const std::size_t width = input_shape_[0];
      const std::size_t rows = input.size() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* x = input.raw() + r * width;
        float* y = out.raw() + r * width;
        const float peak = *std::max_element(x, x + width);
        double total = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          y[j] = std::exp(x[j] - peak);
          total += y[j];
        }
        for (std::size_t j = 0; j < width; ++j) y[j] = static_cast<float>(y[j] / total);
      }
    }
    check_finite(out, name(), "output");
    if (mode == Mode::Train) {
      cache_ = fn_ == ActivationFn::Relu ? input : out;
      has_cache_ = true;
    }
    return out;
  }

  Tensor backward(const Tensor& upstream, bool want_input_grad) override {
    require_cache();
    if (!want_input_grad) return {};
    Tensor grad(upstream.shape());
    if (fn_ == ActivationFn::Relu) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = cache_[i] > 0.0f ? upstream[i] : 0.0f;
    } else {
      const std::size_t width = input_shape_[0];
      const std::size_t rows = grad.size() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = cache_.raw() + r * width;
        const float* g = upstream.raw() + r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += static_cast<double>(g[j]) * y[j];
        for (std::size_t j = 0; j < width; ++j) grad[r * width + j] = static_cast<float>(y[j] * (g[j] - dot));
      }
    }
    return grad;
  }

 private:
  ActivationFn fn_ = ActivationFn::Relu;
  Tensor cache_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape) {
  validate(spec.kind);
  if (shape_product(input_shape) == 0) throw ConfigError("layer '" + spec.name + "' has an empty input shape");
  return std::visit(Overloaded{
                        [&](const Dense&) -> std::unique_ptr<Layer> {
                          return std::make_unique<DenseLayer>(spec, input_shape);
                        },
                        [&](const Conv2D&) -> std::unique_ptr<Layer> {
                          return std::make_unique<Conv2DLayer>(spec, input_shape);
                        },
                        [&](const MaxPool2D&) -> std::unique_ptr<Layer> {
                          return std::make_unique<MaxPoolLayer>(spec, input_shape);
                        },
                        [&](const Flatten&) -> std::unique_ptr<Layer> {
                          return std::make_unique<FlattenLayer>(spec, input_shape);
                        },
                        [&](const Dropout&) -> std::unique_ptr<Layer> {
                          return std::make_unique<DropoutLayer>(spec, input_shape);
                        },
                        [&](const BatchNorm&) -> std::unique_ptr<Layer> {
                          return std::make_unique<BatchNormLayer>(spec, input_shape);
                        },
                        [&](const Activation&) -> std::unique_ptr<Layer> {
                          return std::make_unique<ActivationLayer>(spec, input_shape);
                        },
                    },
                    spec.kind);
}

}  // namespace bwft::nn
