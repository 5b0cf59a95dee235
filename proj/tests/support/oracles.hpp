#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "bwft/finetune.hpp"
#include "bwft/layer.hpp"
#include "bwft/rng.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Finite differences

/// Relative error with an absolute floor. Layers compute in float32, so a
/// central difference with h=1e-3 carries ~5e-5 absolute noise; the floor
/// keeps near-zero gradients from turning that noise into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-1) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Random input whose entries are distinct, at least 0.02 away from zero
/// and pairwise more than 2h apart when the tensor holds at most 240
/// values, so no relu or max-pool kink lies within a finite-difference step.
inline bwft::Tensor kink_free_input(bwft::Shape shape, bwft::Rng& rng) {
  bwft::Tensor x(std::move(shape));
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    const float mag = 0.02f + 0.48f * static_cast<float>(order[i]) / static_cast<float>(n);
    x[i] = rng.uniform() < 0.5f ? -mag : mag;
  }
  return x;
}

struct GradCheck {
  double max_error = 0.0;
  std::string worst;  // "<input|param name>[index]"
  std::size_t checked = 0;
};

/// Checks a layer's input and parameter gradients against central
/// differences of L = sum(r * forward(x)), r fixed random. Every forward
/// uses the same rng seed so dropout masks repeat. Loss is accumulated in
/// double.
inline GradCheck check_layer_gradients(bwft::nn::Layer& layer, bwft::Tensor input, std::uint64_t seed,
                                       double h = 1e-3) {
  using namespace bwft;
  const std::uint64_t mask_seed = seed ^ 0x5eedULL;
  Rng r_rng(seed, 7);
  Tensor probe;
  auto loss = [&](const Tensor& x) {
    Rng rng(mask_seed);
    const Tensor y = layer.forward(x, nn::Mode::Train, rng);
    if (probe.empty()) {
      probe = Tensor(y.shape());
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = r_rng.uniform(-1.0f, 1.0f);
    }
    double l = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) l += static_cast<double>(probe[i]) * y[i];
    return l;
  };

  loss(input);
  for (auto& p : layer.params()) p.grad.fill(0.0f);
  {
    Rng rng(mask_seed);
    layer.forward(input, nn::Mode::Train, rng);
  }
  const Tensor input_grad = layer.backward(probe, true);

  GradCheck out;
  auto visit = [&](const std::string& what, std::size_t i, double analytic, float& slot, const Tensor& x) {
    const float saved = slot;
    const float hi = saved + static_cast<float>(h), lo = saved - static_cast<float>(h);
    slot = hi;
    const double up = loss(x);
    slot = lo;
    const double down = loss(x);
    slot = saved;
    // Divide by the step actually taken after rounding to float.
    const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double err = relative_error(analytic, numeric);
    ++out.checked;
    if (err > out.max_error) {
      out.max_error = err;
      out.worst = what + "[" + std::to_string(i) + "]";
    }
  };

  for (std::size_t i = 0; i < input.size(); ++i) visit("input", i, input_grad[i], input[i], input);
  for (auto& p : layer.params()) {
    const Tensor grad = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) visit(p.name, i, grad[i], p.value[i], input);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam, written out for a single scalar in double precision.

struct ScalarAdam {
  double lr = 5e-5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double w, double g) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / (1.0 - std::pow(b1, t));
    const double v_hat = v / (1.0 - std::pow(b2, t));
    return w - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
};

// ---------------------------------------------------------------------------
// Selection

/// Scores units from a table; search scores come from `search`, final
/// scores are constant. Records every unit it was asked to train.
class StubTrainer : public bwft::finetune::UnitTrainer {
 public:
  std::map<bwft::finetune::Unit, double> search;
  double missing = 0.0;
  std::vector<bwft::finetune::Unit> search_calls, final_calls;

  bwft::finetune::RunResult run(const bwft::finetune::Unit& unit, bwft::finetune::Phase phase) override {
    bwft::finetune::RunResult r;
    r.unit = unit;
    std::lock_guard lock(mutex_);
    if (phase == bwft::finetune::Phase::Search) {
      search_calls.push_back(unit);
      auto it = search.find(unit);
      r.search_accuracy = it == search.end() ? missing : it->second;
    } else {
      final_calls.push_back(unit);
      r.final_accuracy = 0.5;
    }
    return r;
  }

 private:
  std::mutex mutex_;
};

/// First index holding the largest value.
inline std::size_t first_argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Top-k layers by a stable sort on descending accuracy, returned in
/// layer order.
inline std::vector<std::size_t> topk_by_sort(std::vector<std::pair<std::size_t, double>> scores, std::size_t k) {
  std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scores[i].first);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle
