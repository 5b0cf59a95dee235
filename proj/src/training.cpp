#include "bwft/training.hpp"

#include <algorithm>
#include <memory>
#include <sstream>
#include <variant>

#include "bwft/error.hpp"

namespace bwft::training {

TrainConfig TrainConfig::full_schedule() {
  TrainConfig c;
  c.epochs = kFullEpochs;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  nn::PlateauSchedule check(plateau);
}

std::string TrainConfig::describe() const {
  std::ostringstream os;
  os.precision(9);
  os << "lr=" << learning_rate << ";batch_size=" << batch_size << ";epochs=" << epochs
     << ";plateau_factor=" << plateau.factor << ";plateau_patience=" << plateau.patience
     << ";plateau_min_lr=" << plateau.min_lr << ";seed=" << seed;
  return os.str();
}

std::size_t argmax(const float* values, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (values[j] > values[best]) best = j;
  return best;
}

namespace {

constexpr std::size_t kEvalChunk = 128;
constexpr std::uint64_t kShuffleStream = 0x73687566;

// Runs layers [0, end) in eval mode over the whole dataset.
Tensor prefix_features(model::SequentialModel& m, const data::LabeledDataset& d, std::size_t end) {
  Shape sample = end == 0 ? m.input_shape() : m.layer(end - 1).output_shape();
  Shape full{d.size()};
  full.insert(full.end(), sample.begin(), sample.end());
  Tensor out(full);
  const std::size_t per = shape_product(sample);
  Rng unused(0);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < d.size(); begin += kEvalChunk) {
    const std::size_t stop = std::min(d.size(), begin + kEvalChunk);
    idx.resize(stop - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Tensor y = m.forward(d.batch(idx), nn::Mode::Eval, unused, 0, end);
    std::copy(y.data().begin(), y.data().end(), out.raw() + begin * per);
  }
  return out;
}

Tensor gather(const Tensor& features, std::span<const std::size_t> rows) {
  Shape shape = features.shape();
  const std::size_t per = features.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(features.raw() + rows[i] * per, per, out.raw() + i * per);
  return out;
}

double accuracy_from(model::SequentialModel& m, const Tensor& features, std::span<const std::uint16_t> labels,
                     std::size_t first) {
  const std::size_t n = labels.size();
  if (n == 0) throw ConfigError("cannot evaluate on an empty dataset");
  Rng unused(0);
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t stop = std::min(n, begin + kEvalChunk);
    rows.resize(stop - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    const Tensor probs = m.forward(gather(features, rows), nn::Mode::Eval, unused, first);
    const std::size_t width = probs.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (argmax(probs.raw() + i * width, width) == labels[begin + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

bool ends_in_softmax(const model::SequentialModel& m) {
  if (m.size() == 0) return false;
  const auto* act = std::get_if<nn::Activation>(&m.layer(m.size() - 1).spec().kind);
  return act && act->fn == nn::ActivationFn::Softmax;
}

}  // namespace

double evaluate(model::SequentialModel& model, const data::LabeledDataset& data) {
  if (data.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  const Tensor inputs = data.batch([&] {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }());
  return accuracy_from(model, inputs, data.labels, 0);
}

FitReport fit(model::SequentialModel& model, const data::LabeledDataset& train, const data::LabeledDataset& eval,
              const TrainConfig& config) {
  config.validate();
  if (!ends_in_softmax(model)) throw ConfigError("fit needs a model ending in a softmax layer");
  if (train.size() == 0) throw ConfigError("cannot train on an empty dataset");
  if (eval.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");

  // Everything below the first trainable layer is frozen and, lacking
  // dropout or batch statistics, mode independent.
  std::size_t first = model.size();
  for (std::size_t i = 0; i < model.size(); ++i)
    if (model.trainable(i)) {
      first = i;
      break;
    }
  if (first == model.size()) throw ConfigError("model has no trainable layers");
  for (std::size_t i = 0; i < first; ++i)
    if (std::holds_alternative<nn::Dropout>(model.layer(i).spec().kind)) {
      first = i;
      break;
    }

  const Tensor train_x = prefix_features(model, train, first);
  const Tensor eval_x = prefix_features(model, eval, first);

  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  std::vector<Shape> shapes;
  for (std::size_t i = first; i < model.size(); ++i) {
    if (!model.trainable(i)) continue;
    for (auto& p : model.layer(i).params()) {
      values.push_back(&p.value);
      grads.push_back(&p.grad);
      shapes.push_back(p.value.shape());
    }
  }
  // Adam takes a flag span; std::vector<bool> cannot provide one.
  const auto trainable = std::make_unique<bool[]>(values.size());
  std::fill_n(trainable.get(), values.size(), true);

  nn::Adam adam(nn::AdamConfig{.learning_rate = config.learning_rate}, shapes);
  nn::PlateauSchedule schedule(config.plateau);
  Rng rng(config.seed, kShuffleStream);

  FitReport report;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double lr = config.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t stop = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, stop - begin);
      const Tensor probs = model.forward(gather(train_x, rows), nn::Mode::Train, rng, first);
      const auto labels = train.batch_labels(rows);
      const nn::CrossEntropy ce = nn::cross_entropy(probs, labels);
      model.backward(ce.grad, first, model.size() - 1);
      adam.step(values, grads, std::span<const bool>(trainable.get(), values.size()));
      loss_sum += ce.loss;
      ++batches;
    }
    const double acc = accuracy_from(model, eval_x, eval.labels, first);
    report.accuracy_trace.push_back(acc);
    report.lr_trace.push_back(lr);
    report.loss_trace.push_back(loss_sum / static_cast<double>(batches));
    report.best_accuracy = std::max(report.best_accuracy, acc);
    report.epochs_run = epoch + 1;
    lr = schedule.update(lr, acc);
    adam.set_learning_rate(lr);
  }
  for (std::size_t i = 0; i < model.size(); ++i) model.layer(i).clear_cache();
  return report;
}

}  // namespace bwft::training
