#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bwft/dataset.hpp"
#include "bwft/model.hpp"
#include "bwft/optim.hpp"

namespace bwft::training {

inline constexpr std::size_t kFullEpochs = 50;
inline constexpr std::size_t kDeskEpochs = 15;

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 4;
  std::size_t epochs = kDeskEpochs;
  nn::PlateauConfig plateau;
  std::uint64_t seed = 0;

  /// Same settings with the 50-epoch schedule.
  static TrainConfig full_schedule();
  /// Throws ConfigError unless every field is positive and the plateau
  /// parameters are valid.
  void validate() const;
  /// Canonical "key=value;..." text, echoed into results and digests.
  std::string describe() const;
};

struct FitReport {
  std::vector<double> accuracy_trace;  // eval accuracy after each epoch
  std::vector<double> lr_trace;        // learning rate used in each epoch
  std::vector<double> loss_trace;      // mean training loss per epoch
  double best_accuracy = 0.0;
  std::size_t epochs_run = 0;
};

/// Trains the trainable layers of `model` (which must end in a softmax
/// head) with Adam and reduce-on-plateau monitoring eval accuracy. Layers
/// below the lowest trainable layer are evaluated once and cached, since
/// their output cannot change. Throws NumericError on NaN/Inf.
FitReport fit(model::SequentialModel& model, const data::LabeledDataset& train, const data::LabeledDataset& eval,
              const TrainConfig& config);

/// Fraction of argmax-correct predictions in eval mode. Ties go to the
/// lowest class index. Throws ConfigError on an empty dataset.
double evaluate(model::SequentialModel& model, const data::LabeledDataset& data);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(const float* values, std::size_t n);

}  // namespace bwft::training
