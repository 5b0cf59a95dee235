#pragma once

#include "bwft/dataset.hpp"
#include "bwft/model.hpp"
#include "bwft/snapshot.hpp"
#include "bwft/training.hpp"

namespace bwft::model {

struct PretrainConfig {
  training::TrainConfig train = default_train();

  static training::TrainConfig default_train() {
    training::TrainConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 16;
    c.epochs = 20;
    return c;
  }
  data::SplitSpec split;
  /// Source-task test accuracy the run must exceed.
  double accuracy_gate = 0.5;
};

struct PretrainResult {
  Snapshot snapshot;
  double source_accuracy = 0.0;
  training::FitReport report;
  /// Backbone plus the source classifier, for zero-shot evaluation.
  SequentialModel source_model;
};

/// Trains `backbone` plus a temporary classifier on the source task, checks
/// the accuracy gate, strips the temporary head and snapshots the backbone.
/// Throws Error when the gate is not met and NumericError on divergence.
PretrainResult pretrain(SequentialModel backbone, const data::LabeledDataset& source, const PretrainConfig& config);

}  // namespace bwft::model
