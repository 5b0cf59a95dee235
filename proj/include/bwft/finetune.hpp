#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bwft/dataset.hpp"
#include "bwft/model.hpp"
#include "bwft/segmentation.hpp"
#include "bwft/snapshot.hpp"
#include "bwft/training.hpp"

namespace bwft::finetune {

using training::TrainConfig;
/// Sorted backbone layer indices adapted together with the head.
using Unit = std::vector<std::size_t>;

/// Strategy tags as they appear in result files.
namespace tag {
inline constexpr const char* kBaselineClassifier = "baseline1";
inline constexpr const char* kBaselineAll = "baseline2";
inline constexpr const char* kLayerwise = "lw";
inline constexpr const char* kBlockwise = "bw";
inline constexpr const char* kTop3 = "bwt3";
inline constexpr const char* kTop5 = "bwt5";
inline constexpr const char* kSlidingWindow = "bwsw";
inline constexpr const char* kRandom3 = "random3";
}  // namespace tag

struct RunResult {
  std::string strategy;
  Unit unit;
  std::vector<std::string> unit_names;
  std::optional<double> search_accuracy;
  std::optional<double> final_accuracy;
  std::size_t epochs_run = 0;
  std::vector<double> accuracy_trace;
  std::vector<double> lr_trace;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
  bool failed = false;
  std::string failure;
  std::string config;  // TrainConfig::describe()
};

struct SearchResult {
  std::string strategy;
  std::vector<RunResult> candidates;  // one per unit, in unit order
  std::size_t selected = 0;           // ordinal into candidates (top-k: unused)
  Unit selected_unit;
  RunResult final_run;
};

/// A zoo architecture together with its pre-trained weights.
struct PretrainedBackbone {
  model::ZooEntry entry;
  Shape input_shape;
  model::Snapshot snapshot;

  /// Fresh backbone with the snapshot weights restored.
  model::SequentialModel instantiate() const;
  /// Backbone plus a classifier head, for structural queries.
  model::SequentialModel structure(std::size_t num_classes) const;
};

struct FineTuneOutput {
  RunResult result;  // search_accuracy holds the best eval accuracy
  std::optional<model::SequentialModel> model;  // absent when the run failed
};

/// Restores the snapshot, attaches a fresh head (seeded from config.seed),
/// unfreezes `unit` plus the head and trains on `train`, scoring `eval`
/// after every epoch. The best epoch's accuracy is the run's score. A
/// numeric failure yields failed=true with score 0 instead of throwing.
FineTuneOutput fine_tune(const PretrainedBackbone& backbone, const Unit& unit, const data::LabeledDataset& train,
                         const data::LabeledDataset& eval, const TrainConfig& config);

struct TaskSplits {
  data::LabeledDataset train;   // 70%
  data::LabeledDataset test;    // 30%, scores both phases
  data::LabeledDataset search;  // 10% of the whole set, drawn from train

  static TaskSplits make(const data::LabeledDataset& data, const data::SplitSpec& spec);
};

enum class Phase { Search, Final };

/// Trains one unit and reports its score. The search session only sees
/// this interface, so selection logic can be exercised with a stub.
class UnitTrainer {
 public:
  virtual ~UnitTrainer() = default;
  /// Search phase: score in search_accuracy. Final phase: score in
  /// final_accuracy.
  virtual RunResult run(const Unit& unit, Phase phase) = 0;
  /// True when run() may be called from several threads at once.
  virtual bool concurrent() const { return false; }
};

/// Real trainer: search runs train on the search subset, final runs on the
/// full train split; both score on the test split.
class FineTuneTrainer : public UnitTrainer {
 public:
  FineTuneTrainer(PretrainedBackbone backbone, const TaskSplits& splits, TrainConfig config);

  RunResult run(const Unit& unit, Phase phase) override;
  bool concurrent() const override { return true; }

  /// Model produced by the most recent final-phase run, if it succeeded.
  const std::optional<model::SequentialModel>& last_final_model() const { return last_final_; }
  const PretrainedBackbone& backbone() const { return backbone_; }

 private:
  PretrainedBackbone backbone_;
  const TaskSplits& splits_;
  TrainConfig config_;
  std::optional<model::SequentialModel> last_final_;
};

/// Candidate whose score is highest; failed runs count as 0 and ties go to
/// the lower ordinal.
std::size_t select_best(std::span<const RunResult> candidates);

struct SessionOptions {
  seg::PartitionOptions partition;
  std::size_t window = 3;
};

/// Runs the selection strategies against one pre-trained model. The
/// layer-wise sweep is cached, so top-k strategies reuse it.
class SearchSession {
 public:
  /// `structure` must have its head attached; only its layout is used.
  SearchSession(const model::SequentialModel& structure, UnitTrainer& trainer, SessionOptions options = {});

  SearchResult layerwise();
  SearchResult blockwise();
  SearchResult blockwise(const seg::Partition& partition);
  SearchResult sliding_window();
  SearchResult sliding_window(std::size_t width);
  SearchResult topk(std::size_t k);

  RunResult baseline_classifier_only();
  RunResult baseline_all_layers();
  RunResult random_layers(std::size_t count, std::uint64_t seed);

  /// Number of layer-wise sweeps actually executed.
  std::size_t sweeps_executed() const { return sweeps_; }
  const std::vector<std::size_t>& weighted_layers() const { return weighted_; }

 private:
  SearchResult search(const std::string& strategy, const std::vector<Unit>& units);
  std::vector<RunResult> sweep(const std::string& strategy, const std::vector<Unit>& units);
  RunResult final_run(const std::string& strategy, const Unit& unit);
  void label(RunResult& r, const std::string& strategy, const Unit& unit) const;

  std::vector<std::string> names_;
  std::vector<nn::LayerKind> backbone_;
  std::vector<std::size_t> weighted_;
  UnitTrainer& trainer_;
  SessionOptions options_;
  std::optional<std::vector<RunResult>> layer_sweep_;
  std::size_t sweeps_ = 0;
};

/// Uniformly samples `count` distinct entries of `layers` with `seed`;
/// returned sorted.
Unit sample_layers(std::span<const std::size_t> layers, std::size_t count, std::uint64_t seed);

}  // namespace bwft::finetune
