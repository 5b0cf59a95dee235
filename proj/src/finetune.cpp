#include "bwft/finetune.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <exception>

#include "bwft/error.hpp"

namespace bwft::finetune {

namespace {

constexpr std::uint64_t kHeadStream = 0x68656164;
constexpr std::uint64_t kRandomLayersStream = 0x72616e64;

double score_of(const RunResult& r) {
  if (r.failed) return 0.0;
  if (r.search_accuracy) return *r.search_accuracy;
  return r.final_accuracy.value_or(0.0);
}

}  // namespace

model::SequentialModel PretrainedBackbone::instantiate() const {
  auto m = model::build_backbone(entry, input_shape, 0);
  snapshot.restore(m);
  return m;
}

model::SequentialModel PretrainedBackbone::structure(std::size_t num_classes) const {
  auto m = model::build_backbone(entry, input_shape, 0);
  Rng rng(0);
  model::attach_classifier(m, num_classes, rng);
  return m;
}

FineTuneOutput fine_tune(const PretrainedBackbone& backbone, const Unit& unit, const data::LabeledDataset& train,
                         const data::LabeledDataset& eval, const TrainConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  FineTuneOutput out;
  RunResult& r = out.result;
  r.unit = unit;
  std::sort(r.unit.begin(), r.unit.end());
  r.seed = config.seed;
  r.config = config.describe();

  auto m = backbone.instantiate();
  Rng head_rng(config.seed, kHeadStream);
  model::attach_classifier(m, train.num_classes, head_rng);
  model::set_trainable(m, r.unit);
  try {
    const auto report = training::fit(m, train, eval, config);
    r.search_accuracy = report.best_accuracy;
    r.epochs_run = report.epochs_run;
    r.accuracy_trace = report.accuracy_trace;
    r.lr_trace = report.lr_trace;
    out.model = std::move(m);
  } catch (const NumericError& e) {
    r.failed = true;
    r.failure = e.what();
    r.search_accuracy = 0.0;
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

TaskSplits TaskSplits::make(const data::LabeledDataset& data, const data::SplitSpec& spec) {
  const auto idx = data::split(data, spec);
  return {data.subset(idx.train), data.subset(idx.test), data.subset(idx.search)};
}

FineTuneTrainer::FineTuneTrainer(PretrainedBackbone backbone, const TaskSplits& splits, TrainConfig config)
    : backbone_(std::move(backbone)), splits_(splits), config_(config) {
  config_.validate();
}

RunResult FineTuneTrainer::run(const Unit& unit, Phase phase) {
  const bool final = phase == Phase::Final;
  auto out = fine_tune(backbone_, unit, final ? splits_.train : splits_.search, splits_.test, config_);
  if (final) {
    out.result.final_accuracy = out.result.search_accuracy;
    out.result.search_accuracy.reset();
    last_final_ = std::move(out.model);
  }
  return out.result;
}

std::size_t select_best(std::span<const RunResult> candidates) {
  if (candidates.empty()) throw ConfigError("no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (score_of(candidates[i]) > score_of(candidates[best])) best = i;
  return best;
}

Unit sample_layers(std::span<const std::size_t> layers, std::size_t count, std::uint64_t seed) {
  if (count == 0 || count > layers.size()) {
    throw ConfigError("cannot sample " + std::to_string(count) + " of " + std::to_string(layers.size()) + " layers");
  }
  Unit pool(layers.begin(), layers.end());
  Rng rng(seed, kRandomLayersStream);
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---------------------------------------------------------------------------

SearchSession::SearchSession(const model::SequentialModel& structure, UnitTrainer& trainer, SessionOptions options)
    : trainer_(trainer), options_(options) {
  if (!structure.has_head()) throw ConfigError("search session needs a model with a classifier head");
  for (std::size_t i = 0; i < structure.size(); ++i) names_.push_back(structure.layer(i).name());
  backbone_ = structure.backbone_kinds();
  weighted_ = structure.weighted_backbone();
  if (weighted_.empty()) throw ConfigError("backbone has no weighted layers");
}

void SearchSession::label(RunResult& r, const std::string& strategy, const Unit& unit) const {
  r.strategy = strategy;
  r.unit = unit;
  r.unit_names.clear();
  for (auto i : unit) r.unit_names.push_back(names_.at(i));
}

std::vector<RunResult> SearchSession::sweep(const std::string& strategy, const std::vector<Unit>& units) {
  std::vector<RunResult> results(units.size());
  const long n = static_cast<long>(units.size());
  if (trainer_.concurrent()) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) {
      try {
        results[static_cast<std::size_t>(i)] = trainer_.run(units[static_cast<std::size_t>(i)], Phase::Search);
      } catch (...) {
#pragma omp critical(bwft_sweep_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (long i = 0; i < n; ++i)
      results[static_cast<std::size_t>(i)] = trainer_.run(units[static_cast<std::size_t>(i)], Phase::Search);
  }
  for (std::size_t i = 0; i < units.size(); ++i) label(results[i], strategy, units[i]);
  return results;
}

RunResult SearchSession::final_run(const std::string& strategy, const Unit& unit) {
  RunResult r = trainer_.run(unit, Phase::Final);
  label(r, strategy, unit);
  return r;
}

SearchResult SearchSession::search(const std::string& strategy, const std::vector<Unit>& units) {
  SearchResult s;
  s.strategy = strategy;
  s.candidates = sweep(strategy, units);
  s.selected = select_best(s.candidates);
  s.selected_unit = units[s.selected];
  s.final_run = final_run(strategy, s.selected_unit);
  s.final_run.search_accuracy = s.candidates[s.selected].search_accuracy;
  return s;
}

SearchResult SearchSession::layerwise() {
  std::vector<Unit> units;
  for (auto i : weighted_) units.push_back({i});
  if (!layer_sweep_) {
    layer_sweep_ = sweep(tag::kLayerwise, units);
    ++sweeps_;
  }
  SearchResult s;
  s.strategy = tag::kLayerwise;
  s.candidates = *layer_sweep_;
  s.selected = select_best(s.candidates);
  s.selected_unit = units[s.selected];
  s.final_run = final_run(tag::kLayerwise, s.selected_unit);
  s.final_run.search_accuracy = s.candidates[s.selected].search_accuracy;
  return s;
}

SearchResult SearchSession::blockwise() {
  return blockwise(seg::partition_by_nonweighting(backbone_, options_.partition));
}

SearchResult SearchSession::blockwise(const seg::Partition& partition) {
  std::vector<Unit> units;
  for (const auto& b : partition.blocks) units.push_back(b.layer_indices);
  return search(tag::kBlockwise, units);
}

SearchResult SearchSession::sliding_window() { return sliding_window(options_.window); }

SearchResult SearchSession::sliding_window(std::size_t width) {
  std::vector<Unit> units;
  for (const auto& w : seg::sliding_windows(backbone_, width)) units.push_back(w.layer_indices);
  return search(tag::kSlidingWindow, units);
}

SearchResult SearchSession::topk(std::size_t k) {
  if (k == 0 || k > weighted_.size()) {
    throw ConfigError("top-k needs k in [1, " + std::to_string(weighted_.size()) + "], got " + std::to_string(k));
  }
  if (!layer_sweep_) {
    std::vector<Unit> units;
    for (auto i : weighted_) units.push_back({i});
    layer_sweep_ = sweep(tag::kLayerwise, units);
    ++sweeps_;
  }
  std::vector<seg::LayerScore> scores;
  for (const auto& r : *layer_sweep_) scores.push_back({r.unit.front(), score_of(r)});
  const std::string strategy = k == 3 ? tag::kTop3 : k == 5 ? tag::kTop5 : "bwt" + std::to_string(k);

  SearchResult s;
  s.strategy = strategy;
  s.candidates = *layer_sweep_;
  s.selected_unit = seg::rank_layers(scores, k);
  s.selected = 0;
  s.final_run = final_run(strategy, s.selected_unit);
  return s;
}

RunResult SearchSession::baseline_classifier_only() { return final_run(tag::kBaselineClassifier, {}); }

RunResult SearchSession::baseline_all_layers() { return final_run(tag::kBaselineAll, weighted_); }

RunResult SearchSession::random_layers(std::size_t count, std::uint64_t seed) {
  const Unit unit = sample_layers(weighted_, count, seed);
  const std::string strategy = count == 3 ? tag::kRandom3 : "random" + std::to_string(count);
  return final_run(strategy, unit);
}

}  // namespace bwft::finetune
