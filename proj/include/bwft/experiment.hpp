#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bwft/dataset.hpp"
#include "bwft/error.hpp"
#include "bwft/finetune.hpp"
#include "bwft/model.hpp"
#include "bwft/pretrain.hpp"
#include "bwft/training.hpp"

namespace bwft::experiment {

enum class Variance { Sample, Population };

/// Strategy tags in table order.
const std::vector<std::string>& strategy_names();

/// One experiment matrix: every model crossed with every strategy, repeated
/// `repeats` times with run seeds seed, seed+1, ...
struct ExperimentPlan {
  std::vector<std::string> models;
  std::vector<std::string> strategies;
  std::size_t repeats = 1;
  std::uint64_t seed = 1;

  training::TrainConfig train;
  data::SplitSpec split;
  data::SyntheticTaskSpec source;
  data::SyntheticTaskSpec target;
  model::PretrainConfig pretrain;

  bool delimit_batchnorm = false;
  std::size_t window = 3;
  std::size_t random_count = 3;
  Variance variance = Variance::Sample;
  /// Record wall-clock milliseconds; off by default so result files are
  /// reproducible byte for byte.
  bool timing = false;
  std::filesystem::path out = "results";

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Every setting as key=value lines, in a fixed order.
  std::string canonical() const;
};

/// Applies "key=value" lines to `plan`. `model` and `strategy` are
/// repeatable (and accept comma lists); "source.<k>" and "target.<k>" set
/// task-spec fields, "pretrain.<k>" the source training run.
void apply_plan_text(ExperimentPlan& plan, const std::string& text);
ExperimentPlan load_plan(const std::filesystem::path& path);

/// Seed of the target dataset for a given run seed. Kept apart from the
/// source task's sample seeds.
std::uint64_t target_seed(std::uint64_t run_seed);

/// Result row as written to the per-strategy CSV.
std::string csv_header();
std::string csv_row(const finetune::RunResult& run, bool timing);

struct Summary {
  std::vector<std::string> models;
  std::vector<std::string> strategies;
  /// cells[m][s]: mean final accuracy over the rows found for (model, strategy).
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<double> mean;
  std::vector<double> variance;
  Variance convention = Variance::Sample;
  std::optional<std::size_t> best_mean;
  std::optional<std::size_t> best_variance;
};

/// Reads <dir>/runs/<model>/<strategy>.csv files and aggregates them.
/// Throws ConfigError when no result files exist and FormatError on
/// malformed rows.
Summary summarize(const std::filesystem::path& dir, Variance convention);
std::string format_summary(const Summary& summary);

/// Mean and variance of `values`; variance of a single value is 0.
double mean_of(const std::vector<double>& values);
double variance_of(const std::vector<double>& values, Variance convention);

/// ordinal,name,kind,weighted,count for every layer including the head.
std::string param_profile_csv(const model::SequentialModel& model);

/// Serializes writes into an output directory: every file goes through a
/// temporary and a rename, and its digest is recorded for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root);

  void write(const std::string& relative, const std::string& content);
  void write(const std::string& relative, std::span<const std::uint8_t> content);
  /// Writes manifest.txt: `header` lines followed by artifact.<path>=<sha256>.
  void write_manifest(const std::string& header);
  std::vector<std::string> artifacts() const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> digests_;
};

/// Raised when a run fails outside the candidate sweeps (pre-training gate,
/// unrecoverable numeric error); names the cell that failed.
class RunFailure : public Error {
 public:
  RunFailure(const std::string& model, const std::string& strategy, const std::string& unit, const std::string& what);
};

struct RunOutcome {
  Summary summary;
  std::vector<std::string> artifacts;
  std::size_t failed_candidates = 0;
};

/// Executes the plan and writes runs/, curves/, traces/, params/,
/// snapshots/, summary.csv and manifest.txt under plan.out. Progress goes
/// to `log`.
RunOutcome run(const ExperimentPlan& plan, std::ostream& log);

/// Renders a curve CSV (ordinal,unit,repeat,accuracy) as an SVG line chart
/// or a parameter profile CSV as an SVG bar chart.
std::string render_svg(const std::string& csv, const std::string& title);

}  // namespace bwft::experiment
