// bwft: runs the fine-tuning experiment matrix and its helper commands.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bwft/dataset.hpp"
#include "bwft/error.hpp"
#include "bwft/experiment.hpp"
#include "bwft/model.hpp"
#include "bwft/rng.hpp"
#include "bwft/segmentation.hpp"

namespace fs = std::filesystem;
using namespace bwft;

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_or_print(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out);
  f << text;
}

model::SequentialModel with_head(const std::string& name, std::size_t image_size, std::size_t classes) {
  auto m = model::build_backbone(model::zoo_entry(name), Shape{image_size, image_size, 3}, 0);
  Rng rng(0, 1);
  model::attach_classifier(m, classes, rng);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise fine-tuning experiments"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment plan");
  std::string plan_file, out_dir;
  std::vector<std::string> models, strategies;
  std::size_t repeats = 0, epochs = 0;
  std::uint64_t seed = 0;
  bool full = false, delimit_bn = false, timing = false, population = false, sample = false;
  std::vector<std::string> sets;
  run->add_option("--plan", plan_file, "Plan file of key=value lines")->check(CLI::ExistingFile);
  run->add_option("--model", models, "Zoo model (repeatable, or 'all')");
  run->add_option("--strategy", strategies, "Strategy tag (repeatable, or 'all')");
  auto* repeats_opt = run->add_option("--repeats", repeats, "Repeats per cell");
  auto* seed_opt = run->add_option("--seed", seed, "Base run seed");
  auto* epochs_opt = run->add_option("--epochs", epochs, "Fine-tuning epochs");
  run->add_flag("--paper-protocol", full, "Train for the full 50 epochs");
  run->add_flag("--delimit-batchnorm", delimit_bn, "Let BatchNorm layers split blocks");
  run->add_flag("--timing", timing, "Record wall-clock times in result rows");
  run->add_flag("--population-variance", population, "Divide by n in the summary");
  run->add_flag("--sample-variance", sample, "Divide by n-1 in the summary (default)");
  run->add_option("--set", sets, "Extra plan line key=value (repeatable)");
  run->add_option("--out", out_dir, "Output directory");

  // summarize
  auto* summarize = app.add_subcommand("summarize", "Aggregate result CSVs into the summary table");
  std::string sum_dir, sum_out;
  bool sum_population = false, sum_sample = false;
  summarize->add_option("dir", sum_dir, "Result directory")->required();
  summarize->add_flag("--population-variance", sum_population, "Divide by n");
  summarize->add_flag("--sample-variance", sum_sample, "Divide by n-1 (default)");
  summarize->add_option("-o,--output", sum_out, "Write the CSV here instead of stdout");

  // param-profile
  auto* profile = app.add_subcommand("param-profile", "Per-layer parameter counts of a zoo model");
  std::string prof_model, prof_out;
  std::size_t prof_size = 32, prof_classes = 5;
  profile->add_option("model", prof_model, "Zoo model")->required();
  profile->add_option("--image-size", prof_size, "Input height and width");
  profile->add_option("--classes", prof_classes, "Classifier outputs");
  profile->add_option("-o,--output", prof_out, "Write the CSV here instead of stdout");

  // partition
  auto* part = app.add_subcommand("partition", "Print the blocks and windows of a zoo model");
  std::string part_model;
  std::size_t part_window = 3;
  bool part_bn = false;
  part->add_option("model", part_model, "Zoo model")->required();
  part->add_option("--window", part_window, "Sliding window width");
  part->add_flag("--delimit-batchnorm", part_bn, "Let BatchNorm layers split blocks");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic texture dataset");
  std::string gen_spec, gen_out;
  std::vector<std::string> gen_sets;
  gen->add_option("--spec", gen_spec, "Task spec file of key=value lines")->check(CLI::ExistingFile);
  gen->add_option("--set", gen_sets, "Task field key=value (repeatable)");
  gen->add_option("-o,--output", gen_out, "Dataset file")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "Render a curve or profile CSV as SVG");
  std::string plot_in, plot_out, plot_title;
  plot->add_option("csv", plot_in, "Curve or param-profile CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--output", plot_out, "SVG file")->required();
  plot->add_option("--title", plot_title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      experiment::ExperimentPlan plan;
      if (!plan_file.empty()) plan = experiment::load_plan(plan_file);
      std::string extra;
      for (const auto& m : models) extra += "model=" + m + "\n";
      for (const auto& s : strategies) extra += "strategy=" + s + "\n";
      for (const auto& s : sets) extra += s + "\n";
      experiment::apply_plan_text(plan, extra);
      if (*repeats_opt) plan.repeats = repeats;
      if (*seed_opt) plan.seed = seed;
      if (*epochs_opt) plan.train.epochs = epochs;
      if (full) plan.train.epochs = training::kFullEpochs;
      if (delimit_bn) plan.delimit_batchnorm = true;
      if (timing) plan.timing = true;
      if (population && sample) throw ConfigError("--population-variance and --sample-variance conflict");
      if (population) plan.variance = experiment::Variance::Population;
      if (sample) plan.variance = experiment::Variance::Sample;
      if (!out_dir.empty()) plan.out = out_dir;

      const auto outcome = experiment::run(plan, std::cerr);
      std::cout << experiment::format_summary(outcome.summary);
      if (outcome.failed_candidates)
        std::cerr << outcome.failed_candidates << " candidate run(s) failed and scored 0\n";
      std::cerr << "wrote " << outcome.artifacts.size() << " artifacts under " << plan.out.string() << '\n';
    } else if (*summarize) {
      if (sum_population && sum_sample) throw ConfigError("--population-variance and --sample-variance conflict");
      const auto convention = sum_population ? experiment::Variance::Population : experiment::Variance::Sample;
      const auto s = experiment::summarize(sum_dir, convention);
      write_or_print(experiment::format_summary(s), sum_out);
      if (s.best_mean) std::cerr << "best mean: " << s.strategies[*s.best_mean] << '\n';
      if (s.best_variance) std::cerr << "lowest variance: " << s.strategies[*s.best_variance] << '\n';
    } else if (*profile) {
      write_or_print(experiment::param_profile_csv(with_head(prof_model, prof_size, prof_classes)), prof_out);
    } else if (*part) {
      const auto m = with_head(part_model, 32, 5);
      seg::PartitionOptions opts;
      opts.delimit_batchnorm = part_bn;
      std::cout << seg::dump_partition(m, seg::partition_by_nonweighting(m, opts));
      const auto windows = seg::sliding_windows(m, part_window);
      std::cout << seg::dump_windows(m, windows);
    } else if (*gen) {
      data::SyntheticTaskSpec spec;
      if (!gen_spec.empty()) spec = data::parse_task_spec(read_text(gen_spec));
      for (const auto& kv : gen_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        data::set_task_field(spec, kv.substr(0, eq), kv.substr(eq + 1));
      }
      data::validate_task_spec(spec);
      const auto ds = data::generate(spec);
      data::save(ds, gen_out);
      std::cerr << "wrote " << ds.size() << " images to " << gen_out << '\n';
    } else if (*plot) {
      const std::string title = plot_title.empty() ? fs::path(plot_in).stem().string() : plot_title;
      write_or_print(experiment::render_svg(read_text(plot_in), title), plot_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kConfigError;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kOk;
}
