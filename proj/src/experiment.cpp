#include "bwft/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "bwft/error.hpp"
#include "bwft/rng.hpp"
#include "bwft/segmentation.hpp"

namespace bwft::experiment {

namespace fs = std::filesystem;
using finetune::RunResult;
using finetune::SearchResult;

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{
      finetune::tag::kBaselineClassifier, finetune::tag::kBaselineAll, finetune::tag::kLayerwise,
      finetune::tag::kBlockwise,          finetune::tag::kTop3,        finetune::tag::kTop5,
      finetune::tag::kSlidingWindow,      finetune::tag::kRandom3};
  return names;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v{};
  is >> v;
  if (!is || !is.eof()) throw ConfigError(key + ": bad value '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void add_names(std::vector<std::string>& list, const std::string& value, const std::vector<std::string>& all) {
  for (auto& item : split(value, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "all") {
      for (const auto& n : all)
        if (std::find(list.begin(), list.end(), n) == list.end()) list.push_back(n);
    } else if (std::find(list.begin(), list.end(), item) == list.end()) {
      list.push_back(item);
    }
  }
}

void apply_key(ExperimentPlan& plan, const std::string& key, const std::string& value) {
  if (key == "model") return add_names(plan.models, value, model::zoo_names());
  if (key == "strategy") return add_names(plan.strategies, value, strategy_names());
  if (key == "repeats") { plan.repeats = parse_number<std::size_t>(key, value); return; }
  if (key == "seed") { plan.seed = parse_number<std::uint64_t>(key, value); return; }
  if (key == "epochs") { plan.train.epochs = parse_number<std::size_t>(key, value); return; }
  if (key == "learning_rate") { plan.train.learning_rate = parse_number<double>(key, value); return; }
  if (key == "batch_size") { plan.train.batch_size = parse_number<std::size_t>(key, value); return; }
  if (key == "paper_protocol") {
    if (parse_bool(key, value)) plan.train.epochs = training::kFullEpochs;
    return;
  }
  if (key == "plateau_factor") { plan.train.plateau.factor = parse_number<double>(key, value); return; }
  if (key == "plateau_patience") { plan.train.plateau.patience = parse_number<std::size_t>(key, value); return; }
  if (key == "plateau_min_lr") { plan.train.plateau.min_lr = parse_number<double>(key, value); return; }
  if (key == "search_fraction") { plan.split.search_fraction = parse_number<double>(key, value); return; }
  if (key == "test_fraction") { plan.split.test_fraction = parse_number<double>(key, value); return; }
  if (key == "train_fraction") { plan.split.train_fraction = parse_number<double>(key, value); return; }
  if (key == "delimit_batchnorm") { plan.delimit_batchnorm = parse_bool(key, value); return; }
  if (key == "window") { plan.window = parse_number<std::size_t>(key, value); return; }
  if (key == "random_count") { plan.random_count = parse_number<std::size_t>(key, value); return; }
  if (key == "timing") { plan.timing = parse_bool(key, value); return; }
  if (key == "out") { plan.out = value; return; }
  if (key == "variance") {
    if (value == "sample") plan.variance = Variance::Sample;
    else if (value == "population") plan.variance = Variance::Population;
    else throw ConfigError("variance: expected sample or population, got '" + value + "'");
    return;
  }
  if (key.starts_with("pretrain.")) {
    const std::string k = key.substr(9);
    auto& t = plan.pretrain.train;
    if (k == "epochs") t.epochs = parse_number<std::size_t>(key, value);
    else if (k == "learning_rate") t.learning_rate = parse_number<double>(key, value);
    else if (k == "batch_size") t.batch_size = parse_number<std::size_t>(key, value);
    else if (k == "seed") t.seed = parse_number<std::uint64_t>(key, value);
    else if (k == "gate") plan.pretrain.accuracy_gate = parse_number<double>(key, value);
    else throw ConfigError("unknown plan key '" + key + "'");
    return;
  }
  const bool source = key.starts_with("source."), target = key.starts_with("target."), task = key.starts_with("task.");
  if (source || target || task) {
    const std::string k = key.substr(key.find('.') + 1);
    if ((target || task) && k == "seed") throw ConfigError(key + ": the target sample seed is derived from the run seed");
    if (source || task) data::set_task_field(plan.source, k, value);
    if (target || task) data::set_task_field(plan.target, k, value);
    return;
  }
  throw ConfigError("unknown plan key '" + key + "'");
}

}  // namespace

void apply_plan_text(ExperimentPlan& plan, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("plan line " + std::to_string(lineno) + ": expected key=value");
    try {
      apply_key(plan, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("plan line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

ExperimentPlan load_plan(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read plan file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentPlan plan;
  apply_plan_text(plan, ss.str());
  return plan;
}

void ExperimentPlan::validate() const {
  if (models.empty()) throw ConfigError("plan names no model");
  if (strategies.empty()) throw ConfigError("plan names no strategy");
  for (const auto& m : models) model::zoo_entry(m);
  for (const auto& s : strategies)
    if (std::find(strategy_names().begin(), strategy_names().end(), s) == strategy_names().end())
      throw ConfigError("unknown strategy '" + s + "'");
  if (repeats == 0) throw ConfigError("repeats must be positive");
  if (window == 0) throw ConfigError("window must be positive");
  if (random_count == 0) throw ConfigError("random_count must be positive");
  if (out.empty()) throw ConfigError("output directory is empty");
  train.validate();
  pretrain.train.validate();
  data::validate_task_spec(source);
  data::validate_task_spec(target);
  if (source.image_size != target.image_size) throw ConfigError("source and target image sizes differ");
  if (source.num_classes < 2 || target.num_classes < 2) throw ConfigError("tasks need at least two classes");
}

std::string ExperimentPlan::canonical() const {
  std::ostringstream os;
  os.precision(9);
  for (const auto& m : models) os << "model=" << m << '\n';
  for (const auto& s : strategy_names())
    if (std::find(strategies.begin(), strategies.end(), s) != strategies.end()) os << "strategy=" << s << '\n';
  os << "repeats=" << repeats << "\nseed=" << seed << "\nepochs=" << train.epochs
     << "\nlearning_rate=" << train.learning_rate << "\nbatch_size=" << train.batch_size
     << "\nplateau_factor=" << train.plateau.factor << "\nplateau_patience=" << train.plateau.patience
     << "\nplateau_min_lr=" << train.plateau.min_lr << "\nsearch_fraction=" << split.search_fraction
     << "\ntest_fraction=" << split.test_fraction << "\ntrain_fraction=" << split.train_fraction
     << "\ndelimit_batchnorm=" << (delimit_batchnorm ? "true" : "false") << "\nwindow=" << window
     << "\nrandom_count=" << random_count << "\nvariance=" << (variance == Variance::Sample ? "sample" : "population")
     << "\ntiming=" << (timing ? "true" : "false") << "\npretrain.epochs=" << pretrain.train.epochs
     << "\npretrain.learning_rate=" << pretrain.train.learning_rate
     << "\npretrain.batch_size=" << pretrain.train.batch_size << "\npretrain.seed=" << pretrain.train.seed
     << "\npretrain.gate=" << pretrain.accuracy_gate << '\n';
  for (const auto& [prefix, spec] : {std::pair{"source.", &source}, std::pair{"target.", &target}}) {
    std::istringstream lines(data::format_task_spec(*spec));
    std::string line;
    while (std::getline(lines, line)) {
      if (std::string_view(prefix) == "target." && line.starts_with("seed=")) continue;
      os << prefix << line << '\n';
    }
  }
  return os.str();
}

std::uint64_t target_seed(std::uint64_t run_seed) { return mix64(run_seed ^ 0x7461726765745f73ULL); }

// ---------------------------------------------------------------------------

std::string csv_header() { return "strategy,unit,search_acc,final_acc,seed,epochs,wall_ms"; }

std::string csv_row(const RunResult& run, bool timing) {
  std::string unit;
  for (std::size_t i = 0; i < run.unit_names.size(); ++i) unit += (i ? ";" : "") + run.unit_names[i];
  std::ostringstream os;
  os << run.strategy << ',' << unit << ',' << (run.search_accuracy ? fixed6(*run.search_accuracy) : "") << ','
     << (run.final_accuracy ? fixed6(*run.final_accuracy) : "") << ',' << run.seed << ',' << run.epochs_run << ','
     << (timing ? std::llround(run.wall_ms) : 0);
  return os.str();
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double variance_of(const std::vector<double>& values, Variance convention) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double n = static_cast<double>(values.size());
  return ss / (convention == Variance::Sample ? n - 1.0 : n);
}

Summary summarize(const fs::path& dir, Variance convention) {
  const fs::path runs = dir / "runs";
  if (!fs::is_directory(runs)) throw ConfigError("no runs/ directory under " + dir.string());

  // (model, strategy) -> final accuracies of every row.
  std::map<std::string, std::map<std::string, std::vector<double>>> found;
  std::vector<fs::path> files;
  for (const auto& m : fs::directory_iterator(runs)) {
    if (!m.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(m.path()))
      if (f.is_regular_file() && f.path().extension() == ".csv") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no result CSVs under " + runs.string());

  for (const auto& file : files) {
    const std::string model_name = file.parent_path().filename().string();
    std::ifstream in(file);
    std::string line;
    if (!std::getline(in, line) || trim(line) != csv_header())
      throw FormatError(file.string() + ": missing or unexpected header");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto cols = split(trim(line), ',');
      const std::string where = file.string() + ":" + std::to_string(lineno);
      if (cols.size() != 7) throw FormatError(where + ": expected 7 columns, got " + std::to_string(cols.size()));
      if (cols[3].empty()) throw FormatError(where + ": final_acc is empty");
      double acc;
      try {
        std::size_t used = 0;
        acc = std::stod(cols[3], &used);
        if (used != cols[3].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError(where + ": bad final_acc '" + cols[3] + "'");
      }
      found[model_name][cols[0]].push_back(acc);
    }
  }

  Summary s;
  s.convention = convention;
  std::set<std::string> strategies;
  for (const auto& [m, per] : found) {
    s.models.push_back(m);
    for (const auto& [st, _] : per) strategies.insert(st);
  }
  for (const auto& st : strategy_names())
    if (strategies.erase(st)) s.strategies.push_back(st);
  s.strategies.insert(s.strategies.end(), strategies.begin(), strategies.end());

  s.cells.assign(s.models.size(), std::vector<std::optional<double>>(s.strategies.size()));
  for (std::size_t mi = 0; mi < s.models.size(); ++mi)
    for (std::size_t si = 0; si < s.strategies.size(); ++si) {
      const auto& per = found[s.models[mi]];
      if (auto it = per.find(s.strategies[si]); it != per.end()) s.cells[mi][si] = mean_of(it->second);
    }
  for (std::size_t si = 0; si < s.strategies.size(); ++si) {
    std::vector<double> column;
    for (const auto& row : s.cells)
      if (row[si]) column.push_back(*row[si]);
    s.mean.push_back(mean_of(column));
    s.variance.push_back(variance_of(column, convention));
  }
  for (std::size_t si = 0; si < s.strategies.size(); ++si) {
    if (!s.best_mean || s.mean[si] > s.mean[*s.best_mean]) s.best_mean = si;
    if (!s.best_variance || s.variance[si] < s.variance[*s.best_variance]) s.best_variance = si;
  }
  return s;
}

std::string format_summary(const Summary& s) {
  std::ostringstream os;
  os << "model";
  for (const auto& st : s.strategies) os << ',' << st;
  os << '\n';
  for (std::size_t mi = 0; mi < s.models.size(); ++mi) {
    os << s.models[mi];
    for (const auto& cell : s.cells[mi]) os << ',' << (cell ? fixed6(*cell) : "");
    os << '\n';
  }
  os << "Variance";
  for (double v : s.variance) os << ',' << fixed6(v);
  os << "\nMean";
  for (double v : s.mean) os << ',' << fixed6(v);
  os << '\n';
  return os.str();
}

std::string param_profile_csv(const model::SequentialModel& model) {
  const auto counts = model::count_params(model);
  std::ostringstream os;
  os << "ordinal,name,kind,weighted,count\n";
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& layer = model.layer(i);
    os << i << ',' << layer.name() << ',' << nn::kind_name(layer.spec().kind) << ','
       << (layer.weighted() ? "true" : "false") << ',' << counts[i].count << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

ArtifactWriter::ArtifactWriter(fs::path root) : root_(std::move(root)) {}

void ArtifactWriter::write(const std::string& relative, const std::string& content) {
  write(relative, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(content.data()), content.size()));
}

void ArtifactWriter::write(const std::string& relative, std::span<const std::uint8_t> content) {
  const auto digest = model::hex(model::sha256(content));
  std::lock_guard lock(mutex_);
  const fs::path path = root_ / relative;
  fs::create_directories(path.parent_path());
  io::write_file_atomic(path.string(), content);
  digests_[relative] = digest;
}

void ArtifactWriter::write_manifest(const std::string& header) {
  std::ostringstream os;
  os << header;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [rel, digest] : digests_) os << "artifact." << rel << '=' << digest << '\n';
  }
  const std::string text = os.str();
  std::lock_guard lock(mutex_);
  io::write_file_atomic((root_ / "manifest.txt").string(),
                        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::string> ArtifactWriter::artifacts() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [rel, _] : digests_) out.push_back(rel);
  return out;
}

RunFailure::RunFailure(const std::string& model, const std::string& strategy, const std::string& unit,
                       const std::string& what)
    : Error("run failed (model=" + model + ", strategy=" + strategy + ", unit=" + unit + "): " + what) {}

// ---------------------------------------------------------------------------

namespace {

/// Clears the artifacts of a previous run so no orphans survive; refuses to
/// touch a directory holding anything else.
void prepare_output(const fs::path& out) {
  if (!fs::exists(out)) {
    fs::create_directories(out);
    return;
  }
  if (!fs::is_directory(out)) throw ConfigError(out.string() + " is not a directory");
  const fs::path manifest = out / "manifest.txt";
  std::set<fs::path> recorded;
  if (fs::exists(manifest)) {
    recorded.insert(manifest.lexically_normal());
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.starts_with("artifact.")) continue;
      const auto eq = line.find('=');
      const std::string rel = line.substr(9, eq - 9);
      if (rel.find("..") != std::string::npos) throw ConfigError("manifest entry escapes the output directory: " + rel);
      recorded.insert((out / rel).lexically_normal());
    }
  }
  // Check everything before deleting anything.
  std::vector<fs::path> dirs, files;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    if (e.is_directory()) {
      dirs.push_back(e.path());
    } else if (recorded.count(e.path().lexically_normal())) {
      files.push_back(e.path());
    } else {
      throw ConfigError("output directory " + out.string() + " holds " + e.path().string() +
                        ", which no previous run recorded; refusing to mix results");
    }
  }
  for (const auto& f : files) fs::remove(f);
  std::sort(dirs.rbegin(), dirs.rend());
  for (const auto& d : dirs)
    if (fs::is_empty(d)) fs::remove(d);
}

std::string unit_label(const RunResult& r) {
  std::string s;
  for (std::size_t i = 0; i < r.unit_names.size(); ++i) s += (i ? ";" : "") + r.unit_names[i];
  return s.empty() ? "-" : s;
}

struct CellRecord {
  std::vector<RunResult> finals;                   // one per repeat
  std::vector<std::vector<RunResult>> candidates;  // per repeat, empty for baselines
};

std::string curve_csv(const CellRecord& cell) {
  std::ostringstream os;
  os << "ordinal,unit,repeat,accuracy\n";
  const auto& reps = cell.candidates;
  for (std::size_t r = 0; r < reps.size(); ++r)
    for (std::size_t i = 0; i < reps[r].size(); ++i)
      os << i << ',' << unit_label(reps[r][i]) << ',' << r << ','
         << fixed6(reps[r][i].search_accuracy.value_or(0.0)) << '\n';
  if (reps.size() > 1) {
    for (std::size_t i = 0; i < reps.front().size(); ++i) {
      std::vector<double> acc;
      for (const auto& rep : reps) acc.push_back(rep[i].search_accuracy.value_or(0.0));
      os << i << ',' << unit_label(reps.front()[i]) << ",mean," << fixed6(mean_of(acc)) << '\n';
    }
  }
  return os.str();
}

std::string trace_csv(const CellRecord& cell) {
  std::ostringstream os;
  os << "repeat,epoch,accuracy,learning_rate\n";
  for (std::size_t r = 0; r < cell.finals.size(); ++r) {
    const auto& f = cell.finals[r];
    for (std::size_t e = 0; e < f.accuracy_trace.size(); ++e) {
      char lr[32];
      std::snprintf(lr, sizeof lr, "%.9g", e < f.lr_trace.size() ? f.lr_trace[e] : 0.0);
      os << r << ',' << e + 1 << ',' << fixed6(f.accuracy_trace[e]) << ',' << lr << '\n';
    }
  }
  return os.str();
}

bool has_candidates(const std::string& strategy) {
  return strategy == finetune::tag::kLayerwise || strategy == finetune::tag::kBlockwise ||
         strategy == finetune::tag::kTop3 || strategy == finetune::tag::kTop5 ||
         strategy == finetune::tag::kSlidingWindow;
}

}  // namespace

RunOutcome run(const ExperimentPlan& plan, std::ostream& log) {
  plan.validate();
  prepare_output(plan.out);
  ArtifactWriter writer(plan.out);
  RunOutcome outcome;

  const Shape input_shape{plan.source.image_size, plan.source.image_size, 3};
  log << "generating source task (" << plan.source.num_classes * plan.source.samples_per_class << " images)\n";
  const auto source = data::generate(plan.source);

  std::ostringstream header;
  header << "tool=bwft\nconfig_digest=" << model::hex(model::sha256(plan.canonical())) << '\n';
  {
    std::istringstream lines(plan.canonical());
    std::string line;
    while (std::getline(lines, line)) header << "plan." << line << '\n';
  }
  header << "run_seeds=";
  for (std::size_t r = 0; r < plan.repeats; ++r) header << (r ? "," : "") << plan.seed + r;
  header << '\n';

  std::vector<std::string> strategies;
  for (const auto& s : strategy_names())
    if (std::find(plan.strategies.begin(), plan.strategies.end(), s) != plan.strategies.end()) strategies.push_back(s);

  for (const auto& model_name : plan.models) {
    const auto entry = model::zoo_entry(model_name);
    log << model_name << ": pre-training on the source task\n";
    std::optional<model::PretrainResult> pre;
    try {
      auto backbone = model::build_backbone(entry, input_shape, plan.pretrain.train.seed);
      pre = model::pretrain(std::move(backbone), source, plan.pretrain);
    } catch (const Error& e) {
      throw RunFailure(model_name, "pretrain", "-", e.what());
    }
    log << model_name << ": source accuracy " << fixed6(pre->source_accuracy) << '\n';
    writer.write("snapshots/" + model_name + ".snap", pre->snapshot.serialize());
    writer.write("params/" + model_name + ".csv", param_profile_csv(pre->source_model));
    header << "pretrain." << model_name << ".source_accuracy=" << fixed6(pre->source_accuracy) << '\n';
    header << "pretrain." << model_name << ".snapshot_digest=" << pre->snapshot.content_digest() << '\n';

    const finetune::PretrainedBackbone backbone{entry, input_shape, pre->snapshot};
    const auto structure = backbone.structure(plan.target.num_classes);
    const std::size_t weighted = structure.weighted_backbone().size();

    std::map<std::string, CellRecord> cells;
    for (std::size_t r = 0; r < plan.repeats; ++r) {
      const std::uint64_t run_seed = plan.seed + r;
      auto target_spec = plan.target;
      target_spec.seed = target_seed(run_seed);
      const auto target = data::generate(target_spec);
      auto split_spec = plan.split;
      split_spec.seed = run_seed;
      const auto splits = finetune::TaskSplits::make(target, split_spec);
      auto cfg = plan.train;
      cfg.seed = run_seed;

      finetune::FineTuneTrainer trainer(backbone, splits, cfg);
      finetune::SessionOptions options;
      options.partition.delimit_batchnorm = plan.delimit_batchnorm;
      options.window = plan.window;
      finetune::SearchSession session(structure, trainer, options);

      for (const auto& strategy : strategies) {
        const auto started = std::chrono::steady_clock::now();
        RunResult final_run;
        std::vector<RunResult> candidates;
        try {
          namespace tag = finetune::tag;
          if (strategy == tag::kBaselineClassifier) {
            final_run = session.baseline_classifier_only();
          } else if (strategy == tag::kBaselineAll) {
            final_run = session.baseline_all_layers();
          } else if (strategy == tag::kRandom3) {
            final_run = session.random_layers(std::min(plan.random_count, weighted), run_seed);
          } else {
            SearchResult sr;
            if (strategy == tag::kLayerwise) sr = session.layerwise();
            else if (strategy == tag::kBlockwise) sr = session.blockwise();
            else if (strategy == tag::kSlidingWindow) sr = session.sliding_window(std::min(plan.window, weighted));
            else if (strategy == tag::kTop3) sr = session.topk(std::min<std::size_t>(3, weighted));
            else sr = session.topk(std::min<std::size_t>(5, weighted));
            final_run = std::move(sr.final_run);
            candidates = std::move(sr.candidates);
          }
        } catch (const Error& e) {
          throw RunFailure(model_name, strategy, "-", e.what());
        }
        final_run.strategy = strategy;
        for (const auto& c : candidates)
          if (c.failed) {
            ++outcome.failed_candidates;
            log << "warning: " << model_name << '/' << strategy << " unit " << unit_label(c)
                << " failed: " << c.failure << '\n';
          }
        if (final_run.failed) {
          ++outcome.failed_candidates;
          log << "warning: " << model_name << '/' << strategy << " final run on " << unit_label(final_run)
              << " failed: " << final_run.failure << '\n';
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        log << model_name << " seed " << run_seed << ' ' << strategy << ": unit " << unit_label(final_run)
            << ", final " << fixed6(final_run.final_accuracy.value_or(0.0));
        if (plan.timing) log << " (" << std::llround(ms) << " ms)";
        log << '\n';
        auto& cell = cells[strategy];
        cell.finals.push_back(std::move(final_run));
        if (has_candidates(strategy)) cell.candidates.push_back(std::move(candidates));
      }
    }

    for (const auto& [strategy, cell] : cells) {
      std::string rows = csv_header() + "\n";
      for (const auto& f : cell.finals) rows += csv_row(f, plan.timing) + "\n";
      writer.write("runs/" + model_name + "/" + strategy + ".csv", rows);
      writer.write("traces/" + model_name + "/" + strategy + ".csv", trace_csv(cell));
      if (!cell.candidates.empty()) writer.write("curves/" + model_name + "/" + strategy + ".csv", curve_csv(cell));
    }
  }

  outcome.summary = summarize(plan.out, plan.variance);
  writer.write("summary.csv", format_summary(outcome.summary));
  writer.write_manifest(header.str());
  outcome.artifacts = writer.artifacts();
  return outcome;
}

// ---------------------------------------------------------------------------

namespace {

struct Chart {
  double width = 640, height = 400, left = 60, right = 20, top = 40, bottom = 90;
  double x0() const { return left; }
  double x1() const { return width - right; }
  double y0() const { return height - bottom; }
  double y1() const { return top; }
};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void frame(std::ostringstream& os, const Chart& c, const std::string& title, double ymax, const std::string& ylabel) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << c.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
     << "</text>\n";
  os << "<line x1=\"" << c.x0() << "\" y1=\"" << c.y0() << "\" x2=\"" << c.x1() << "\" y2=\"" << c.y0()
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << c.x0() << "\" y1=\"" << c.y0() << "\" x2=\"" << c.x0() << "\" y2=\"" << c.y1()
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    const double y = c.y0() - (c.y0() - c.y1()) * k / 4.0;
    os << "<text x=\"" << c.x0() - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
       << (ymax > 10 ? std::to_string(std::llround(v)) : num(v)) << "</text>\n";
  }
  os << "<text x=\"14\" y=\"" << (c.y0() + c.y1()) / 2 << "\" transform=\"rotate(-90 14 " << (c.y0() + c.y1()) / 2
     << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
}

void x_labels(std::ostringstream& os, const Chart& c, const std::vector<std::string>& labels,
              const std::vector<double>& xs) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    os << "<text x=\"" << num(xs[i]) << "\" y=\"" << c.y0() + 12 << "\" text-anchor=\"end\" transform=\"rotate(-45 "
       << num(xs[i]) << ' ' << c.y0() + 12 << ")\">" << escape_xml(labels[i]) << "</text>\n";
}

}  // namespace

std::string render_svg(const std::string& csv, const std::string& title) {
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  header = trim(header);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);)
    if (!trim(line).empty()) rows.push_back(split(trim(line), ','));

  Chart c;
  std::ostringstream os;
  if (header == "ordinal,unit,repeat,accuracy") {
    // One polyline per repeat; the mean curve is drawn heavier.
    std::map<std::string, std::vector<std::pair<std::size_t, double>>> series;
    std::map<std::size_t, std::string> labels;
    for (const auto& r : rows) {
      if (r.size() != 4) throw FormatError("curve row with " + std::to_string(r.size()) + " columns");
      const auto ord = static_cast<std::size_t>(std::stoul(r[0]));
      series[r[2]].emplace_back(ord, std::stod(r[3]));
      labels[ord] = r[1];
    }
    if (labels.empty()) throw ConfigError("curve CSV has no rows");
    const std::size_t n = labels.rbegin()->first + 1;
    auto x = [&](std::size_t i) { return n == 1 ? (c.x0() + c.x1()) / 2 : c.x0() + (c.x1() - c.x0()) * i / (n - 1.0); };
    auto y = [&](double a) { return c.y0() - (c.y0() - c.y1()) * a; };
    frame(os, c, title, 1.0, "search accuracy");
    std::vector<std::string> names;
    std::vector<double> xs;
    for (const auto& [i, name] : labels) {
      names.push_back(name);
      xs.push_back(x(i));
    }
    x_labels(os, c, names, xs);
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    std::size_t k = 0;
    for (const auto& [rep, pts] : series) {
      const bool mean = rep == "mean";
      os << "<polyline fill=\"none\" stroke=\"" << (mean ? "black" : colors[k++ % 6]) << "\" stroke-width=\""
         << (mean ? 2.5 : 1.2) << "\" points=\"";
      for (const auto& [i, a] : pts) os << num(x(i)) << ',' << num(y(a)) << ' ';
      os << "\"/>\n";
    }
  } else if (header == "ordinal,name,kind,weighted,count") {
    std::vector<std::string> names;
    std::vector<double> counts;
    for (const auto& r : rows) {
      if (r.size() != 5) throw FormatError("profile row with " + std::to_string(r.size()) + " columns");
      names.push_back(r[1]);
      counts.push_back(std::stod(r[4]));
    }
    if (names.empty()) throw ConfigError("profile CSV has no rows");
    const double ymax = std::max(1.0, *std::max_element(counts.begin(), counts.end()));
    frame(os, c, title, ymax, "parameters");
    const double slot = (c.x1() - c.x0()) / static_cast<double>(names.size());
    std::vector<double> xs;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double h = (c.y0() - c.y1()) * counts[i] / ymax;
      os << "<rect x=\"" << num(c.x0() + slot * i + slot * 0.1) << "\" y=\"" << num(c.y0() - h) << "\" width=\""
         << num(slot * 0.8) << "\" height=\"" << num(h) << "\" fill=\"#4a7ebb\"/>\n";
      xs.push_back(c.x0() + slot * (i + 0.5));
    }
    x_labels(os, c, names, xs);
  } else {
    throw ConfigError("cannot plot CSV with header '" + header + "'");
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace bwft::experiment
