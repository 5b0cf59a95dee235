// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status
// is the number of failures.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "bwft/error.hpp"
#include "bwft/experiment.hpp"
#include "bwft/finetune.hpp"
#include "bwft/layer.hpp"
#include "bwft/optim.hpp"
#include "bwft/segmentation.hpp"
#include "support/oracles.hpp"

using namespace bwft;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    out.push_back(cells);
  }
  return out;
}

std::size_t column(const experiment::Summary& s, const std::string& strategy) {
  for (std::size_t i = 0; i < s.strategies.size(); ++i)
    if (s.strategies[i] == strategy) return i;
  throw Error("summary has no column " + strategy);
}

double minutes_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count() / 60.0;
}

experiment::RunOutcome run_plan(const std::string& plan_name, const fs::path& out) {
  auto plan = experiment::load_plan(fs::path(BWFT_TEST_DIR) / "plans" / plan_name);
  plan.out = out;
  return experiment::run(plan, std::cerr);
}

finetune::PretrainedBackbone random_backbone(const std::string& name, std::size_t image, std::uint64_t seed) {
  const auto& entry = model::zoo_entry(name);
  const Shape shape{image, image, 3};
  return {entry, shape, model::Snapshot::capture(model::build_backbone(entry, shape, seed))};
}

// ---------------------------------------------------------------------------

Verdict reference_footer() {
  const auto s = experiment::summarize(fs::path(BWFT_TEST_DIR) / "fixtures/reference_matrix",
                                       experiment::Variance::Sample);
  const std::size_t bw = column(s, "bw");
  const double mean = s.mean[bw], var = s.variance[bw];
  const bool pass = std::abs(mean - 0.851771) <= 1e-6 && std::abs(var - 0.001318) <= 1e-6;
  return {pass, "bw mean " + fmt("%.7f", mean) + " (want 0.851771+-1e-6), variance " + fmt("%.7f", var) +
                    " (want 0.001318+-1e-6)"};
}

Verdict colour_matrix(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const auto outcome = run_plan("color_shift.plan", work / "colour");
  const double minutes = minutes_since(start);
  const auto& s = outcome.summary;
  const std::size_t b1 = column(s, "baseline1"), b2 = column(s, "baseline2"), bw = column(s, "bw");
  const bool a = s.mean[bw] >= s.mean[b1] + 0.05;
  const bool b = s.variance[bw] <= s.variance[b1];
  const bool c = s.mean[bw] >= s.mean[b2] - 0.02;
  const bool t = minutes <= 30.0;
  std::string d = "means b1 " + fmt("%.4f", s.mean[b1]) + " b2 " + fmt("%.4f", s.mean[b2]) + " bw " +
                  fmt("%.4f", s.mean[bw]) + "; variances b1 " + fmt("%.6f", s.variance[b1]) + " bw " +
                  fmt("%.6f", s.variance[bw]) + "; " + fmt("%.1f", minutes) + " min;";
  d += a ? "" : " bw<b1+0.05";
  d += b ? "" : " var(bw)>var(b1)";
  d += c ? "" : " bw<b2-0.02";
  d += t ? "" : " over 30 min";
  return {a && b && c && t, d};
}

Verdict frequency_plant(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  run_plan("frequency_shift.plan", work / "frequency");
  const double minutes = minutes_since(start);
  const auto runs = work / "frequency/runs/mini-vgg";
  const auto bw = csv_rows(runs / "bw.csv"), lw = csv_rows(runs / "lw.csv");
  // every conv of mini-vgg is its own block, so the planted block is {conv4}
  auto in_block = [](const std::string& unit) {
    std::stringstream ss(unit);
    for (std::string n; std::getline(ss, n, ';');)
      if (n == "conv4") return true;
    return false;
  };
  std::size_t bw_hits = 0, lw_hits = 0;
  for (const auto& r : bw) bw_hits += in_block(r.at(1));
  for (const auto& r : lw) lw_hits += in_block(r.at(1));
  const bool pass = bw.size() == 10 && lw.size() == 10 && bw_hits >= 8 && lw_hits >= 7 && minutes <= 10.0;
  return {pass, "bw block holds conv4 in " + std::to_string(bw_hits) + "/" + std::to_string(bw.size()) +
                    " seeds (want >=8), lw top-1 in it " + std::to_string(lw_hits) + "/" +
                    std::to_string(lw.size()) + " (want >=7), " + fmt("%.1f", minutes) + " min"};
}

Verdict gradients() {
  struct Case {
    nn::LayerKind kind;
    Shape in;
  };
  const std::vector<Case> cases{
      {nn::Dense{4}, {5}},
      {nn::Conv2D{3, 3}, {5, 4, 2}},
      {nn::Conv2D{2, 3, 2, nn::Padding::Valid}, {7, 7, 2}},
      {nn::MaxPool2D{2, 2}, {4, 6, 2}},
      {nn::Flatten{}, {2, 3, 2}},
      {nn::Dropout{0.3f}, {12}},
      {nn::BatchNorm{}, {3, 3, 2}},
      {nn::Activation{nn::ActivationFn::Relu}, {10}},
      {nn::Activation{nn::ActivationFn::Softmax}, {6}},
  };
  double worst = 0.0;
  std::string where;
  std::size_t instances = 0;
  for (const auto& c : cases) {
    for (std::uint64_t i = 0; i < 20; ++i) {
      auto layer = nn::make_layer({c.kind, "l"}, c.in);
      Rng rng(1000 + i);
      layer->initialize(rng);
      Shape batched{2};
      batched.insert(batched.end(), c.in.begin(), c.in.end());
      const auto r = oracle::check_layer_gradients(*layer, oracle::kink_free_input(batched, rng), 2000 + i);
      ++instances;
      if (r.max_error > worst) {
        worst = r.max_error;
        where = nn::describe(c.kind) + " instance " + std::to_string(i) + " " + r.worst;
      }
    }
  }
  return {worst < 1e-3, std::to_string(instances) + " instances, worst relative error " + fmt("%.2e", worst) +
                            (where.empty() ? "" : " at " + where)};
}

Verdict freeze_soundness() {
  data::SyntheticTaskSpec spec;
  spec.image_size = 16;
  spec.samples_per_class = 4;
  spec.num_classes = 3;
  const auto train = data::generate(spec);
  spec.seed = 2;
  const auto eval = data::generate(spec);
  training::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 1e-2;

  std::size_t runs = 0, violations = 0, untouched_units = 0;
  Rng rng(31);
  for (const auto& name : model::zoo_names()) {
    const auto bb = random_backbone(name, 16, 5);
    const auto original = bb.instantiate();
    const auto weighted = original.weighted_backbone();
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t k = 1 + rng.below(weighted.size());
      const auto unit = finetune::sample_layers(weighted, k, rng.next_u64());
      cfg.seed = trial;
      const auto out = finetune::fine_tune(bb, unit, train, eval, cfg);
      if (!out.model) throw Error("fine-tune failed: " + out.result.failure);
      ++runs;
      for (std::size_t i = 0; i < original.size(); ++i) {
        bool same = true;
        const auto& a = out.model->layer(i);
        const auto& b = original.layer(i);
        for (std::size_t p = 0; p < a.params().size(); ++p) same &= a.params()[p].value.identical(b.params()[p].value);
        for (std::size_t p = 0; p < a.buffers().size(); ++p)
          same &= a.buffers()[p].value.identical(b.buffers()[p].value);
        const bool inside = std::find(unit.begin(), unit.end(), i) != unit.end();
        if (!inside && !same) ++violations;
        if (inside && same) ++untouched_units;
      }
    }
  }
  return {violations == 0, std::to_string(runs) + " runs, " + std::to_string(violations) +
                               " frozen layers changed, " + std::to_string(untouched_units) +
                               " unit layers left unchanged"};
}

Verdict selection() {
  const auto structure = random_backbone("mini-cnn-deep", 32, 0).structure(5);
  const auto weighted = structure.weighted_backbone();
  const auto partition = seg::partition_by_nonweighting(structure, {});
  std::size_t mismatches = 0;
  Rng rng(404);
  auto coarse = [&] { return static_cast<double>(rng.below(8)) / 7.0; };
  for (int trial = 0; trial < 1000; ++trial) {
    oracle::StubTrainer stub;
    std::vector<double> layer_scores, block_scores;
    for (auto i : weighted) {
      layer_scores.push_back(coarse());
      stub.search[{i}] = layer_scores.back();
    }
    for (const auto& b : partition.blocks) {
      block_scores.push_back(coarse());
      if (b.layer_indices.size() > 1) stub.search[b.layer_indices] = block_scores.back();
      else block_scores.back() = layer_scores[std::find(weighted.begin(), weighted.end(), b.layer_indices[0]) -
                                              weighted.begin()];
    }
    finetune::SearchSession session(structure, stub);
    if (session.layerwise().selected_unit != finetune::Unit{weighted[oracle::first_argmax(layer_scores)]})
      ++mismatches;
    if (session.blockwise().selected_unit != partition.blocks[oracle::first_argmax(block_scores)].layer_indices)
      ++mismatches;
    std::vector<std::pair<std::size_t, double>> pairs;
    for (std::size_t i = 0; i < weighted.size(); ++i) pairs.emplace_back(weighted[i], layer_scores[i]);
    const std::size_t k = 1 + rng.below(weighted.size());
    if (session.topk(k).selected_unit != oracle::topk_by_sort(pairs, k)) ++mismatches;
  }
  return {mismatches == 0, "1000 score vectors, " + std::to_string(mismatches) + " mismatches against the oracles"};
}

Verdict segmentation_algebra() {
  std::size_t failures = 0, checked = 0;
  for (const auto& name : model::zoo_names()) {
    const auto m = random_backbone(name, 32, 0).structure(5);
    for (bool delimit : {false, true}) {
      const auto expected =
          slurp(fs::path(BWFT_TEST_DIR) / "golden" / (name + (delimit ? ".delimit-bn" : "") + ".txt"));
      const auto got = seg::dump_partition(m, seg::partition_by_nonweighting(m, {delimit})) +
                       seg::dump_windows(m, seg::sliding_windows(m, 3));
      failures += got != expected;
      ++checked;
    }
  }
  const std::vector<nn::LayerKind> alphabet{nn::Conv2D{4}, nn::Conv2D{4}, nn::BatchNorm{}, nn::MaxPool2D{},
                                            nn::Activation{}, nn::Dropout{}, nn::Dense{3}};
  Rng rng(99);
  std::size_t algebra = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<nn::LayerKind> kinds;
    const std::size_t n = 1 + rng.below(16);
    for (std::size_t i = 0; i < n; ++i) kinds.push_back(alphabet[rng.below(alphabet.size())]);
    std::vector<std::size_t> weighted;
    for (std::size_t i = 0; i < n; ++i)
      if (nn::is_weighted(kinds[i])) weighted.push_back(i);
    if (weighted.empty()) continue;
    ++algebra;
    for (bool delimit : {false, true}) {
      std::vector<std::size_t> joined;
      for (const auto& b : seg::partition_by_nonweighting(kinds, {delimit}).blocks) {
        for (std::size_t k = 1; k < b.layer_indices.size(); ++k)
          failures += b.layer_indices[k] != b.layer_indices[k - 1] + 1;
        if (delimit && b.layer_indices.size() > 1)
          for (auto i : b.layer_indices) failures += std::holds_alternative<nn::BatchNorm>(kinds[i]);
        joined.insert(joined.end(), b.layer_indices.begin(), b.layer_indices.end());
      }
      failures += joined != weighted;
    }
    const std::size_t w = 1 + rng.below(std::min<std::size_t>(4, weighted.size()));
    const auto ws = seg::sliding_windows(kinds, w);
    failures += ws.size() != weighted.size() - w + 1;
    for (std::size_t k = 0; k < ws.size(); ++k)
      failures += ws[k].layer_indices != std::vector<std::size_t>(weighted.begin() + k, weighted.begin() + k + w);
  }
  return {failures == 0, std::to_string(checked) + " golden files, " + std::to_string(algebra) +
                             " random backbones, " + std::to_string(failures) + " failures"};
}

Verdict protocol_counts() {
  std::size_t failures = 0;
  for (const auto& name : model::zoo_names()) {
    const auto structure = random_backbone(name, 32, 0).structure(5);
    const auto weighted = structure.weighted_backbone();
    const auto blocks = seg::partition_by_nonweighting(structure, {}).blocks.size();
    oracle::StubTrainer stub;
    Rng rng(7);
    for (auto i : weighted) stub.search[{i}] = rng.uniform();
    finetune::SearchSession session(structure, stub);
    failures += session.layerwise().candidates.size() != weighted.size();
    failures += session.blockwise().candidates.size() != blocks;
    std::vector<std::pair<std::size_t, double>> pairs;
    for (auto i : weighted) pairs.emplace_back(i, stub.search[{i}]);
    const std::size_t before = stub.search_calls.size();
    for (std::size_t k : {3, 5}) {
      stub.final_calls.clear();
      session.topk(k);
      failures += stub.final_calls.size() != 1 || stub.final_calls[0] != oracle::topk_by_sort(pairs, k);
    }
    failures += stub.search_calls.size() != before;
  }
  return {failures == 0, std::to_string(model::zoo_names().size()) + " models, " + std::to_string(failures) +
                             " count or set mismatches"};
}

Verdict reproducible(const fs::path& work) {
  experiment::ExperimentPlan plan;
  experiment::apply_plan_text(plan,
                              "model=mini-vgg,mini-cnn-pool\nstrategy=baseline1,bw,bwt3\nrepeats=2\nepochs=2\n"
                              "learning_rate=1e-3\ntask.image_size=8\ntask.num_classes=3\n"
                              "source.samples_per_class=20\ntarget.samples_per_class=20\n"
                              "pretrain.epochs=2\npretrain.gate=0\n");
  std::ostringstream log;
  plan.out = work / "repro_a";
  experiment::run(plan, log);
  plan.out = work / "repro_b";
  experiment::run(plan, log);
  const auto a = slurp(work / "repro_a/summary.csv"), b = slurp(work / "repro_b/summary.csv");
  std::size_t runs_differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(work / "repro_a/runs"))
    if (entry.is_regular_file())
      runs_differ += slurp(entry.path()) != slurp(work / "repro_b/runs" / fs::relative(entry.path(), work / "repro_a/runs"));
  return {a == b && runs_differ == 0,
          std::string(a == b ? "summary identical" : "summary differs") + ", " + std::to_string(runs_differ) +
              " run files differ"};
}

Verdict adam_trace() {
  oracle::ScalarAdam ref;
  double w_ref = 0.3, worst = 0.0;
  Tensor w({1}, {0.3f}), g({1});
  Tensor* values[] = {&w};
  const Tensor* grads[] = {&g};
  const bool trainable[] = {true};
  nn::Adam adam({}, {{1}});
  for (int i = 0; i < 10; ++i) {
    const float grad = static_cast<float>(std::sin(0.7 * i) - 0.2);
    g[0] = grad;
    w_ref = ref.step(w_ref, grad);
    adam.step(values, grads, trainable);
    worst = std::max(worst, std::abs(static_cast<double>(w[0]) - w_ref));
  }
  return {worst < 1e-7, "10 steps, max |w - w_ref| " + fmt("%.2e", worst) + " (want <1e-7)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "bwft_acceptance").string();
  app.add_option("--criterion", only, "run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory for experiment runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"reference footer", reference_footer},
      {"colour-shift matrix", [&] { return colour_matrix(dir); }},
      {"frequency plant recovery", [&] { return frequency_plant(dir); }},
      {"gradient check", gradients},
      {"freeze soundness", freeze_soundness},
      {"selection equals brute force", selection},
      {"segmentation algebra", segmentation_algebra},
      {"protocol counts", protocol_counts},
      {"reproducible summary", [&] { return reproducible(dir); }},
      {"adam trace", adam_trace},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return failures;
}
