#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bwft/error.hpp"
#include "bwft/experiment.hpp"

using namespace bwft;
namespace fs = std::filesystem;
using experiment::Variance;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bwft_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small enough to run in seconds on one core.
experiment::ExperimentPlan tiny_plan(const fs::path& out) {
  experiment::ExperimentPlan plan;
  experiment::apply_plan_text(plan,
                              "model=mini-vgg\n"
                              "strategy=baseline1,lw\n"
                              "epochs=1\n"
                              "learning_rate=1e-3\n"
                              "task.image_size=8\n"
                              "task.num_classes=3\n"
                              "source.samples_per_class=20\n"
                              "target.samples_per_class=20\n"
                              "pretrain.epochs=1\n"
                              "pretrain.gate=0\n");
  plan.out = out;
  return plan;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("plan text") {
  experiment::ExperimentPlan plan;
  experiment::apply_plan_text(plan, "# comment\nmodel = mini-vgg, mini-cnn-deep\nstrategy=bw\nstrategy=lw\nrepeats=3\n"
                                    "seed=9\nwindow=2\ntarget.shift=color\n");
  CHECK(plan.models == std::vector<std::string>{"mini-vgg", "mini-cnn-deep"});
  CHECK(plan.strategies == std::vector<std::string>{"bw", "lw"});
  CHECK(plan.repeats == 3);
  CHECK(plan.seed == 9);
  CHECK(plan.window == 2);
  CHECK(plan.target.shift == data::ShiftKind::Color);
  CHECK_NOTHROW(plan.validate());

  experiment::ExperimentPlan all;
  experiment::apply_plan_text(all, "model=all\nstrategy=all\n");
  CHECK(all.models == model::zoo_names());
  CHECK(all.strategies == experiment::strategy_names());

  // canonical text reads back to the same plan
  experiment::ExperimentPlan again;
  experiment::apply_plan_text(again, plan.canonical());
  CHECK(again.canonical() == plan.canonical());

  for (const char* bad : {"epochs=0\n", "epochs=ten\n", "nonsense=1\n", "model=resnet\n", "strategy=magic\n",
                          "target.seed=3\n", "no equals sign\n", "delimit_batchnorm=maybe\n"}) {
    INFO(bad);
    experiment::ExperimentPlan p;
    CHECK_THROWS_AS(
        {
          experiment::apply_plan_text(p, std::string("model=mini-vgg\nstrategy=bw\n") + bad);
          p.validate();
        },
        ConfigError);
  }
  try {
    experiment::ExperimentPlan p;
    experiment::apply_plan_text(p, "model=mini-vgg\n\nrepeats=x\n");
    FAIL("accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(experiment::load_plan("/nonexistent.plan"), ConfigError);
}

TEST_CASE("target seeds are distinct from run seeds") {
  CHECK(experiment::target_seed(5) == experiment::target_seed(5));
  CHECK(experiment::target_seed(5) != experiment::target_seed(6));
  CHECK(experiment::target_seed(5) != 5);
}

TEST_CASE("mean and variance") {
  CHECK(experiment::mean_of({0.8, 0.9}) == doctest::Approx(0.85));
  CHECK(experiment::variance_of({0.8, 0.9}, Variance::Population) == doctest::Approx(0.0025));
  CHECK(experiment::variance_of({0.8, 0.9}, Variance::Sample) == doctest::Approx(0.005));
  CHECK(experiment::variance_of({0.7}, Variance::Sample) == 0.0);
  CHECK(experiment::variance_of({0.7}, Variance::Population) == 0.0);
}

TEST_CASE("summarize") {
  const auto dir = scratch("summarize");
  const std::string header = experiment::csv_header() + "\n";
  put(dir / "runs/a/bw.csv", header + "bw,conv1,0.5,0.8,1,15,0\n");
  put(dir / "runs/b/bw.csv", header + "bw,conv1,0.5,0.9,1,15,0\nbw,conv2,0.5,0.9,2,15,0\n");
  put(dir / "runs/a/baseline1.csv", header + "baseline1,,,0.6,1,15,0\n");
  put(dir / "runs/b/baseline1.csv", header + "baseline1,,,0.7,1,15,0\n");

  const auto s = experiment::summarize(dir, Variance::Population);
  CHECK(s.models == std::vector<std::string>{"a", "b"});
  CHECK(s.strategies == std::vector<std::string>{"baseline1", "bw"});
  REQUIRE(s.cells.size() == 2);
  CHECK(*s.cells[1][1] == doctest::Approx(0.9));
  CHECK(s.mean[1] == doctest::Approx(0.85));
  CHECK(s.variance[1] == doctest::Approx(0.0025));
  CHECK(s.best_mean == 1u);

  const auto table = lines(experiment::format_summary(s));
  REQUIRE(table.size() == 5);  // header, two models, variance, mean
  CHECK(table[0].rfind("model", 0) == 0);
  CHECK(table[3].rfind("Variance", 0) == 0);
  CHECK(table[4].rfind("Mean", 0) == 0);

  put(dir / "runs/b/bw.csv", "strategy,final_acc\n");
  CHECK_THROWS_AS(experiment::summarize(dir, Variance::Sample), FormatError);
  put(dir / "runs/b/bw.csv", header + "bw,conv1,0.5,,1,15,0\n");
  CHECK_THROWS_AS(experiment::summarize(dir, Variance::Sample), FormatError);
  CHECK_THROWS_AS(experiment::summarize(scratch("empty"), Variance::Sample), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("parameter profile") {
  const auto m = finetune::PretrainedBackbone{model::zoo_entry("mini-cnn-deep"), model::kDefaultInputShape,
                                              model::Snapshot::capture(model::build_backbone(
                                                  model::zoo_entry("mini-cnn-deep"), model::kDefaultInputShape, 0))}
                     .structure(5);
  const auto csv = lines(experiment::param_profile_csv(m));
  REQUIRE(csv.size() == m.size() + 1);
  CHECK(csv[0] == "ordinal,name,kind,weighted,count");
  std::size_t total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& row = csv[i + 1];
    CHECK(row.rfind(std::to_string(i) + "," + m.layer(i).name() + ",", 0) == 0);
    total += std::stoull(row.substr(row.rfind(',') + 1));
  }
  CHECK(total == model::total_params(m));
  CHECK(experiment::render_svg(experiment::param_profile_csv(m), "deep").find("<svg") != std::string::npos);
  CHECK_THROWS_AS(experiment::render_svg("a,b\n1,2\n", "x"), ConfigError);
}

TEST_CASE("a small run end to end") {
  const auto out = scratch("run");
  auto plan = tiny_plan(out);
  std::ostringstream log;
  const auto outcome = experiment::run(plan, log);
  CHECK(outcome.summary.models == std::vector<std::string>{"mini-vgg"});
  CHECK(outcome.summary.strategies == std::vector<std::string>{"baseline1", "lw"});
  const auto summary = slurp(out / "summary.csv");
  CHECK(lines(summary).size() == 4);
  for (const char* f : {"manifest.txt", "runs/mini-vgg/baseline1.csv", "runs/mini-vgg/lw.csv",
                        "snapshots/mini-vgg.snap", "params/mini-vgg.csv", "curves/mini-vgg/lw.csv"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  const auto manifest = slurp(out / "manifest.txt");
  for (const auto& a : outcome.artifacts) CHECK(manifest.find("artifact." + a + "=") != std::string::npos);
  // five weighted layers, one search row each plus the selected final
  CHECK(lines(slurp(out / "curves/mini-vgg/lw.csv")).size() == 6);

  // rerun into the same directory replaces the old artifacts byte for byte
  const auto first_manifest = manifest;
  experiment::run(plan, log);
  CHECK(slurp(out / "manifest.txt") == first_manifest);
  CHECK(slurp(out / "summary.csv") == summary);

  // unrecognised files are never deleted
  put(out / "notes.txt", "keep me");
  CHECK_THROWS_AS(experiment::run(plan, log), ConfigError);
  CHECK(slurp(out / "notes.txt") == "keep me");
  fs::remove_all(out);
}

TEST_CASE("repeats add mean curve rows") {
  const auto out = scratch("repeats");
  auto plan = tiny_plan(out);
  plan.strategies = {"bw"};
  plan.repeats = 2;
  std::ostringstream log;
  experiment::run(plan, log);
  const auto curve = lines(slurp(out / "curves/mini-vgg/bw.csv"));
  std::size_t means = 0, rows = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    ++rows;
    means += curve[i].find(",mean,") != std::string::npos;
  }
  CHECK(means == 5);
  CHECK(rows == 15);
  CHECK(lines(slurp(out / "runs/mini-vgg/bw.csv")).size() == 3);
  CHECK(experiment::render_svg(slurp(out / "curves/mini-vgg/bw.csv"), "bw").find("<polyline") != std::string::npos);
  fs::remove_all(out);
}
