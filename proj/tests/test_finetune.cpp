#include <doctest.h>

#include <set>

#include "bwft/error.hpp"
#include "bwft/finetune.hpp"
#include "bwft/model.hpp"
#include "support/oracles.hpp"

using namespace bwft;
using finetune::Unit;

namespace {

finetune::PretrainedBackbone backbone(const std::string& name, std::size_t image = 8) {
  const auto& entry = model::zoo_entry(name);
  const Shape shape{image, image, 3};
  auto m = model::build_backbone(entry, shape, 11);
  return {entry, shape, model::Snapshot::capture(m)};
}

data::LabeledDataset tiny(std::uint64_t seed, std::size_t per_class = 6) {
  data::SyntheticTaskSpec s;
  s.image_size = 8;
  s.samples_per_class = per_class;
  s.num_classes = 3;
  s.seed = seed;
  return data::generate(s);
}

training::TrainConfig quick() {
  training::TrainConfig c;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 4;
  return c;
}

// mini-vgg with a head: weighted backbone layers 0 2 5 7 10
model::SequentialModel vgg_structure() { return backbone("mini-vgg").structure(5); }

bool same_weights(const nn::Layer& a, const nn::Layer& b) {
  for (std::size_t p = 0; p < a.params().size(); ++p)
    if (!a.params()[p].value.identical(b.params()[p].value)) return false;
  for (std::size_t p = 0; p < a.buffers().size(); ++p)
    if (!a.buffers()[p].value.identical(b.buffers()[p].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("selection examples with a stub trainer") {
  const auto structure = vgg_structure();

  SUBCASE("layer-wise picks the first of tied best layers") {
    oracle::StubTrainer stub;
    stub.search = {{{0}, 0.3}, {{2}, 0.8}, {{5}, 0.8}};
    finetune::SearchSession session(structure, stub);
    const auto r = session.layerwise();
    CHECK(r.candidates.size() == 5);
    CHECK(r.selected_unit == Unit{2});
    CHECK(stub.final_calls == std::vector<Unit>{{2}});
    CHECK(r.final_run.search_accuracy == 0.8);
    CHECK(r.final_run.strategy == "lw");
  }

  SUBCASE("block-wise") {
    // relu delimits, so each conv of mini-vgg is its own block
    oracle::StubTrainer stub;
    stub.search = {{{0}, 0.4}, {{2}, 0.9}};
    finetune::SearchSession session(structure, stub);
    const auto r = session.blockwise();
    CHECK(r.candidates.size() == 5);
    CHECK(r.selected_unit == Unit{2});
    CHECK(r.final_run.strategy == "bw");
  }

  SUBCASE("sliding window") {
    oracle::StubTrainer stub;
    stub.search = {{{0, 2, 5}, 0.1}, {{2, 5, 7}, 0.6}, {{5, 7, 10}, 0.5}};
    finetune::SearchSession session(structure, stub);
    const auto r = session.sliding_window();
    CHECK(r.candidates.size() == 3);
    CHECK(r.selected_unit == Unit{2, 5, 7});
  }

  SUBCASE("top-k") {
    oracle::StubTrainer stub;
    stub.search = {{{0}, 0.2}, {{2}, 0.9}, {{5}, 0.5}, {{7}, 0.7}, {{10}, 0.1}};
    finetune::SearchSession session(structure, stub);
    CHECK(session.topk(3).selected_unit == Unit{2, 5, 7});
    CHECK(session.topk(5).selected_unit == Unit{0, 2, 5, 7, 10});
    CHECK(session.sweeps_executed() == 1);
    CHECK(stub.search_calls.size() == 5);
    session.layerwise();
    CHECK(session.sweeps_executed() == 1);
    CHECK(stub.search_calls.size() == 5);
    CHECK_THROWS_AS(session.topk(0), ConfigError);
    CHECK_THROWS_AS(session.topk(6), ConfigError);
  }
}

TEST_CASE("failed candidates score zero") {
  std::vector<finetune::RunResult> c(3);
  c[0].search_accuracy = 0.4;
  c[1].search_accuracy = 0.9;
  c[1].failed = true;
  c[2].search_accuracy = 0.5;
  CHECK(finetune::select_best(c) == 2);
  CHECK_THROWS_AS(finetune::select_best(std::span<const finetune::RunResult>{}), ConfigError);
}

TEST_CASE("protocol counts") {
  for (const auto& name : model::zoo_names()) {
    INFO(name);
    const auto structure = backbone(name).structure(5);
    const auto weighted = structure.weighted_backbone();
    const auto blocks = seg::partition_by_nonweighting(structure, {}).blocks.size();
    oracle::StubTrainer stub;
    finetune::SearchSession session(structure, stub);

    CHECK(session.layerwise().candidates.size() == weighted.size());
    CHECK(session.blockwise().candidates.size() == blocks);
    CHECK(session.sliding_window().candidates.size() == weighted.size() - 2);
    const std::size_t searched = stub.search_calls.size();
    CHECK(searched == weighted.size() + blocks + weighted.size() - 2);

    stub.final_calls.clear();
    CHECK(session.topk(3).selected_unit.size() == 3);
    CHECK(session.topk(5).selected_unit.size() == 5);
    CHECK(stub.search_calls.size() == searched);  // cached sweep
    REQUIRE(stub.final_calls.size() == 2);
    CHECK(stub.final_calls[0].size() == 3);
    CHECK(stub.final_calls[1].size() == 5);

    CHECK(session.baseline_classifier_only().unit.empty());
    CHECK(session.baseline_all_layers().unit == weighted);
  }
}

TEST_CASE("random layer sampling") {
  const std::vector<std::size_t> layers{0, 2, 5, 7, 10};
  std::map<std::size_t, int> hits;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto u = finetune::sample_layers(layers, 3, seed);
    REQUIRE(u.size() == 3);
    CHECK(std::is_sorted(u.begin(), u.end()));
    CHECK(std::set<std::size_t>(u.begin(), u.end()).size() == 3);
    for (auto i : u) {
      CHECK(std::find(layers.begin(), layers.end(), i) != layers.end());
      ++hits[i];
    }
  }
  // each layer is drawn with probability 3/5
  for (auto i : layers) {
    CHECK(hits[i] > 540);
    CHECK(hits[i] < 660);
  }
  CHECK(finetune::sample_layers(layers, 3, 42) == finetune::sample_layers(layers, 3, 42));
  CHECK(finetune::sample_layers(layers, 5, 9) == Unit(layers.begin(), layers.end()));
  CHECK_THROWS_AS(finetune::sample_layers(layers, 0, 1), ConfigError);
  CHECK_THROWS_AS(finetune::sample_layers(layers, 6, 1), ConfigError);

  const auto structure = vgg_structure();
  oracle::StubTrainer stub;
  finetune::SearchSession session(structure, stub);
  CHECK(session.random_layers(5, 3).unit == session.baseline_all_layers().unit);
  CHECK(session.random_layers(3, 3).strategy == "random3");
}

TEST_CASE("fine_tune is deterministic and freezes everything outside the unit") {
  const auto bb = backbone("mini-vgg-bn");
  const auto train = tiny(1), eval = tiny(2, 3);
  const auto original = bb.instantiate();
  const auto weighted = original.weighted_backbone();
  const Unit unit{weighted[2], weighted[3]};

  const auto a = finetune::fine_tune(bb, unit, train, eval, quick());
  const auto b = finetune::fine_tune(bb, unit, train, eval, quick());
  REQUIRE(a.model);
  REQUIRE(b.model);
  CHECK_FALSE(a.result.failed);
  CHECK(a.result.epochs_run == 2);
  CHECK(a.result.accuracy_trace.size() == 2);
  CHECK(a.result.accuracy_trace == b.result.accuracy_trace);
  CHECK(*a.result.search_accuracy == *b.result.search_accuracy);

  for (std::size_t i = 0; i < original.size(); ++i) {
    INFO(original.layer(i).name());
    const bool inside = std::find(unit.begin(), unit.end(), i) != unit.end();
    if (inside)
      CHECK_FALSE(same_weights(a.model->layer(i), original.layer(i)));
    else
      CHECK(same_weights(a.model->layer(i), original.layer(i)));
    CHECK(same_weights(a.model->layer(i), b.model->layer(i)));
  }

  // an empty unit trains the head alone
  const auto head_only = finetune::fine_tune(bb, {}, train, eval, quick());
  REQUIRE(head_only.model);
  for (std::size_t i = 0; i < original.size(); ++i) CHECK(same_weights(head_only.model->layer(i), original.layer(i)));
}

TEST_CASE("FineTuneTrainer phases") {
  const auto bb = backbone("mini-vgg");
  data::SyntheticTaskSpec s;
  s.image_size = 8;
  s.samples_per_class = 20;
  s.num_classes = 3;
  const auto splits = finetune::TaskSplits::make(data::generate(s), {});
  CHECK(splits.train.size() == 42);
  CHECK(splits.test.size() == 18);
  CHECK(splits.search.size() == 6);

  finetune::FineTuneTrainer trainer(bb, splits, quick());
  const auto search = trainer.run({0}, finetune::Phase::Search);
  CHECK(search.search_accuracy);
  CHECK_FALSE(search.final_accuracy);
  const auto final = trainer.run({0}, finetune::Phase::Final);
  CHECK(final.final_accuracy);
  CHECK_FALSE(final.search_accuracy);
  CHECK(trainer.last_final_model());

  auto bad = quick();
  bad.epochs = 0;
  CHECK_THROWS_AS(finetune::FineTuneTrainer(bb, splits, bad), ConfigError);
}

TEST_CASE("evaluate examples") {
  auto m = backbone("mini-vgg").structure(3);
  auto d = tiny(5, 4);
  // zero final layer: uniform output, argmax ties go to class 0
  const std::size_t last = m.weighted_head().back();
  for (auto& p : m.layer(last).params()) p.value.fill(0.0f);
  CHECK(training::evaluate(m, d) == doctest::Approx(1.0 / 3.0));

  // bias-only predictor for class 2: perfect on class 2, zero elsewhere
  m.layer(last).params()[1].value[2] = 5.0f;
  auto only2 = d;
  only2.labels.assign(d.size(), 2);
  CHECK(training::evaluate(m, only2) == 1.0);
  auto never = d;
  never.labels.assign(d.size(), 0);
  CHECK(training::evaluate(m, never) == 0.0);

  data::LabeledDataset empty = d.subset({});
  CHECK_THROWS_AS(training::evaluate(m, empty), ConfigError);
}
