#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>

#include "bwft/error.hpp"
#include "bwft/model.hpp"
#include "bwft/snapshot.hpp"

using namespace bwft;
using model::SequentialModel;

namespace {

SequentialModel zoo(const std::string& name, std::uint64_t seed = 0, std::size_t classes = 5) {
  auto m = model::build_backbone(model::zoo_entry(name), model::kDefaultInputShape, seed);
  Rng rng(seed, 1);
  model::attach_classifier(m, classes, rng);
  return m;
}

std::vector<std::string> kinds(const SequentialModel& m, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(nn::kind_name(m.layer(i).spec().kind));
  return out;
}

void scramble(SequentialModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (auto& p : m.layer(i).params())
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = rng.uniform(-1.0f, 1.0f);
    for (auto& b : m.layer(i).buffers())
      for (std::size_t k = 0; k < b.value.size(); ++k) b.value[k] = rng.uniform(0.5f, 1.5f);
  }
}

Tensor sample_input(std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({2, 32, 32, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("mini-vgg layer kinds") {
  const auto m = model::build_backbone(model::zoo_entry("mini-vgg"), model::kDefaultInputShape, 1);
  const std::vector<std::string> expected{"Conv2D", "Activation", "Conv2D", "Activation", "MaxPool2D",
                                          "Conv2D", "Activation", "Conv2D", "Activation", "MaxPool2D",
                                          "Conv2D", "Activation", "MaxPool2D"};
  CHECK(kinds(m, m.size()) == expected);
  CHECK(m.layer(0).param_count() == 448);
}

TEST_CASE("mini-vgg-bn is mini-vgg with a batch-norm after every conv") {
  const auto plain = model::zoo_entry("mini-vgg").backbone;
  const auto bn = model::zoo_entry("mini-vgg-bn").backbone;
  std::vector<std::string> stripped;
  std::size_t inserted = 0;
  for (std::size_t i = 0; i < bn.size(); ++i) {
    if (std::holds_alternative<nn::BatchNorm>(bn[i].kind)) {
      REQUIRE(i > 0);
      CHECK(std::holds_alternative<nn::Conv2D>(bn[i - 1].kind));
      ++inserted;
      continue;
    }
    stripped.push_back(nn::describe(bn[i].kind));
  }
  std::vector<std::string> original;
  for (const auto& s : plain) original.push_back(nn::describe(s.kind));
  CHECK(stripped == original);
  CHECK(inserted == 5);
}

TEST_CASE("every zoo entry is usable for every strategy") {
  for (const auto& name : model::zoo_names()) {
    INFO(name);
    const auto m = zoo(name);
    std::size_t nonweighting = 0;
    for (std::size_t i = 0; i < m.backbone_size(); ++i) nonweighting += !m.layer(i).weighted();
    CHECK(nonweighting >= 2);
    CHECK(m.weighted_backbone().size() >= 5);
    std::set<std::string> names;
    for (std::size_t i = 0; i < m.size(); ++i) names.insert(m.layer(i).name());
    CHECK(names.size() == m.size());
  }
  CHECK_THROWS_AS(model::zoo_entry("resnet"), ConfigError);
}

TEST_CASE("build_backbone is deterministic in the seed") {
  const auto a = zoo("mini-cnn-deep", 3), b = zoo("mini-cnn-deep", 3), c = zoo("mini-cnn-deep", 4);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t p = 0; p < a.layer(i).params().size(); ++p) {
      CHECK(a.layer(i).params()[p].value.identical(b.layer(i).params()[p].value));
      differs |= !a.layer(i).params()[p].value.identical(c.layer(i).params()[p].value);
    }
  CHECK(differs);
}

TEST_CASE("classifier head") {
  auto m = zoo("mini-vgg");
  REQUIRE(m.head_boundary());
  const std::size_t hb = *m.head_boundary();
  CHECK(hb == 13);
  CHECK(kinds(m, m.size()).size() == 20);
  CHECK(nn::kind_name(m.layer(hb).spec().kind) == "Flatten");
  CHECK(m.output_shape() == Shape{5});
  CHECK(std::holds_alternative<nn::Activation>(m.layer(m.size() - 1).spec().kind));
  CHECK(m.weighted_head().size() == 3);
  const auto probs = m.predict(sample_input(1));
  for (std::size_t row = 0; row < 2; ++row) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 5; ++k) sum += probs[row * 5 + k];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
  Rng rng(0);
  CHECK_THROWS_AS(model::attach_classifier(m, 5, rng), ConfigError);
  m.strip_head();
  CHECK_FALSE(m.has_head());
  CHECK(m.size() == 13);
}

TEST_CASE("set_trainable") {
  auto m = zoo("mini-vgg");
  const auto head = m.weighted_head();
  auto trainable_backbone = [&] {
    std::vector<std::size_t> out;
    for (auto i : m.weighted_backbone())
      if (m.trainable(i)) out.push_back(i);
    return out;
  };
  auto head_trainable = [&] {
    for (auto i : head)
      if (!m.trainable(i)) return false;
    return true;
  };

  model::set_trainable(m, {});
  CHECK(trainable_backbone().empty());
  CHECK(head_trainable());

  const auto all = m.weighted_backbone();
  model::set_trainable(m, all);
  CHECK(trainable_backbone() == all);
  CHECK(head_trainable());

  const std::size_t three[] = {2};
  model::set_trainable(m, three);
  CHECK(trainable_backbone() == std::vector<std::size_t>{2});

  const std::size_t pool[] = {4};
  CHECK_THROWS_AS(model::set_trainable(m, pool), ConfigError);
  const std::size_t head_layer[] = {head.front()};
  CHECK_THROWS_AS(model::set_trainable(m, head_layer), ConfigError);
}

TEST_CASE("parameter counts") {
  const auto m = zoo("mini-vgg");
  const auto counts = model::count_params(m);
  REQUIRE(counts.size() == m.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(counts[i].name == m.layer(i).name());
    if (!m.layer(i).weighted()) CHECK(counts[i].count == 0);
    total += counts[i].count;
  }
  CHECK(total == model::total_params(m));
  CHECK(counts[0].count == 448);
  // fc1 sees the flattened 4x4x32 map
  const std::size_t hb = *m.head_boundary();
  CHECK(counts[hb + 1].count == 128 * 512 + 128);
}

TEST_CASE("snapshot round trip") {
  auto m = zoo("mini-vgg-bn", 2);
  const auto x = sample_input(5);
  const auto before = m.predict(x);
  const auto snap = model::Snapshot::capture(m);
  CHECK(model::Snapshot::capture(m).content_digest() == snap.content_digest());

  scramble(m, 9);
  CHECK_FALSE(m.predict(x).identical(before));
  snap.restore(m);
  CHECK(m.predict(x).identical(before));

  const auto bytes = snap.serialize();
  const auto back = model::Snapshot::deserialize(bytes);
  CHECK(back.content_digest() == snap.content_digest());
  CHECK(back.fingerprint() == snap.fingerprint());
  scramble(m, 10);
  back.restore(m);
  CHECK(m.predict(x).identical(before));

  const auto path = std::filesystem::temp_directory_path() / "bwft_test_snapshot.snap";
  snap.save(path);
  CHECK(model::Snapshot::load(path).content_digest() == snap.content_digest());
  std::filesystem::remove(path);
}

TEST_CASE("snapshot errors") {
  auto vgg = zoo("mini-vgg");
  auto other = zoo("mini-cnn-pool");
  const auto snap = model::Snapshot::capture(vgg);
  CHECK_THROWS_AS(snap.restore(other), ConfigError);

  auto bytes = snap.serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(model::Snapshot::deserialize(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(model::Snapshot::deserialize(truncated), FormatError);
  CHECK_THROWS_AS(model::Snapshot::load("/nonexistent/none.snap"), FormatError);
}
