#include "bwft/segmentation.hpp"

#include <algorithm>
#include <sstream>
#include <variant>

#include "bwft/error.hpp"

namespace bwft::seg {

namespace {

bool delimits(const nn::LayerKind& kind, const PartitionOptions& options) {
  if (!nn::is_weighted(kind)) return true;
  return options.delimit_batchnorm && std::holds_alternative<nn::BatchNorm>(kind);
}

std::vector<nn::LayerKind> backbone_of(const model::SequentialModel& model) {
  if (!model.has_head()) throw ConfigError("segmentation needs a model with its classifier head attached");
  return model.backbone_kinds();
}

std::string joined_names(const model::SequentialModel& model, std::span<const std::size_t> layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += model.layer(layers[i]).name();
  }
  return out;
}

}  // namespace

Partition partition_by_nonweighting(std::span<const nn::LayerKind> backbone, PartitionOptions options) {
  Partition p;
  std::vector<std::size_t> run;
  auto close = [&] {
    if (run.empty()) return;
    p.blocks.push_back({p.blocks.size(), std::move(run)});
    run.clear();
  };
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const auto& kind = backbone[i];
    if (!delimits(kind, options)) {
      run.push_back(i);
      continue;
    }
    close();
    if (nn::is_weighted(kind)) {
      run.push_back(i);
      close();
    }
  }
  close();
  if (p.blocks.empty()) throw ConfigError("backbone has no weighted layers to partition");
  return p;
}

Partition partition_by_nonweighting(const model::SequentialModel& model, PartitionOptions options) {
  const auto kinds = backbone_of(model);
  return partition_by_nonweighting(kinds, options);
}

std::vector<Window> sliding_windows(std::span<const nn::LayerKind> backbone, std::size_t width) {
  if (width == 0) throw ConfigError("window width must be positive");
  std::vector<std::size_t> weighted;
  for (std::size_t i = 0; i < backbone.size(); ++i)
    if (nn::is_weighted(backbone[i])) weighted.push_back(i);
  if (weighted.size() < width) {
    throw ConfigError("window width " + std::to_string(width) + " exceeds the " + std::to_string(weighted.size()) +
                      " weighted backbone layers");
  }
  std::vector<Window> out;
  for (std::size_t s = 0; s + width <= weighted.size(); ++s) {
    out.push_back({s, {weighted.begin() + static_cast<std::ptrdiff_t>(s),
                       weighted.begin() + static_cast<std::ptrdiff_t>(s + width)}});
  }
  return out;
}

std::vector<Window> sliding_windows(const model::SequentialModel& model, std::size_t width) {
  const auto kinds = backbone_of(model);
  return sliding_windows(kinds, width);
}

std::vector<std::size_t> rank_layers(std::span<const LayerScore> scores, std::size_t k) {
  if (scores.empty()) throw ConfigError("cannot rank an empty accuracy list");
  if (k == 0 || k > scores.size()) {
    throw ConfigError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(scores.size()) + "]");
  }
  std::vector<LayerScore> sorted(scores.begin(), scores.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const LayerScore& a, const LayerScore& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.layer < b.layer;
  });
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < k; ++i) top.push_back(sorted[i].layer);
  std::sort(top.begin(), top.end());
  return top;
}

std::string dump_partition(const model::SequentialModel& model, const Partition& partition) {
  std::ostringstream os;
  for (const auto& b : partition.blocks) os << "block " << b.index << ": " << joined_names(model, b.layer_indices) << '\n';
  return os.str();
}

std::string dump_windows(const model::SequentialModel& model, std::span<const Window> windows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < windows.size(); ++i)
    os << "window " << i << ": " << joined_names(model, windows[i].layer_indices) << '\n';
  return os.str();
}

}  // namespace bwft::seg
