#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bwft/layer.hpp"
#include "bwft/model.hpp"

namespace bwft::seg {

/// Run of weighted backbone layers; only non-weighting layers may sit
/// between consecutive members in the model.
struct Block {
  std::size_t index = 0;
  std::vector<std::size_t> layer_indices;
};

struct Partition {
  std::vector<Block> blocks;
};

struct Window {
  std::size_t start = 0;  // ordinal among weighted backbone layers
  std::vector<std::size_t> layer_indices;
};

struct PartitionOptions {
  /// Treat BatchNorm as a delimiter too. Being weighted, it then forms a
  /// block of its own.
  bool delimit_batchnorm = false;
};

/// Splits the backbone at non-weighting layers. Throws ConfigError when the
/// backbone has no weighted layer.
Partition partition_by_nonweighting(std::span<const nn::LayerKind> backbone, PartitionOptions options = {});
/// Requires an attached head; only layers before the head boundary count.
Partition partition_by_nonweighting(const model::SequentialModel& model, PartitionOptions options = {});

/// Stride-1 windows of `width` consecutive weighted layers; non-weighting
/// layers are skipped over. Throws ConfigError when fewer than `width`
/// weighted layers exist or width is 0.
std::vector<Window> sliding_windows(std::span<const nn::LayerKind> backbone, std::size_t width = 3);
std::vector<Window> sliding_windows(const model::SequentialModel& model, std::size_t width = 3);

struct LayerScore {
  std::size_t layer = 0;
  double accuracy = 0.0;
};

/// The k best layers by accuracy, ties to the lower layer index, returned in
/// layer order. Throws ConfigError when k is 0 or exceeds scores.size().
std::vector<std::size_t> rank_layers(std::span<const LayerScore> scores, std::size_t k);

/// "block <i>: <name,name,...>" per block, one per line.
std::string dump_partition(const model::SequentialModel& model, const Partition& partition);
/// "window <i>: <name,name,...>" per window, one per line.
std::string dump_windows(const model::SequentialModel& model, std::span<const Window> windows);

}  // namespace bwft::seg
