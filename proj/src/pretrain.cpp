#include "bwft/pretrain.hpp"

#include <sstream>

#include "bwft/error.hpp"

namespace bwft::model {

PretrainResult pretrain(SequentialModel backbone, const data::LabeledDataset& source, const PretrainConfig& config) {
  if (backbone.has_head()) throw ConfigError("pretrain expects a backbone without a head");
  const auto split = data::split(source, config.split);
  const auto train = source.subset(split.train);
  const auto test = source.subset(split.test);

  Rng head_rng(config.train.seed, /*stream=*/0x70686561);
  attach_classifier(backbone, source.num_classes, head_rng);
  set_trainable(backbone, backbone.weighted_backbone());

  auto report = training::fit(backbone, train, test, config.train);
  const double accuracy = training::evaluate(backbone, test);
  if (!(accuracy > config.accuracy_gate)) {
    std::ostringstream os;
    os << "pre-training failed: source accuracy " << accuracy << " does not exceed " << config.accuracy_gate;
    throw Error(os.str());
  }

  for (std::size_t i = 0; i < backbone.size(); ++i) backbone.layer(i).set_frozen(false);
  SequentialModel source_model = backbone;
  backbone.strip_head();
  Provenance provenance{config.train.seed, hex(sha256(config.train.describe()))};
  return {Snapshot::capture(backbone, std::move(provenance)), accuracy, std::move(report), std::move(source_model)};
}

}  // namespace bwft::model
