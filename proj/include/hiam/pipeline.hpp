#pragma once

#include <span>
#include <vector>

#include "hiam/aggregation.hpp"
#include "hiam/config.hpp"
#include "hiam/evaluation.hpp"
#include "hiam/model.hpp"
#include "hiam/nncore.hpp"
#include "hiam/training.hpp"
#include "json.hpp"

namespace hiam {

/// Compression maps from the trips entering during the training range.
CompressionMaps training_maps(std::span<const Transaction> log, const ExperimentConfig& cfg);

struct PreparedData {
  CompressionMaps maps;
  Dataset dataset;
  NormStats stats;
};

/// Maps, samples and normalization statistics for a log.
PreparedData prepare(std::span<const Transaction> log, const ExperimentConfig& cfg);

/// Manifest stored alongside parameters: model config, normalization
/// statistics and the selected epoch.
nlohmann::json checkpoint_manifest(const ModelConfig& model, const NormStats& stats,
                                   int best_epoch);

/// Rebuilds a model from a checkpoint. Throws ErrorKind::Dimension if the
/// stored parameters do not match the configuration's layout.
HiamModel model_from_checkpoint(const Checkpoint& ck, const MetroGraph& graph);
NormStats stats_from_checkpoint(const Checkpoint& ck);

struct VariantRun {
  AblationRow row;
  TrainResult training;
};

/// Trains and scores one (inputs, interaction) combination on the test split.
VariantRun run_variant(const ExperimentConfig& cfg, const PreparedData& data,
                       const InputVariant& inputs, InteractionMode interaction);

}  // namespace hiam
