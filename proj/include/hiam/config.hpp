#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "hiam/aggregation.hpp"
#include "hiam/model.hpp"
#include "hiam/synthgen.hpp"
#include "hiam/topology.hpp"
#include "hiam/training.hpp"
#include "json.hpp"

namespace hiam {

inline constexpr int kConfigSchemaVersion = 1;

/// One experiment, sectioned per module:
///   schema_version, seed, topology, synthgen, aggregation, model, training.
/// The top-level seed drives both simulation and training.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  MetroGraph graph;
  SimConfig sim;
  int k = 8;
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  nlohmann::json source;
};

/// Throws ErrorKind::MissingKey naming the dotted key, ErrorKind::SchemaVersion
/// on a version mismatch and ErrorKind::Config on invalid values.
ExperimentConfig parse_config(const nlohmann::json& j,
                              std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace hiam
