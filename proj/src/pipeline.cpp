#include "hiam/pipeline.hpp"

#include <spdlog/spdlog.h>

#include "hiam/error.hpp"

namespace hiam {

CompressionMaps training_maps(std::span<const Transaction> log, const ExperimentConfig& cfg) {
  const auto& s = cfg.dataset.splits;
  std::vector<Transaction> train;
  for (const auto& t : log) {
    if (t.entry_interval >= s.train_begin && t.entry_interval < s.train_end) train.push_back(t);
  }
  return build_compression_maps(train, cfg.graph.station_count(), cfg.k);
}

PreparedData prepare(std::span<const Transaction> log, const ExperimentConfig& cfg) {
  PreparedData d;
  d.maps = training_maps(log, cfg);
  d.dataset = build_dataset(log, d.maps, cfg.graph, cfg.dataset);
  d.stats = fit_norm_stats(d.dataset.train);
  return d;
}

nlohmann::json checkpoint_manifest(const ModelConfig& model, const NormStats& stats,
                                   int best_epoch) {
  return {{"model", model.to_json()}, {"norm_stats", stats.to_json()}, {"best_epoch", best_epoch}};
}

HiamModel model_from_checkpoint(const Checkpoint& ck, const MetroGraph& graph) {
  if (!ck.manifest.contains("model")) throw Error(ErrorKind::MissingKey, "checkpoint.model");
  HiamModel model(ModelConfig::from_json(ck.manifest.at("model")), graph);
  const auto& want = model.params().values();
  const auto& have = ck.params.values();
  if (want.size() != have.size()) {
    throw Error(ErrorKind::Dimension, "checkpoint holds " + std::to_string(have.size()) +
                                          " parameters, model has " +
                                          std::to_string(want.size()));
  }
  for (const auto& [name, value] : want) {
    auto it = have.find(name);
    if (it == have.end()) throw Error(ErrorKind::Dimension, "checkpoint lacks parameter " + name);
    if (it->second.rows() != value.rows() || it->second.cols() != value.cols()) {
      throw Error(ErrorKind::Dimension, "parameter " + name + " has the wrong shape");
    }
  }
  model.params() = ck.params;
  return model;
}

NormStats stats_from_checkpoint(const Checkpoint& ck) {
  if (!ck.manifest.contains("norm_stats")) {
    throw Error(ErrorKind::MissingKey, "checkpoint.norm_stats");
  }
  return NormStats::from_json(ck.manifest.at("norm_stats"));
}

VariantRun run_variant(const ExperimentConfig& cfg, const PreparedData& data,
                       const InputVariant& inputs, InteractionMode interaction) {
  ModelConfig mc = cfg.model;
  mc.use_u_raw = inputs.use_u_raw;
  mc.use_uod_short = inputs.use_uod_short;
  mc.use_uod_long = inputs.use_uod_long;
  mc.interaction = interaction;
  spdlog::info("training variant {} / {}", inputs.name, to_string(interaction));
  HiamModel model(mc, cfg.graph);
  VariantRun run;
  run.training = train(model, data.dataset.train, data.dataset.val, data.stats, cfg.train);
  const HaBaseline ha(data.dataset.train_truth, cfg.dataset.intervals_per_day);
  const EvaluationReport report = evaluate(model, data.stats, data.dataset.test, ha, data.maps);
  run.row = {inputs.name, interaction, report.model};
  return run;
}

}  // namespace hiam
