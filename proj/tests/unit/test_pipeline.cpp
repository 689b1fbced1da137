#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "hiam/pipeline.hpp"

using namespace hiam;
using hiam::test::thrown_kind;

namespace {

const std::filesystem::path kConfigs = HIAM_CONFIG_DIR;

struct TinyRun {
  ExperimentConfig cfg;
  TransactionLog log;
  PreparedData data;
};

const TinyRun& tiny_run() {
  static const TinyRun run = [] {
    TinyRun r;
    r.cfg = load_config(kConfigs / "tiny.json");
    r.log = generate_log(r.cfg.sim);
    r.data = prepare(r.log, r.cfg);
    return r;
  }();
  return run;
}

}  // namespace

TEST_CASE("prepared splits follow the day boundaries") {
  const TinyRun& r = tiny_run();
  const DatasetSpec& spec = r.cfg.dataset;
  CHECK(r.data.maps.k() == 3);
  CHECK(r.data.dataset.train.size() ==
        static_cast<std::size_t>(count_references(0, spec.splits.train_end, spec.n, spec.m)));
  CHECK(r.data.dataset.test.size() ==
        static_cast<std::size_t>(
            count_references(spec.splits.val_end, spec.splits.test_end, spec.n, spec.m)));
  for (const auto& s : r.data.dataset.val) {
    CHECK(s.reference - spec.n + 1 >= spec.splits.train_end);
    CHECK(s.reference + spec.m < spec.splits.val_end);
  }
  CHECK(r.data.stats.od_std > kStdFloor);
}

TEST_CASE("training maps ignore trips outside the training range") {
  const TinyRun& r = tiny_run();
  TransactionLog extended = r.log;
  const std::int64_t late = r.cfg.dataset.splits.val_end + 3;
  for (int i = 0; i < 500; ++i) extended.push_back({3, late, 4, late + 2});
  CHECK(training_maps(extended, r.cfg) == r.data.maps);
}

TEST_CASE("checkpoint restores an identical model") {
  const TinyRun& r = tiny_run();
  HiamModel model(r.cfg.model, r.cfg.graph);
  model.params().initialize(5);
  const auto path = std::filesystem::temp_directory_path() / "hiam_pipeline_ckpt.bin";
  save_checkpoint(path, checkpoint_manifest(model.config(), r.data.stats, 3), model.params());
  const Checkpoint ck = load_checkpoint(path);
  const HiamModel restored = model_from_checkpoint(ck, r.cfg.graph);
  CHECK(restored.config() == model.config());
  CHECK(stats_from_checkpoint(ck) == r.data.stats);
  const SnapshotSample& s = r.data.dataset.test.front();
  const auto a = predict_counts(model, r.data.stats, s);
  const auto b = predict_counts(restored, r.data.stats, s);
  CHECK(a.front().od == b.front().od);

  Checkpoint broken = ck;
  broken.params.values().begin()->second = Matrix::Zero(1, 1);
  CHECK(thrown_kind([&] { model_from_checkpoint(broken, r.cfg.graph); }) == ErrorKind::Dimension);
  broken = ck;
  broken.manifest["model"]["d"] = 8;
  CHECK(thrown_kind([&] { model_from_checkpoint(broken, r.cfg.graph); }) == ErrorKind::Dimension);
}

TEST_CASE("evaluation rejects a mismatched dataset") {
  const TinyRun& r = tiny_run();
  ModelConfig mc = r.cfg.model;
  mc.k = 2;
  HiamModel model(mc, r.cfg.graph);
  const HaBaseline ha(r.data.dataset.train_truth, r.cfg.dataset.intervals_per_day);
  CHECK(thrown_kind([&] { evaluate(model, r.data.stats, r.data.dataset.test, ha, r.data.maps); }) ==
        ErrorKind::Dimension);
}

TEST_CASE("one ablation variant end to end") {
  const TinyRun& r = tiny_run();
  const InputVariant iod = input_variants().front();
  const VariantRun a = run_variant(r.cfg, r.data, iod, InteractionMode::None);
  const VariantRun b = run_variant(r.cfg, r.data, iod, InteractionMode::None);
  CHECK(a.row.inputs == "IOD");
  REQUIRE(a.row.metrics.horizons.size() == 2);
  CHECK(a.row.metrics.mean_od().has_value());
  CHECK(*a.row.metrics.mean_od() == *b.row.metrics.mean_od());
  CHECK(a.training.best_epoch >= 0);
}
