#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiam/aggregation.hpp"
#include "hiam/model.hpp"
#include "hiam/training.hpp"
#include "json.hpp"

namespace hiam {

/// Σ|pred − truth| / Σ|truth| over all cells; absent when truth is all zero.
std::optional<double> network_mape(const Matrix& pred, const Matrix& truth);

/// Network MAPE accumulated over many matrices: numerator and denominator
/// are summed before dividing.
class MapeAccumulator {
 public:
  void add(const Matrix& pred, const Matrix& truth);
  std::optional<double> value() const;

 private:
  double error_ = 0.0;
  double total_ = 0.0;
};

struct GroupMape {
  std::optional<double> topk;
  std::optional<double> remainder;
};

/// MAPE over the mapped partner columns 0..K-2 and over the merged
/// remainder column K-1 separately.
GroupMape split_group_mape(const Matrix& pred, const Matrix& truth, const CompressionMaps& maps);

/// Historical average over complete training intervals sharing the target's
/// (day-of-week, interval-of-day); falls back to the same interval-of-day on
/// any weekday, then to the mean of all training intervals.
class HaBaseline {
 public:
  HaBaseline(std::span<const IntervalTruth> train_truth, int intervals_per_day);
  SampleTarget predict(std::int64_t interval) const;

 private:
  int per_day_;
  std::map<std::pair<int, int>, SampleTarget> by_slot_;
  std::map<int, SampleTarget> by_interval_;
  SampleTarget global_;
};

/// De-normalizes a model prediction, snaps it to a 2^-30 passenger grid and
/// clamps negative counts to zero. Normalized integer counts map back exactly.
SampleTarget to_counts(const SampleTarget& normalized, const NormStats& stats);

/// Count-space predictions for every horizon of a raw sample.
std::vector<SampleTarget> predict_counts(const HiamModel& model, const NormStats& stats,
                                         const SnapshotSample& raw);

struct HorizonMetrics {
  int horizon = 0;  ///< 1-based
  std::optional<double> od;
  std::optional<double> dom;
  GroupMape od_groups;
  GroupMape do_groups;
};

struct MethodReport {
  std::string name;
  std::vector<HorizonMetrics> horizons;
  std::optional<double> mean_od() const;
  std::optional<double> mean_do() const;
};

/// Scores count-space predictions (one vector of m targets per sample)
/// against raw samples.
MethodReport score(const std::string& name, std::span<const std::vector<SampleTarget>> preds,
                   std::span<const SnapshotSample> truth, const CompressionMaps& maps);

struct EvaluationReport {
  std::size_t samples = 0;
  MethodReport model;
  MethodReport ha;

  nlohmann::json to_json() const;
};

EvaluationReport evaluate(const HiamModel& model, const NormStats& stats,
                          std::span<const SnapshotSample> test_raw, const HaBaseline& ha,
                          const CompressionMaps& maps);

void write_report_json(const EvaluationReport& report, const std::filesystem::path& path);
/// `method,horizon,od_mape,do_mape,od_topk,od_remainder,do_topk,do_remainder`.
void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path);

/// Input variants in table order, from IOD only to IOD+U(short+long).
struct InputVariant {
  std::string name;
  bool use_u_raw = false;
  bool use_uod_short = false;
  bool use_uod_long = false;
};
std::vector<InputVariant> input_variants();

struct AblationRow {
  std::string inputs;
  InteractionMode interaction = InteractionMode::Dit;
  MethodReport metrics;
};

void write_ablation_csv(std::span<const AblationRow> rows, const std::filesystem::path& path);
/// Markdown tables: mean OD and DO MAPE, variants as columns, interaction
/// modes as rows.
std::string render_ablation_markdown(std::span<const AblationRow> rows);

// Static SVG plots.
void write_mape_bars_svg(const EvaluationReport& report, const std::filesystem::path& path);
void write_loss_curve_svg(std::span<const HistoryRow> history, const std::filesystem::path& path);

}  // namespace hiam
