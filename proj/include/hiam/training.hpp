#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "hiam/aggregation.hpp"
#include "hiam/model.hpp"
#include "json.hpp"

namespace hiam {

inline constexpr double kStdFloor = 1e-6;

/// Global Z-score statistics per matrix family, in passenger counts. The
/// unfinished-order vector shares the OD family's statistics.
struct NormStats {
  double od_mean = 0.0;
  double od_std = 1.0;
  double do_mean = 0.0;
  double do_std = 1.0;

  Matrix normalize_od(const Matrix& x) const { return (x.array() - od_mean) / od_std; }
  Matrix normalize_do(const Matrix& x) const { return (x.array() - do_mean) / do_std; }
  Matrix denormalize_od(const Matrix& x) const { return x.array() * od_std + od_mean; }
  Matrix denormalize_do(const Matrix& x) const { return x.array() * do_std + do_mean; }

  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
  bool operator==(const NormStats&) const = default;
};

/// OD family pools IOD, UOD^l, UOD^s and OD target values; DO family pools
/// DO inputs and targets. Population std, clamped to kStdFloor.
/// Throws ErrorKind::InsufficientData on an empty split.
NormStats fit_norm_stats(std::span<const SnapshotSample> train);

SnapshotSample normalize(const SnapshotSample& raw, const NormStats& stats);
std::vector<SnapshotSample> normalize(std::span<const SnapshotSample> raw, const NormStats& stats);

/// Mean absolute error over every entry and horizon; OD and DO terms
/// averaged with equal weight. Throws ErrorKind::Dimension on shape mismatch.
Var mae_loss(const Forecast& forecast, std::span<const SampleTarget> targets);
double mae_loss(std::span<const SampleTarget> preds, std::span<const SampleTarget> targets);

enum class LrSchedule { StepDecay, FlatThenDecay };

struct TrainConfig {
  int batch_size = 8;
  int epochs = 300;
  double base_lr = 1e-3;
  double decay_factor = 0.5;
  int decay_every_epochs = 20;
  LrSchedule schedule = LrSchedule::StepDecay;
  /// FlatThenDecay only: constant lr for this many epochs, then step decay.
  int flat_epochs = 60;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Stop after this many optimizer steps; 0 means no cap.
  std::int64_t max_steps = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// StepDecay: base * factor^floor(epoch / every). FlatThenDecay: base for
/// epoch < flat, then base * factor^(1 + floor((epoch - flat) / every)).
double learning_rate(const TrainConfig& cfg, int epoch);

class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  void step(ParameterSet& params, const Gradients& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

struct HistoryRow {
  std::int64_t step = 0;
  int epoch = 0;
  double train_loss = 0.0;
  /// Set on the last step of each epoch only.
  std::optional<double> val_mape_od_mean;
  std::optional<double> val_mape_do_mean;
};

struct TrainResult {
  ParameterSet best_params;
  int best_epoch = -1;
  double best_val_mape = 0.0;
  std::vector<HistoryRow> history;
};

/// Initializes the model's parameters from cfg.seed and trains on raw
/// (un-normalized) samples. After each epoch the validation network MAPE is
/// computed in count space; the parameters with the lowest mean of OD and DO
/// MAPE over horizons are kept and also left in the model on return.
/// Throws ErrorKind::Divergence naming the step if the loss is not finite.
TrainResult train(HiamModel& model, std::span<const SnapshotSample> train_raw,
                  std::span<const SnapshotSample> val_raw, const NormStats& stats,
                  const TrainConfig& cfg);

/// CSV `step,epoch,train_loss,val_mape_od_mean,val_mape_do_mean`; absent
/// values are empty fields.
void write_history_csv(std::span<const HistoryRow> history, const std::filesystem::path& path);

}  // namespace hiam
