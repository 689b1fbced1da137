#include "hiam/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "hiam/error.hpp"
#include "hiam/evaluation.hpp"

namespace hiam {

nlohmann::json NormStats::to_json() const {
  return {{"od_mean", od_mean}, {"od_std", od_std}, {"do_mean", do_mean}, {"do_std", do_std}};
}

NormStats NormStats::from_json(const nlohmann::json& j) {
  NormStats s;
  for (const char* key : {"od_mean", "od_std", "do_mean", "do_std"}) {
    if (!j.contains(key)) throw Error(ErrorKind::MissingKey, std::string("norm_stats.") + key);
  }
  s.od_mean = j.at("od_mean").get<double>();
  s.od_std = j.at("od_std").get<double>();
  s.do_mean = j.at("do_mean").get<double>();
  s.do_std = j.at("do_std").get<double>();
  return s;
}

namespace {

template <typename Visit>
void for_each_od(const SnapshotSample& s, Visit visit) {
  for (const SampleInput& in : s.inputs) {
    visit(in.iod);
    visit(in.uod_long);
    visit(in.uod_short);
  }
  for (const SampleTarget& t : s.targets) visit(t.od);
}

template <typename Visit>
void for_each_do(const SnapshotSample& s, Visit visit) {
  for (const SampleInput& in : s.inputs) visit(in.dom);
  for (const SampleTarget& t : s.targets) visit(t.dom);
}

struct Moments {
  double sum = 0.0;
  double count = 0.0;
  double mean = 0.0;
  double squares = 0.0;
};

}  // namespace

NormStats fit_norm_stats(std::span<const SnapshotSample> train) {
  if (train.empty()) throw Error(ErrorKind::InsufficientData, "no training samples");
  Moments od, dom;
  for (const auto& s : train) {
    for_each_od(s, [&](const Matrix& x) {
      od.sum += x.sum();
      od.count += static_cast<double>(x.size());
    });
    for_each_do(s, [&](const Matrix& x) {
      dom.sum += x.sum();
      dom.count += static_cast<double>(x.size());
    });
  }
  od.mean = od.count > 0 ? od.sum / od.count : 0.0;
  dom.mean = dom.count > 0 ? dom.sum / dom.count : 0.0;
  for (const auto& s : train) {
    for_each_od(s, [&](const Matrix& x) { od.squares += (x.array() - od.mean).square().sum(); });
    for_each_do(s, [&](const Matrix& x) { dom.squares += (x.array() - dom.mean).square().sum(); });
  }
  NormStats stats;
  stats.od_mean = od.mean;
  stats.do_mean = dom.mean;
  stats.od_std = std::max(kStdFloor, od.count > 0 ? std::sqrt(od.squares / od.count) : 0.0);
  stats.do_std = std::max(kStdFloor, dom.count > 0 ? std::sqrt(dom.squares / dom.count) : 0.0);
  return stats;
}

SnapshotSample normalize(const SnapshotSample& raw, const NormStats& stats) {
  SnapshotSample out;
  out.reference = raw.reference;
  out.inputs.reserve(raw.inputs.size());
  for (const SampleInput& in : raw.inputs) {
    out.inputs.push_back({stats.normalize_od(in.iod), stats.normalize_od(in.u),
                          stats.normalize_od(in.uod_long), stats.normalize_od(in.uod_short),
                          stats.normalize_do(in.dom)});
  }
  out.targets.reserve(raw.targets.size());
  for (const SampleTarget& t : raw.targets) {
    out.targets.push_back({stats.normalize_od(t.od), stats.normalize_do(t.dom)});
  }
  return out;
}

std::vector<SnapshotSample> normalize(std::span<const SnapshotSample> raw,
                                      const NormStats& stats) {
  std::vector<SnapshotSample> out;
  out.reserve(raw.size());
  for (const auto& s : raw) out.push_back(normalize(s, stats));
  return out;
}

Var mae_loss(const Forecast& forecast, std::span<const SampleTarget> targets) {
  if (forecast.od.size() != targets.size() || forecast.dom.size() != targets.size() ||
      targets.empty()) {
    throw Error(ErrorKind::Dimension, "loss: " + std::to_string(forecast.od.size()) +
                                          " predicted horizons, " +
                                          std::to_string(targets.size()) + " targets");
  }
  Tape& tape = *forecast.od.front().tape();
  const double weight = 0.5 / static_cast<double>(targets.size());
  Var total;
  for (std::size_t h = 0; h < targets.size(); ++h) {
    const Var od = ad::mean_abs_error(forecast.od[h], tape.constant(targets[h].od));
    const Var dom = ad::mean_abs_error(forecast.dom[h], tape.constant(targets[h].dom));
    const Var term = ad::affine(ad::add(od, dom), weight, 0.0);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

double mae_loss(std::span<const SampleTarget> preds, std::span<const SampleTarget> targets) {
  if (preds.size() != targets.size() || targets.empty()) {
    throw Error(ErrorKind::Dimension, "loss: horizon count mismatch");
  }
  double od = 0.0, dom = 0.0;
  for (std::size_t h = 0; h < targets.size(); ++h) {
    const auto& p = preds[h];
    const auto& t = targets[h];
    if (p.od.rows() != t.od.rows() || p.od.cols() != t.od.cols() ||
        p.dom.rows() != t.dom.rows() || p.dom.cols() != t.dom.cols()) {
      throw Error(ErrorKind::Dimension, "loss: prediction and target shapes differ");
    }
    od += (p.od - t.od).cwiseAbs().mean();
    dom += (p.dom - t.dom).cwiseAbs().mean();
  }
  return 0.5 * (od + dom) / static_cast<double>(targets.size());
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw Error(ErrorKind::Config, "batch_size must be positive");
  if (epochs <= 0) throw Error(ErrorKind::Config, "epochs must be positive");
  if (base_lr < 0) throw Error(ErrorKind::Config, "base_lr must be non-negative");
  if (decay_factor <= 0) throw Error(ErrorKind::Config, "decay_factor must be positive");
  if (decay_every_epochs <= 0) throw Error(ErrorKind::Config, "decay_every_epochs must be positive");
  if (flat_epochs < 0) throw Error(ErrorKind::Config, "flat_epochs must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw Error(ErrorKind::Config, "Adam betas must lie in [0, 1)");
  }
  if (adam_epsilon <= 0) throw Error(ErrorKind::Config, "adam_epsilon must be positive");
  if (max_steps < 0) throw Error(ErrorKind::Config, "max_steps must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"base_lr", base_lr},
          {"decay_factor", decay_factor},
          {"decay_every_epochs", decay_every_epochs},
          {"schedule", schedule == LrSchedule::StepDecay ? "step_decay" : "flat_then_decay"},
          {"flat_epochs", flat_epochs},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_epsilon", adam_epsilon},
          {"max_steps", max_steps},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw Error(ErrorKind::MissingKey, std::string("training.") + key);
    return j.at(key);
  };
  TrainConfig c;
  try {
    c.batch_size = need("batch_size").get<int>();
    c.epochs = need("epochs").get<int>();
    c.base_lr = need("base_lr").get<double>();
    c.decay_factor = need("decay_factor").get<double>();
    c.decay_every_epochs = need("decay_every_epochs").get<int>();
    const auto schedule = need("schedule").get<std::string>();
    if (schedule == "step_decay") {
      c.schedule = LrSchedule::StepDecay;
    } else if (schedule == "flat_then_decay") {
      c.schedule = LrSchedule::FlatThenDecay;
    } else {
      throw Error(ErrorKind::Config, "unknown schedule '" + schedule + "'");
    }
    c.flat_epochs = need("flat_epochs").get<int>();
    c.beta1 = need("beta1").get<double>();
    c.beta2 = need("beta2").get<double>();
    c.adam_epsilon = need("adam_epsilon").get<double>();
    c.max_steps = need("max_steps").get<std::int64_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.schedule == LrSchedule::FlatThenDecay) {
    if (epoch < cfg.flat_epochs) return cfg.base_lr;
    const int decays = 1 + (epoch - cfg.flat_epochs) / cfg.decay_every_epochs;
    return cfg.base_lr * std::pow(cfg.decay_factor, decays);
  }
  return cfg.base_lr * std::pow(cfg.decay_factor, epoch / cfg.decay_every_epochs);
}

void Adam::step(ParameterSet& params, const Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& w = params.at(name);
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(w.rows(), w.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(w.rows(), w.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

namespace {

struct ValidationScore {
  std::optional<double> od;
  std::optional<double> dom;
  std::optional<double> combined;
};

ValidationScore validate_model(const HiamModel& model, const NormStats& stats,
                               std::span<const SnapshotSample> val_raw) {
  const int m = model.config().m;
  std::vector<MapeAccumulator> od(m), dom(m);
  for (const auto& sample : val_raw) {
    const auto preds = predict_counts(model, stats, sample);
    for (int h = 0; h < m; ++h) {
      od[h].add(preds[h].od, sample.targets[h].od);
      dom[h].add(preds[h].dom, sample.targets[h].dom);
    }
  }
  auto mean = [](const std::vector<MapeAccumulator>& acc) -> std::optional<double> {
    double sum = 0.0;
    int count = 0;
    for (const auto& a : acc) {
      if (auto v = a.value()) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / count;
  };
  ValidationScore s{mean(od), mean(dom), std::nullopt};
  if (s.od && s.dom) {
    s.combined = 0.5 * (*s.od + *s.dom);
  } else if (s.od || s.dom) {
    s.combined = s.od ? s.od : s.dom;
  }
  return s;
}

bool all_finite(const Gradients& grads) {
  for (const auto& [_, g] : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

}  // namespace

TrainResult train(HiamModel& model, std::span<const SnapshotSample> train_raw,
                  std::span<const SnapshotSample> val_raw, const NormStats& stats,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_raw.empty()) throw Error(ErrorKind::InsufficientData, "training split is empty");
  if (val_raw.empty()) throw Error(ErrorKind::InsufficientData, "validation split is empty");

  model.params().initialize(cfg.seed);
  const std::vector<SnapshotSample> samples = normalize(train_raw, stats);

  TrainResult result;
  result.best_params = model.params();
  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  bool capped = false;

  for (int epoch = 0; epoch < cfg.epochs && !capped; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = learning_rate(cfg, epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      Gradients batch;
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const SnapshotSample& s = samples[order[i]];
        Tape tape;
        const BoundModel bound = model.bind(tape);
        const Var loss = mae_loss(model.forward(tape, bound, s), s.targets);
        batch_loss += loss.value()(0, 0) * scale;
        const Gradients g = gradients(tape, loss);
        for (const auto& [name, value] : g) {
          auto [it, inserted] = batch.try_emplace(name, value * scale);
          if (!inserted) it->second += value * scale;
        }
      }
      ++step;
      if (!std::isfinite(batch_loss) || !all_finite(batch)) {
        throw Error(ErrorKind::Divergence, "non-finite loss at step " + std::to_string(step) +
                                               " (epoch " + std::to_string(epoch) + ")");
      }
      adam.step(model.params(), batch, lr);
      result.history.push_back({step, epoch, batch_loss, std::nullopt, std::nullopt});
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        capped = true;
        break;
      }
    }

    const ValidationScore score = validate_model(model, stats, val_raw);
    result.history.back().val_mape_od_mean = score.od;
    result.history.back().val_mape_do_mean = score.dom;
    spdlog::info("epoch {} lr {:.3g} loss {:.5f} val od {:.4f} do {:.4f}", epoch, lr,
                 result.history.back().train_loss, score.od.value_or(NAN),
                 score.dom.value_or(NAN));
    if (score.combined && (result.best_epoch < 0 || *score.combined < result.best_val_mape)) {
      result.best_epoch = epoch;
      result.best_val_mape = *score.combined;
      result.best_params = model.params();
    }
  }
  model.params() = result.best_params;
  return result;
}

void write_history_csv(std::span<const HistoryRow> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "step,epoch,train_loss,val_mape_od_mean,val_mape_do_mean\n";
  out.precision(17);
  for (const auto& row : history) {
    out << row.step << ',' << row.epoch << ',' << row.train_loss << ',';
    if (row.val_mape_od_mean) out << *row.val_mape_od_mean;
    out << ',';
    if (row.val_mape_do_mean) out << *row.val_mape_do_mean;
    out << '\n';
  }
}

}  // namespace hiam
