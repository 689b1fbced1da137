#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "hiam/aggregation.hpp"
#include "hiam/error.hpp"
#include "hiam/nncore.hpp"

namespace hiam::test {

/// Kind of the hiam::Error thrown by `f`, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorKind> thrown_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Random log: each trip enters uniformly in [0, intervals) with duration in
/// [1, max_duration], destination != origin.
inline TransactionLog random_log(std::mt19937_64& rng, int trips, int stations,
                                 std::int64_t intervals, int max_duration) {
  std::uniform_int_distribution<int> station(0, stations - 1);
  std::uniform_int_distribution<std::int64_t> entry(0, intervals - 1);
  std::uniform_int_distribution<int> duration(1, max_duration);
  TransactionLog log;
  for (int i = 0; i < trips; ++i) {
    Transaction t;
    t.entry_station = station(rng);
    do {
      t.exit_station = station(rng);
    } while (t.exit_station == t.entry_station);
    t.entry_interval = entry(rng);
    t.exit_interval = t.entry_interval + duration(rng);
    log.push_back(t);
  }
  std::stable_sort(log.begin(), log.end(), [](const Transaction& a, const Transaction& b) {
    return a.entry_interval < b.entry_interval;
  });
  return log;
}

/// Independent per-transaction classifier. Looks up partner columns by
/// scanning the raw map rows rather than the precomputed lookup tables.
inline IntervalSnapshot brute_force_snapshot(const TransactionLog& log, std::int64_t interval,
                                             std::int64_t reference,
                                             const CompressionMaps& maps) {
  const int n = maps.stations();
  const int k = maps.k();
  auto column = [k](const Eigen::MatrixXi& map, int row, int partner) {
    for (int c = 0; c + 1 < k; ++c) {
      if (map(row, c) == partner) return c;
    }
    return k - 1;
  };
  IntervalSnapshot s;
  s.interval = interval;
  s.reference = reference;
  s.iod = Eigen::MatrixXi::Zero(n, k);
  s.od = Eigen::MatrixXi::Zero(n, k);
  s.dom = Eigen::MatrixXi::Zero(n, k);
  s.u = Eigen::VectorXi::Zero(n);
  for (const Transaction& t : log) {
    if (t.entry_interval == interval) {
      const int c = column(maps.od_map(), t.entry_station, t.exit_station);
      s.od(t.entry_station, c) += 1;
      if (t.exit_interval <= reference) {
        s.iod(t.entry_station, c) += 1;
      } else {
        s.u(t.entry_station) += 1;
      }
    }
    if (t.exit_interval == interval) {
      s.dom(t.exit_station, column(maps.do_map(), t.exit_station, t.entry_station)) += 1;
    }
  }
  return s;
}

/// Max relative error |a − f| / max(|a|, |f|, 1e-6) between analytic
/// gradients and central differences (step 1e-5) over every entry of
/// every parameter. `build_loss` must bind `params` on the given tape.
inline double max_gradient_error(ParameterSet& params,
                                 const std::function<Var(Tape&)>& build_loss) {
  Tape tape;
  const Gradients analytic = gradients(tape, build_loss(tape));
  auto evaluate = [&] {
    Tape t;
    return build_loss(t).value()(0, 0);
  };
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, value] : params.values()) {
    const Matrix& g = analytic.at(name);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = evaluate();
      value.data()[i] = saved - h;
      const double down = evaluate();
      value.data()[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double a = g.data()[i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
  }
  return worst;
}

}  // namespace hiam::test
