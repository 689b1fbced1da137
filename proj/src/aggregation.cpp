#include "hiam/aggregation.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "hiam/error.hpp"

namespace hiam {

namespace {

Eigen::MatrixXi column_lookup(const Eigen::MatrixXi& map) {
  const int n = static_cast<int>(map.rows());
  const int k = static_cast<int>(map.cols());
  Eigen::MatrixXi lookup = Eigen::MatrixXi::Constant(n, n, k - 1);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c + 1 < k; ++c) lookup(i, map(i, c)) = c;
  }
  return lookup;
}

void validate_map(const Eigen::MatrixXi& map, const char* which) {
  const int n = static_cast<int>(map.rows());
  const int k = static_cast<int>(map.cols());
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorKind::Config, std::string(which) + " map: " + msg);
  };
  if (n <= 0 || k <= 0) fail("empty");
  if (k > n) fail("K=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  for (int i = 0; i < n; ++i) {
    std::set<int> seen;
    for (int c = 0; c + 1 < k; ++c) {
      const int s = map(i, c);
      if (s < 0 || s >= n || s == i || !seen.insert(s).second) {
        fail("row " + std::to_string(i) + " has invalid partner " + std::to_string(s));
      }
    }
    if (map(i, k - 1) != CompressionMaps::kRemainder) {
      fail("row " + std::to_string(i) + " lacks the -1 remainder sentinel");
    }
  }
}

Eigen::MatrixXi rank_partners(const Eigen::MatrixXi& counts, int k) {
  const int n = static_cast<int>(counts.rows());
  Eigen::MatrixXi map(n, k);
  std::vector<int> order;
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    // Stable sort keeps ascending index among ties, which is also the
    // padding rule for partners never observed.
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts(i, a) > counts(i, b); });
    for (int c = 0; c + 1 < k; ++c) map(i, c) = order[c];
    map(i, k - 1) = CompressionMaps::kRemainder;
  }
  return map;
}

void normalize_rows(Matrix& counts, const Matrix& fallback) {
  for (Eigen::Index j = 0; j < counts.rows(); ++j) {
    const double total = counts.row(j).sum();
    if (total > 0.0) {
      counts.row(j) /= total;
    } else {
      counts.row(j) = fallback.row(j);
    }
  }
}

constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

}  // namespace

CompressionMaps::CompressionMaps(Eigen::MatrixXi od_map, Eigen::MatrixXi do_map)
    : od_map_(std::move(od_map)), do_map_(std::move(do_map)) {
  validate_map(od_map_, "OD");
  validate_map(do_map_, "DO");
  if (od_map_.rows() != do_map_.rows() || od_map_.cols() != do_map_.cols()) {
    throw Error(ErrorKind::Dimension, "OD and DO maps differ in shape");
  }
  od_lookup_ = column_lookup(od_map_);
  do_lookup_ = column_lookup(do_map_);
}

CompressionMaps build_compression_maps(std::span<const Transaction> training_log, int stations,
                                       int k) {
  if (k <= 0 || k > stations) {
    throw Error(ErrorKind::Config, "K=" + std::to_string(k) + " must lie in [1, N=" +
                                       std::to_string(stations) + "]");
  }
  if (training_log.empty()) {
    throw Error(ErrorKind::EmptyInput, "compression maps need a non-empty training log");
  }
  Eigen::MatrixXi od_counts = Eigen::MatrixXi::Zero(stations, stations);
  for (const auto& t : training_log) {
    if (t.entry_station < 0 || t.entry_station >= stations || t.exit_station < 0 ||
        t.exit_station >= stations) {
      throw Error(ErrorKind::Dimension, "transaction station outside [0, N)");
    }
    ++od_counts(t.entry_station, t.exit_station);
  }
  Eigen::MatrixXi do_counts = od_counts.transpose();
  return CompressionMaps(rank_partners(od_counts, k), rank_partners(do_counts, k));
}

LogIndex::LogIndex(std::span<const Transaction> log)
    : by_entry_(log.begin(), log.end()), by_exit_(log.begin(), log.end()) {
  std::stable_sort(by_entry_.begin(), by_entry_.end(),
                   [](const auto& a, const auto& b) { return a.entry_interval < b.entry_interval; });
  std::stable_sort(by_exit_.begin(), by_exit_.end(),
                   [](const auto& a, const auto& b) { return a.exit_interval < b.exit_interval; });
  for (const auto& t : by_entry_) max_duration_ = std::max(max_duration_, t.duration());
}

std::span<const Transaction> LogIndex::entered_in(std::int64_t interval) const {
  auto lo = std::partition_point(by_entry_.begin(), by_entry_.end(),
                                 [&](const Transaction& t) { return t.entry_interval < interval; });
  auto hi = std::partition_point(lo, by_entry_.end(),
                                 [&](const Transaction& t) { return t.entry_interval <= interval; });
  return {lo, hi};
}

std::span<const Transaction> LogIndex::exited_in(std::int64_t interval) const {
  auto lo = std::partition_point(by_exit_.begin(), by_exit_.end(),
                                 [&](const Transaction& t) { return t.exit_interval < interval; });
  auto hi = std::partition_point(lo, by_exit_.end(),
                                 [&](const Transaction& t) { return t.exit_interval <= interval; });
  return {lo, hi};
}

IntervalSnapshot build_snapshot(const LogIndex& index, std::int64_t interval,
                                std::int64_t reference, const CompressionMaps& maps) {
  if (interval > reference) {
    throw Error(ErrorKind::Config, "snapshot interval " + std::to_string(interval) +
                                       " lies after its reference " + std::to_string(reference));
  }
  const int n = maps.stations();
  const int k = maps.k();
  IntervalSnapshot snap;
  snap.interval = interval;
  snap.reference = reference;
  snap.iod = Eigen::MatrixXi::Zero(n, k);
  snap.od = Eigen::MatrixXi::Zero(n, k);
  snap.dom = Eigen::MatrixXi::Zero(n, k);
  snap.u = Eigen::VectorXi::Zero(n);
  for (const auto& t : index.entered_in(interval)) {
    const int col = maps.od_column(t.entry_station, t.exit_station);
    ++snap.od(t.entry_station, col);
    if (t.exit_interval <= reference) {
      ++snap.iod(t.entry_station, col);
    } else {
      ++snap.u(t.entry_station);
    }
  }
  for (const auto& t : index.exited_in(interval)) {
    ++snap.dom(t.exit_station, maps.do_column(t.exit_station, t.entry_station));
  }
  return snap;
}

IntervalSnapshot build_snapshot(std::span<const Transaction> log, std::int64_t interval,
                                std::int64_t reference, const CompressionMaps& maps) {
  return build_snapshot(LogIndex(log), interval, reference, maps);
}

Matrix compute_dd_long(std::span<const Transaction> training_log, int day_of_week_,
                       int interval_of_day_, int elapsed, const CompressionMaps& maps,
                       int intervals_per_day, std::vector<std::string>* warnings) {
  const int n = maps.stations();
  const int k = maps.k();
  bool weekday_present = false;
  for (const auto& t : training_log) {
    if (day_of_week(t.entry_interval, intervals_per_day) == day_of_week_) {
      weekday_present = true;
      break;
    }
  }
  if (!weekday_present) {
    std::string msg = "day-of-week " + std::to_string(day_of_week_) +
                      " absent from training log; using pooled statistics";
    spdlog::warn("{}", msg);
    if (warnings) warnings->push_back(std::move(msg));
  }
  Matrix counts = Matrix::Zero(n, k);
  for (const auto& t : training_log) {
    if (interval_of_day(t.entry_interval, intervals_per_day) != interval_of_day_) continue;
    if (weekday_present && day_of_week(t.entry_interval, intervals_per_day) != day_of_week_) {
      continue;
    }
    if (t.duration() <= elapsed) continue;
    counts(t.entry_station, maps.od_column(t.entry_station, t.exit_station)) += 1.0;
  }
  normalize_rows(counts, Matrix::Constant(n, k, 1.0 / k));
  return counts;
}

LongTermTable::LongTermTable(std::span<const Transaction> training_log,
                             const CompressionMaps& maps, int intervals_per_day, int max_elapsed)
    : per_day_(intervals_per_day), max_elapsed_(max_elapsed) {
  const int n = maps.stations();
  const int k = maps.k();
  const auto slot = [&](int dow, int iod, int e) {
    return (static_cast<std::size_t>(dow) * per_day_ + iod) * max_elapsed_ + e;
  };
  const std::size_t per_group = static_cast<std::size_t>(per_day_) * max_elapsed_;
  std::vector<Matrix> by_dow(7 * per_group, Matrix::Zero(n, k));
  std::vector<Matrix> pooled(per_group, Matrix::Zero(n, k));
  std::array<bool, 7> present{};
  for (const auto& t : training_log) {
    const int dow = day_of_week(t.entry_interval, per_day_);
    const int iod = interval_of_day(t.entry_interval, per_day_);
    present[dow] = true;
    const int col = maps.od_column(t.entry_station, t.exit_station);
    for (int e = 0; e < max_elapsed_ && e < t.duration(); ++e) {
      by_dow[slot(dow, iod, e)](t.entry_station, col) += 1.0;
      pooled[static_cast<std::size_t>(iod) * max_elapsed_ + e](t.entry_station, col) += 1.0;
    }
  }
  const Matrix uniform = Matrix::Constant(n, k, 1.0 / k);
  for (auto& m : pooled) normalize_rows(m, uniform);
  table_.resize(by_dow.size());
  for (int dow = 0; dow < 7; ++dow) {
    if (!present[dow]) {
      spdlog::warn("day-of-week {} absent from training log; using pooled statistics", dow);
    }
    for (int iod = 0; iod < per_day_; ++iod) {
      for (int e = 0; e < max_elapsed_; ++e) {
        const auto s = slot(dow, iod, e);
        if (present[dow]) {
          table_[s] = std::move(by_dow[s]);
          normalize_rows(table_[s], uniform);
        } else {
          table_[s] = pooled[static_cast<std::size_t>(iod) * max_elapsed_ + e];
        }
      }
    }
  }
}

const Matrix& LongTermTable::at(int dow, int iod, int elapsed) const {
  if (elapsed < 0 || elapsed >= max_elapsed_ || dow < 0 || dow >= 7 || iod < 0 ||
      iod >= per_day_) {
    throw Error(ErrorKind::Dimension, "long-term table lookup out of range");
  }
  return table_[(static_cast<std::size_t>(dow) * per_day_ + iod) * max_elapsed_ + elapsed];
}

Matrix compute_dd_short(const LogIndex& index, std::int64_t reference,
                        std::int64_t input_interval, const CompressionMaps& maps,
                        int intervals_per_day, const Matrix& long_term) {
  const std::int64_t entered = input_interval - intervals_per_day;
  const std::int64_t observed = reference - intervals_per_day;
  if (entered < 0) return long_term;
  Matrix counts = Matrix::Zero(maps.stations(), maps.k());
  for (const auto& t : index.entered_in(entered)) {
    // Destinations are only known for trips that have finished by now.
    if (t.exit_interval > observed && t.exit_interval <= reference) {
      counts(t.entry_station, maps.od_column(t.entry_station, t.exit_station)) += 1.0;
    }
  }
  normalize_rows(counts, long_term);
  return counts;
}

Matrix estimate_uod(const Vector& u, const Matrix& dd) {
  if (u.size() != dd.rows()) {
    throw Error(ErrorKind::Dimension, "unfinished vector has " + std::to_string(u.size()) +
                                          " stations, distribution has " +
                                          std::to_string(dd.rows()));
  }
  return u.asDiagonal() * dd;
}

std::int64_t count_references(std::int64_t begin, std::int64_t end, int n, int m) {
  return std::max<std::int64_t>(0, end - begin - n - m + 1);
}

namespace {

struct CompleteCounts {
  Matrix od;
  Matrix dom;
};

std::vector<SnapshotSample> build_split(const LogIndex& index, const CompressionMaps& maps,
                                        const LongTermTable& long_term, const DatasetSpec& spec,
                                        std::int64_t begin, std::int64_t end) {
  std::vector<SnapshotSample> samples;
  const int n = spec.n;
  const int m = spec.m;
  const int per_day = spec.intervals_per_day;
  if (count_references(begin, end, n, m) == 0) return samples;

  std::vector<CompleteCounts> complete;
  complete.reserve(static_cast<std::size_t>(end - begin));
  for (std::int64_t tau = begin; tau < end; ++tau) {
    auto snap = build_snapshot(index, tau, kNever, maps);
    complete.push_back({snap.od.cast<double>(), snap.dom.cast<double>()});
  }

  for (std::int64_t t = begin + n - 1; t + m < end; ++t) {
    SnapshotSample sample;
    sample.reference = t;
    for (std::int64_t s = t - n + 1; s <= t; ++s) {
      const auto snap = build_snapshot(index, s, t, maps);
      const auto elapsed = static_cast<int>(t - s);
      const Matrix& dd_long =
          long_term.at(day_of_week(s, per_day), interval_of_day(s, per_day), elapsed);
      const Matrix dd_short = compute_dd_short(index, t, s, maps, per_day, dd_long);
      SampleInput in;
      in.iod = snap.iod.cast<double>();
      in.u = snap.u.cast<double>();
      in.uod_long = estimate_uod(in.u, dd_long);
      in.uod_short = estimate_uod(in.u, dd_short);
      in.dom = snap.dom.cast<double>();
      sample.inputs.push_back(std::move(in));
    }
    for (std::int64_t tau = t + 1; tau <= t + m; ++tau) {
      const auto& c = complete[static_cast<std::size_t>(tau - begin)];
      sample.targets.push_back({c.od, c.dom});
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace

Dataset build_dataset(std::span<const Transaction> log, const CompressionMaps& maps,
                      const MetroGraph& graph, const DatasetSpec& spec) {
  const auto& sb = spec.splits;
  if (spec.n <= 0 || spec.m <= 0 || spec.intervals_per_day <= 0) {
    throw Error(ErrorKind::Config, "n, m and intervals_per_day must be positive");
  }
  if (sb.train_begin < 0 || sb.train_begin > sb.train_end || sb.train_end > sb.val_end ||
      sb.val_end > sb.test_end) {
    throw Error(ErrorKind::Config, "split bounds must be ordered and nonnegative");
  }
  if (graph.station_count() != maps.stations()) {
    throw Error(ErrorKind::Dimension, "graph has " + std::to_string(graph.station_count()) +
                                          " stations, maps have " +
                                          std::to_string(maps.stations()));
  }
  if (sb.test_end - sb.train_begin < spec.n + spec.m) {
    throw Error(ErrorKind::InsufficientData,
                "log spans " + std::to_string(sb.test_end - sb.train_begin) +
                    " intervals, need at least n+m=" + std::to_string(spec.n + spec.m));
  }

  const LogIndex index(log);
  std::vector<Transaction> training;
  for (const auto& t : index.all()) {
    if (t.entry_interval >= sb.train_begin && t.entry_interval < sb.train_end) {
      training.push_back(t);
    }
  }
  const LongTermTable long_term(training, maps, spec.intervals_per_day, spec.n);

  Dataset ds;
  ds.spec = spec;
  ds.stations = maps.stations();
  ds.k = maps.k();
  ds.train = build_split(index, maps, long_term, spec, sb.train_begin, sb.train_end);
  ds.val = build_split(index, maps, long_term, spec, sb.train_end, sb.val_end);
  ds.test = build_split(index, maps, long_term, spec, sb.val_end, sb.test_end);
  for (std::int64_t tau = sb.train_begin; tau < sb.train_end; ++tau) {
    auto snap = build_snapshot(index, tau, kNever, maps);
    ds.train_truth.push_back({tau, snap.od.cast<double>(), snap.dom.cast<double>()});
  }
  return ds;
}

}  // namespace hiam
