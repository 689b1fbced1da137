#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiam/synthgen.hpp"
#include "hiam/topology.hpp"

namespace hiam {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Per-station top-(K-1) partner indices plus the merged remainder column,
/// whose entry is the sentinel -1. Columns are 0-based here, so the
/// remainder column is K-1.
class CompressionMaps {
 public:
  static constexpr int kRemainder = -1;

  CompressionMaps() = default;
  /// Validates both maps (distinct partners != self, sentinel last column).
  CompressionMaps(Eigen::MatrixXi od_map, Eigen::MatrixXi do_map);

  int stations() const { return static_cast<int>(od_map_.rows()); }
  int k() const { return static_cast<int>(od_map_.cols()); }
  const Eigen::MatrixXi& od_map() const { return od_map_; }
  const Eigen::MatrixXi& do_map() const { return do_map_; }

  /// Column of `destination` in origin's OD row (remainder if unmapped).
  int od_column(int origin, int destination) const { return od_lookup_(origin, destination); }
  /// Column of `origin` in destination's DO row.
  int do_column(int destination, int origin) const { return do_lookup_(destination, origin); }

  bool operator==(const CompressionMaps& other) const {
    return od_map_ == other.od_map_ && do_map_ == other.do_map_;
  }

 private:
  Eigen::MatrixXi od_map_;
  Eigen::MatrixXi do_map_;
  Eigen::MatrixXi od_lookup_;
  Eigen::MatrixXi do_lookup_;
};

/// Ranks partners by trip count (descending, ties by ascending index).
/// Under-observed rows are padded with the lowest unused stations != self.
CompressionMaps build_compression_maps(std::span<const Transaction> training_log, int stations,
                                       int k);

/// Entry- and exit-ordered views of a log for O(trips per interval) lookups.
/// Keeps a copy of the transactions.
class LogIndex {
 public:
  explicit LogIndex(std::span<const Transaction> log);

  std::span<const Transaction> entered_in(std::int64_t interval) const;
  std::span<const Transaction> exited_in(std::int64_t interval) const;
  std::span<const Transaction> all() const { return by_entry_; }
  std::int64_t max_duration() const { return max_duration_; }

 private:
  std::vector<Transaction> by_entry_;
  std::vector<Transaction> by_exit_;
  std::int64_t max_duration_ = 0;
};

/// Counts for one interval observed at the end of `reference`.
struct IntervalSnapshot {
  std::int64_t interval = 0;
  std::int64_t reference = 0;
  Eigen::MatrixXi iod;  ///< finished trips by destination column
  Eigen::VectorXi u;    ///< unfinished trips per entry station
  Eigen::MatrixXi dom;  ///< DO matrix: exits by origin column
  Eigen::MatrixXi od;   ///< complete OD (label only)
};

/// Throws ErrorKind::Config if interval > reference.
IntervalSnapshot build_snapshot(const LogIndex& index, std::int64_t interval,
                                std::int64_t reference, const CompressionMaps& maps);
IntervalSnapshot build_snapshot(std::span<const Transaction> log, std::int64_t interval,
                                std::int64_t reference, const CompressionMaps& maps);

/// Long-term destination distribution of passengers who entered at
/// `interval_of_day` on training days with the given day-of-week and were
/// still travelling `elapsed` intervals later. Falls back to pooled days
/// (with a warning) if the weekday never occurs; empty rows are uniform.
Matrix compute_dd_long(std::span<const Transaction> training_log, int day_of_week,
                       int interval_of_day, int elapsed, const CompressionMaps& maps,
                       int intervals_per_day, std::vector<std::string>* warnings = nullptr);

/// Precomputed long-term distributions for elapsed in [0, max_elapsed).
class LongTermTable {
 public:
  LongTermTable(std::span<const Transaction> training_log, const CompressionMaps& maps,
                int intervals_per_day, int max_elapsed);

  const Matrix& at(int day_of_week, int interval_of_day, int elapsed) const;

 private:
  int per_day_;
  int max_elapsed_;
  std::vector<Matrix> table_;
};

/// Short-term ("yesterday") distribution for the input interval
/// `input_interval` of a sample referenced at `reference`: passengers who
/// entered at input_interval - D and were unfinished at reference - D.
/// Rows without such passengers, or the whole matrix when yesterday precedes
/// the log, take the row of `long_term`.
Matrix compute_dd_short(const LogIndex& index, std::int64_t reference,
                        std::int64_t input_interval, const CompressionMaps& maps,
                        int intervals_per_day, const Matrix& long_term);

/// UOD(j,k) = u(j) * dd(j,k).
Matrix estimate_uod(const Vector& u, const Matrix& dd);

struct SampleInput {
  Matrix iod;
  Vector u;
  Matrix uod_long;
  Matrix uod_short;
  Matrix dom;
};

struct SampleTarget {
  Matrix od;
  Matrix dom;
};

struct SnapshotSample {
  std::int64_t reference = 0;
  std::vector<SampleInput> inputs;    ///< intervals reference-n+1 .. reference
  std::vector<SampleTarget> targets;  ///< intervals reference+1 .. reference+m
};

/// Half-open interval ranges [train_begin, train_end), [train_end, val_end),
/// [val_end, test_end), all in absolute intervals.
struct SplitBounds {
  std::int64_t train_begin = 0;
  std::int64_t train_end = 0;
  std::int64_t val_end = 0;
  std::int64_t test_end = 0;
};

struct DatasetSpec {
  int n = 4;
  int m = 4;
  int intervals_per_day = 64;
  SplitBounds splits;
};

/// Complete OD/DO counts for every interval of one split; used by the
/// historical-average baseline.
struct IntervalTruth {
  std::int64_t interval = 0;
  Matrix od;
  Matrix dom;
};

struct Dataset {
  DatasetSpec spec;
  int stations = 0;
  int k = 0;
  std::vector<SnapshotSample> train;
  std::vector<SnapshotSample> val;
  std::vector<SnapshotSample> test;
  std::vector<IntervalTruth> train_truth;
};

/// Number of reference intervals usable in [begin, end) for n inputs and m
/// targets.
std::int64_t count_references(std::int64_t begin, std::int64_t end, int n, int m);

/// Builds all samples. Long-term distributions come from trips entering in
/// the training range only.
Dataset build_dataset(std::span<const Transaction> log, const CompressionMaps& maps,
                      const MetroGraph& graph, const DatasetSpec& spec);

inline int day_of_week(std::int64_t interval, int intervals_per_day) {
  return static_cast<int>((interval / intervals_per_day) % 7);
}
inline int interval_of_day(std::int64_t interval, int intervals_per_day) {
  return static_cast<int>(interval % intervals_per_day);
}

// Sample store: CSV files with a schema-version first line.
inline constexpr int kStoreSchemaVersion = 1;

void write_maps_csv(const CompressionMaps& maps, const std::filesystem::path& dir);
CompressionMaps read_maps_csv(const std::filesystem::path& dir);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace hiam
