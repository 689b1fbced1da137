#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hiam/topology.hpp"

namespace hiam {

/// One passenger trip. Intervals are absolute indices since dataset start.
struct Transaction {
  int entry_station = 0;
  std::int64_t entry_interval = 0;
  int exit_station = 0;
  std::int64_t exit_interval = 0;

  std::int64_t duration() const { return exit_interval - entry_interval; }
  bool operator==(const Transaction&) const = default;
};

using TransactionLog = std::vector<Transaction>;

struct TidePair {
  int a = 0;
  int b = 0;
};

struct SimConfig {
  MetroGraph graph;
  int days = 1;
  int intervals_per_day = 64;
  /// Passengers per interval for each (origin, destination); zero diagonal.
  Eigen::MatrixXd base_demand;
  std::vector<double> weekday_profile;
  std::vector<double> weekend_profile;
  double per_hop_intervals = 1.0;
  double travel_noise = 0.0;
  int max_trip_intervals = 8;
  /// a->b demand is boosted in the morning peak and damped in the evening;
  /// b->a the other way round.
  std::vector<TidePair> tide_pairs;
  double tide_amplitude = 0.8;
  /// Log-normal sigma of a per-day demand level shared by all cells.
  double day_level_sigma = 0.0;
  /// Each day's profile is shifted by a uniform integer in [-max, max].
  int peak_shift_max = 0;
  std::uint64_t seed = 0;
};

/// Day d is a weekend day iff d mod 7 is 5 or 6.
bool is_weekend(std::int64_t day);

/// Default commuter-shaped profile: morning/evening peaks on weekdays, a
/// single broad midday bump on weekends.
std::vector<double> commuter_profile(int intervals_per_day, bool weekend);

/// base(o,d) = scale * mass(o) * mass(d) * exp(-decay * hops(o,d)).
Eigen::MatrixXd gravity_demand(const MetroGraph& graph, std::span<const double> masses,
                               double scale, double decay);

/// Validates the config and throws ErrorKind::Config on violations,
/// including positive demand between disconnected stations.
void validate(const SimConfig& cfg);

/// Poisson trip counts per (day, interval, origin, destination); durations
/// from hop count, per-hop time and truncated Gaussian noise. Each day draws
/// from its own stream seeded by (seed, day). Sorted by entry interval.
TransactionLog generate_log(const SimConfig& cfg);

/// Cumulative fraction of trips completed within each observed duration.
std::vector<std::pair<int, double>> commuting_time_cdf(std::span<const Transaction> log);

/// CSV with header `entry_station,entry_interval,exit_station,exit_interval`.
void write_log_csv(std::span<const Transaction> log, const std::filesystem::path& path);
TransactionLog read_log_csv(const std::filesystem::path& path);

}  // namespace hiam
