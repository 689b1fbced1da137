#include "hiam/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "hiam/error.hpp"

namespace hiam {

namespace {

constexpr double kMorningPeak = 0.30;
constexpr double kEveningPeak = 0.72;

double bump(double x, double centre, double width) {
  const double z = (x - centre) / width;
  return std::exp(-z * z);
}

std::mt19937_64 day_stream(std::uint64_t seed, std::int64_t day) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(day), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace

bool is_weekend(std::int64_t day) {
  const auto dow = day % 7;
  return dow == 5 || dow == 6;
}

std::vector<double> commuter_profile(int intervals_per_day, bool weekend) {
  std::vector<double> p(intervals_per_day);
  for (int i = 0; i < intervals_per_day; ++i) {
    const double x = (i + 0.5) / intervals_per_day;
    if (weekend) {
      p[i] = 0.15 + 0.75 * bump(x, 0.55, 0.18);
    } else {
      p[i] = 0.15 + 1.0 * bump(x, kMorningPeak, 0.06) + 0.85 * bump(x, kEveningPeak, 0.07) +
             0.25 * bump(x, 0.5, 0.12);
    }
  }
  return p;
}

Eigen::MatrixXd gravity_demand(const MetroGraph& graph, std::span<const double> masses,
                               double scale, double decay) {
  const int n = graph.station_count();
  if (static_cast<int>(masses.size()) != n) {
    throw Error(ErrorKind::Config, "gravity masses must have one entry per station");
  }
  Eigen::MatrixXd demand = Eigen::MatrixXd::Zero(n, n);
  for (int o = 0; o < n; ++o) {
    const auto hops = hop_distances(graph, o);
    for (int d = 0; d < n; ++d) {
      if (d == o || hops[d] < 0) continue;
      demand(o, d) = scale * masses[o] * masses[d] * std::exp(-decay * hops[d]);
    }
  }
  return demand;
}

void validate(const SimConfig& cfg) {
  const int n = cfg.graph.station_count();
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (n <= 0) fail("simulation graph has no stations");
  if (cfg.days <= 0) fail("days must be positive");
  if (cfg.intervals_per_day <= 0) fail("intervals_per_day must be positive");
  if (cfg.base_demand.rows() != n || cfg.base_demand.cols() != n) {
    fail("base_demand must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if ((cfg.base_demand.array() < 0.0).any()) fail("base_demand must be nonnegative");
  for (int i = 0; i < n; ++i) {
    if (cfg.base_demand(i, i) != 0.0) fail("base_demand diagonal must be zero");
  }
  const auto d = static_cast<std::size_t>(cfg.intervals_per_day);
  if (cfg.weekday_profile.size() != d || cfg.weekend_profile.size() != d) {
    fail("profiles must have intervals_per_day entries");
  }
  auto negative = [](double v) { return v < 0.0; };
  if (std::any_of(cfg.weekday_profile.begin(), cfg.weekday_profile.end(), negative) ||
      std::any_of(cfg.weekend_profile.begin(), cfg.weekend_profile.end(), negative)) {
    fail("profiles must be nonnegative");
  }
  if (cfg.per_hop_intervals <= 0.0) fail("per_hop_intervals must be positive");
  if (cfg.travel_noise < 0.0) fail("travel_noise must be nonnegative");
  if (cfg.max_trip_intervals < 1) fail("max_trip_intervals must be at least 1");
  if (cfg.day_level_sigma < 0.0 || cfg.peak_shift_max < 0) fail("negative variability setting");
  for (const auto& tp : cfg.tide_pairs) {
    if (tp.a < 0 || tp.a >= n || tp.b < 0 || tp.b >= n || tp.a == tp.b) {
      fail("invalid tide pair (" + std::to_string(tp.a) + "," + std::to_string(tp.b) + ")");
    }
  }
  for (int o = 0; o < n; ++o) {
    const auto hops = hop_distances(cfg.graph, o);
    for (int dst = 0; dst < n; ++dst) {
      if (cfg.base_demand(o, dst) > 0.0 && hops[dst] < 0) {
        fail("station " + std::to_string(dst) + " unreachable from " + std::to_string(o) +
             " but demand is positive");
      }
    }
  }
}

TransactionLog generate_log(const SimConfig& cfg) {
  validate(cfg);
  const int n = cfg.graph.station_count();
  const int per_day = cfg.intervals_per_day;

  std::vector<std::vector<int>> hops(n);
  for (int o = 0; o < n; ++o) hops[o] = hop_distances(cfg.graph, o);

  // Signed tide direction per ordered pair: +1 for a->b, -1 for b->a.
  std::map<std::pair<int, int>, double> tide;
  for (const auto& tp : cfg.tide_pairs) {
    tide[{tp.a, tp.b}] = 1.0;
    tide[{tp.b, tp.a}] = -1.0;
  }

  TransactionLog log;
  for (std::int64_t day = 0; day < cfg.days; ++day) {
    auto rng = day_stream(cfg.seed, day);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sigma = cfg.day_level_sigma;
    const double level = sigma > 0.0 ? std::exp(sigma * gauss(rng) - 0.5 * sigma * sigma) : 1.0;
    int shift = 0;
    if (cfg.peak_shift_max > 0) {
      shift = std::uniform_int_distribution<int>(-cfg.peak_shift_max, cfg.peak_shift_max)(rng);
    }
    const auto& profile = is_weekend(day) ? cfg.weekend_profile : cfg.weekday_profile;

    for (int slot = 0; slot < per_day; ++slot) {
      const int shifted = std::clamp(slot - shift, 0, per_day - 1);
      const double x = (shifted + 0.5) / per_day;
      const double swing = bump(x, kMorningPeak, 0.06) - bump(x, kEveningPeak, 0.07);
      const std::int64_t entry = day * per_day + slot;
      for (int o = 0; o < n; ++o) {
        for (int d = 0; d < n; ++d) {
          double rate = cfg.base_demand(o, d);
          if (rate <= 0.0) continue;
          rate *= profile[shifted] * level;
          if (auto it = tide.find({o, d}); it != tide.end() && !is_weekend(day)) {
            rate *= std::max(0.0, 1.0 + cfg.tide_amplitude * it->second * swing);
          }
          if (rate <= 0.0) continue;
          const int count = std::poisson_distribution<int>(rate)(rng);
          for (int c = 0; c < count; ++c) {
            const double noise =
                cfg.travel_noise > 0.0 ? std::max(0.0, cfg.travel_noise * gauss(rng)) : 0.0;
            const auto raw = std::lround(hops[o][d] * cfg.per_hop_intervals + noise);
            const auto duration =
                std::clamp<std::int64_t>(raw, 1, cfg.max_trip_intervals);
            log.push_back({o, entry, d, entry + duration});
          }
        }
      }
    }
  }
  return log;
}

std::vector<std::pair<int, double>> commuting_time_cdf(std::span<const Transaction> log) {
  if (log.empty()) throw Error(ErrorKind::EmptyInput, "commuting time CDF of an empty log");
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& t : log) ++counts[t.duration()];
  std::vector<std::pair<int, double>> cdf;
  std::size_t running = 0;
  for (const auto& [duration, count] : counts) {
    running += count;
    cdf.emplace_back(static_cast<int>(duration),
                     static_cast<double>(running) / static_cast<double>(log.size()));
  }
  return cdf;
}

void write_log_csv(std::span<const Transaction> log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "entry_station,entry_interval,exit_station,exit_interval\n";
  for (const auto& t : log) {
    out << t.entry_station << ',' << t.entry_interval << ',' << t.exit_station << ','
        << t.exit_interval << '\n';
  }
}

TransactionLog read_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "entry_station,entry_interval,exit_station,exit_interval") {
    throw Error(ErrorKind::Parse, path.string() + ":1: unexpected header");
  }
  TransactionLog log;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::int64_t fields[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, fields[f]);
      const bool last = f == 3;
      if (ec != std::errc{} || (!last && (next == end || *next != ',')) || (last && next != end)) {
        throw Error(ErrorKind::Parse,
                    path.string() + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
      }
      p = next + 1;
    }
    Transaction t{static_cast<int>(fields[0]), fields[1], static_cast<int>(fields[2]), fields[3]};
    if (t.exit_interval <= t.entry_interval || t.entry_station == t.exit_station) {
      throw Error(ErrorKind::Parse,
                  path.string() + ":" + std::to_string(line_no) + ": invalid trip '" + line + "'");
    }
    if (!log.empty() && log.back().entry_interval > t.entry_interval) {
      throw Error(ErrorKind::Parse,
                  path.string() + ":" + std::to_string(line_no) + ": log not sorted by entry interval");
    }
    log.push_back(t);
  }
  return log;
}

}  // namespace hiam
