#include "hiam/config.hpp"

#include <fstream>

#include "hiam/error.hpp"

namespace hiam {

namespace {

/// Typed access into one config section; missing keys are reported by
/// their full dotted path.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::Config, path_ + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json& raw(const std::string& key) const {
    if (!j_.contains(key)) throw Error(ErrorKind::MissingKey, name(key));
    return j_.at(key);
  }

  Section section(const std::string& key) const { return Section(raw(key), name(key)); }

  template <typename T>
  T get(const std::string& key) const {
    try {
      return raw(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Config, name(key) + ": " + e.what());
    }
  }

  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

MetroGraph parse_topology(const Section& s) {
  const int n = s.get<int>("stations");
  std::vector<Edge> edges;
  for (const auto& e : s.raw("edges")) {
    if (!e.is_array() || e.size() != 2) {
      throw Error(ErrorKind::Config, s.name("edges") + ": each edge is a pair [a, b]");
    }
    edges.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  std::vector<std::string> names;
  if (s.has("names")) names = s.get<std::vector<std::string>>("names");
  return build_graph(edges, n, names);
}

std::vector<double> parse_profile(const Section& s, const std::string& key, int per_day,
                                  bool weekend) {
  const auto& v = s.raw(key);
  if (v.is_string()) {
    if (v.get<std::string>() != "commuter") {
      throw Error(ErrorKind::Config, s.name(key) + ": unknown profile '" + v.get<std::string>() + "'");
    }
    return commuter_profile(per_day, weekend);
  }
  return s.get<std::vector<double>>(key);
}

Eigen::MatrixXd parse_demand(const Section& s, const MetroGraph& graph) {
  const auto kind = s.get<std::string>("kind");
  const int n = graph.station_count();
  if (kind == "zero") return Eigen::MatrixXd::Zero(n, n);
  if (kind == "gravity") {
    const auto masses = s.get<std::vector<double>>("masses");
    return gravity_demand(graph, masses, s.get<double>("scale"), s.get<double>("decay"));
  }
  if (kind == "matrix") {
    const auto rows = s.get<std::vector<std::vector<double>>>("values");
    if (static_cast<int>(rows.size()) != n) {
      throw Error(ErrorKind::Config, s.name("values") + ": expected " + std::to_string(n) + " rows");
    }
    Eigen::MatrixXd out(n, n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[i].size()) != n) {
        throw Error(ErrorKind::Config, s.name("values") + ": row " + std::to_string(i) +
                                           " has " + std::to_string(rows[i].size()) + " entries");
      }
      for (int j = 0; j < n; ++j) out(i, j) = rows[i][j];
    }
    return out;
  }
  throw Error(ErrorKind::Config, s.name("kind") + ": unknown demand kind '" + kind + "'");
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  const Section root(j, "");
  const int version = root.get<int>("schema_version");
  if (version != kConfigSchemaVersion) {
    throw Error(ErrorKind::SchemaVersion,
                "config schema_version " + std::to_string(version) + ", expected " +
                    std::to_string(kConfigSchemaVersion) + "; update the config to migrate");
  }
  ExperimentConfig c;
  c.source = j;
  c.seed = seed_override ? *seed_override : root.get<std::uint64_t>("seed");
  c.source["seed"] = c.seed;

  c.graph = parse_topology(root.section("topology"));

  const Section sim = root.section("synthgen");
  c.sim.graph = c.graph;
  c.sim.days = sim.get<int>("days");
  c.sim.intervals_per_day = sim.get<int>("intervals_per_day");
  c.sim.base_demand = parse_demand(sim.section("demand"), c.graph);
  c.sim.weekday_profile = parse_profile(sim, "weekday_profile", c.sim.intervals_per_day, false);
  c.sim.weekend_profile = parse_profile(sim, "weekend_profile", c.sim.intervals_per_day, true);
  c.sim.per_hop_intervals = sim.get<double>("per_hop_intervals");
  c.sim.travel_noise = sim.get<double>("travel_noise");
  c.sim.max_trip_intervals = sim.get<int>("max_trip_intervals");
  for (const auto& p : sim.raw("tide_pairs")) {
    if (!p.is_array() || p.size() != 2) {
      throw Error(ErrorKind::Config, sim.name("tide_pairs") + ": each pair is [a, b]");
    }
    c.sim.tide_pairs.push_back({p[0].get<int>(), p[1].get<int>()});
  }
  c.sim.tide_amplitude = sim.get<double>("tide_amplitude");
  c.sim.day_level_sigma = sim.get<double>("day_level_sigma");
  c.sim.peak_shift_max = sim.get<int>("peak_shift_max");
  c.sim.seed = c.seed;
  validate(c.sim);

  const Section agg = root.section("aggregation");
  c.k = agg.get<int>("k");
  if (c.k < 1 || c.k > c.graph.station_count()) {
    throw Error(ErrorKind::Config, "aggregation.k must lie in [1, stations]");
  }
  c.dataset.n = agg.get<int>("n");
  c.dataset.m = agg.get<int>("m");
  c.dataset.intervals_per_day = c.sim.intervals_per_day;
  const int train_days = agg.get<int>("train_days");
  const int val_days = agg.get<int>("val_days");
  const int test_days = agg.get<int>("test_days");
  if (train_days <= 0 || val_days <= 0 || test_days <= 0) {
    throw Error(ErrorKind::Config, "aggregation split lengths must be positive");
  }
  if (train_days + val_days + test_days > c.sim.days) {
    throw Error(ErrorKind::Config, "aggregation splits cover " +
                                       std::to_string(train_days + val_days + test_days) +
                                       " days but only " + std::to_string(c.sim.days) +
                                       " are simulated");
  }
  const std::int64_t per_day = c.sim.intervals_per_day;
  c.dataset.splits.train_begin = 0;
  c.dataset.splits.train_end = train_days * per_day;
  c.dataset.splits.val_end = (train_days + val_days) * per_day;
  c.dataset.splits.test_end = (train_days + val_days + test_days) * per_day;

  nlohmann::json model = root.raw("model");
  if (!model.is_object()) throw Error(ErrorKind::Config, "model must be an object");
  model["stations"] = c.graph.station_count();
  model["k"] = c.k;
  model["n"] = c.dataset.n;
  model["m"] = c.dataset.m;
  c.model = ModelConfig::from_json(model);

  c.train = TrainConfig::from_json(root.raw("training"));
  c.train.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return parse_config(j, seed_override);
}

}  // namespace hiam
