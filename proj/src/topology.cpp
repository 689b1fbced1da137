#include "hiam/topology.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <spdlog/spdlog.h>

#include "hiam/error.hpp"

namespace hiam {

int MetroGraph::degree(int station) const {
  return connectivity_.row(station).sum();
}

std::vector<int> MetroGraph::neighbors(int station) const {
  std::vector<int> out;
  for (int j = 0; j < station_count(); ++j) {
    if (connectivity_(station, j) != 0) out.push_back(j);
  }
  return out;
}

std::vector<Edge> MetroGraph::edges() const {
  std::vector<Edge> out;
  for (int i = 0; i < station_count(); ++i) {
    for (int j = i + 1; j < station_count(); ++j) {
      if (connectivity_(i, j) != 0) out.push_back({i, j});
    }
  }
  return out;
}

bool MetroGraph::operator==(const MetroGraph& other) const {
  if (names_ != other.names_ || connectivity_ != other.connectivity_) return false;
  // W is derived from E, so it only has to agree to rounding.
  return (weights_ - other.weights_).cwiseAbs().maxCoeff() <= 1e-12;
}

MetroGraph build_graph(std::span<const Edge> edges, int station_count,
                       std::vector<std::string> names) {
  if (station_count <= 0) {
    throw Error(ErrorKind::Config, "station count must be positive");
  }
  if (!names.empty() && static_cast<int>(names.size()) != station_count) {
    throw Error(ErrorKind::Config, "expected " + std::to_string(station_count) +
                                       " station names, got " +
                                       std::to_string(names.size()));
  }
  MetroGraph g;
  g.connectivity_ = Eigen::MatrixXi::Zero(station_count, station_count);
  for (const Edge& e : edges) {
    if (e.a < 0 || e.a >= station_count || e.b < 0 || e.b >= station_count) {
      throw Error(ErrorKind::InvalidEdge,
                  "edge (" + std::to_string(e.a) + "," + std::to_string(e.b) +
                      ") out of range for " + std::to_string(station_count) +
                      " stations");
    }
    if (e.a == e.b) {
      throw Error(ErrorKind::InvalidEdge,
                  "self loop at station " + std::to_string(e.a));
    }
    g.connectivity_(e.a, e.b) = 1;
    g.connectivity_(e.b, e.a) = 1;
  }
  g.weights_ = Eigen::MatrixXd::Zero(station_count, station_count);
  for (int i = 0; i < station_count; ++i) {
    const int deg = g.connectivity_.row(i).sum();
    if (deg == 0) continue;
    for (int j = 0; j < station_count; ++j) {
      g.weights_(i, j) = static_cast<double>(g.connectivity_(i, j)) / deg;
    }
  }
  if (names.empty()) {
    names.reserve(station_count);
    for (int i = 0; i < station_count; ++i) names.push_back("S" + std::to_string(i));
  }
  g.names_ = std::move(names);
  return g;
}

namespace {

std::filesystem::path names_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".names");
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void save_graph(const MetroGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << graph.station_count() << '\n';
  for (const Edge& e : graph.edges()) {
    out << e.a << ' ' << e.b << '\n';
    out << e.b << ' ' << e.a << '\n';
  }
  std::ofstream names(names_sidecar(path));
  if (!names) throw Error(ErrorKind::Io, "cannot write " + names_sidecar(path).string());
  for (const auto& name : graph.station_names()) names << name << '\n';
}

MetroGraph load_graph(const std::filesystem::path& path,
                      std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());

  auto fail = [&](int line_no, const std::string& what) {
    throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) +
                                      ": " + what);
  };

  std::string line;
  int line_no = 0;
  int n = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::istringstream ss(line);
    std::string rest;
    if (!(ss >> n) || (ss >> rest) || n <= 0) {
      fail(line_no, "expected a positive station count, got '" + line + "'");
    }
    break;
  }
  if (n <= 0) fail(line_no, "missing station count header");

  std::vector<Edge> edges;
  std::set<std::pair<int, int>> directed;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::istringstream ss(line);
    int a = 0;
    int b = 0;
    std::string rest;
    if (!(ss >> a >> b) || (ss >> rest)) {
      fail(line_no, "expected 'i j', got '" + line + "'");
    }
    if (a < 0 || a >= n || b < 0 || b >= n) {
      fail(line_no, "station index out of range [0, " + std::to_string(n) +
                        "): '" + line + "'");
    }
    if (a == b) fail(line_no, "self loop '" + line + "'");
    edges.push_back({a, b});
    directed.insert({a, b});
  }

  for (const auto& [a, b] : directed) {
    if (!directed.contains({b, a})) {
      std::string msg = path.string() + ": edge " + std::to_string(a) + " " +
                        std::to_string(b) + " has no reverse entry; symmetrized";
      spdlog::warn("{}", msg);
      if (warnings) warnings->push_back(std::move(msg));
    }
  }

  std::vector<std::string> names;
  if (std::ifstream sidecar(names_sidecar(path)); sidecar) {
    while (std::getline(sidecar, line)) {
      if (!line.empty()) names.push_back(line);
    }
  }
  return build_graph(edges, n, std::move(names));
}

std::vector<int> hop_distances(const MetroGraph& graph, int source) {
  std::vector<int> dist(graph.station_count(), -1);
  std::deque<int> queue{source};
  dist[source] = 0;
  const auto& e = graph.connectivity();
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v = 0; v < graph.station_count(); ++v) {
      if (e(u, v) != 0 && dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace hiam
