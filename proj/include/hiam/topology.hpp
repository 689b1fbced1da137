#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hiam {

struct Edge {
  int a = 0;
  int b = 0;
};

/// Physical metro topology. Connectivity is symmetric and loop-free; the
/// weight matrix is the row-normalized connectivity (isolated rows are zero).
/// Immutable once built.
class MetroGraph {
 public:
  MetroGraph() = default;

  int station_count() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& station_names() const { return names_; }
  const Eigen::MatrixXi& connectivity() const { return connectivity_; }
  const Eigen::MatrixXd& weights() const { return weights_; }

  int degree(int station) const;
  std::vector<int> neighbors(int station) const;
  /// Undirected edge list with a < b, sorted.
  std::vector<Edge> edges() const;

  bool operator==(const MetroGraph& other) const;

 private:
  friend MetroGraph build_graph(std::span<const Edge> edges, int station_count,
                                std::vector<std::string> names);

  std::vector<std::string> names_;
  Eigen::MatrixXi connectivity_;
  Eigen::MatrixXd weights_;
};

/// Builds E symmetrically from the pairs and W(i,j) = E(i,j) / deg(i).
/// Duplicate pairs are accepted; out-of-range indices and self loops throw
/// ErrorKind::InvalidEdge. Empty `names` yields "S0", "S1", ...
MetroGraph build_graph(std::span<const Edge> edges, int station_count,
                       std::vector<std::string> names = {});

/// Text format: first line is N, then one "i j" pair per line. Both
/// directions of every edge are written. Names go to a "<path>.names" sidecar.
void save_graph(const MetroGraph& graph, const std::filesystem::path& path);

/// Reads the edge-list format. A pair listed in one direction only is
/// symmetrized and reported through `warnings` (and the log).
MetroGraph load_graph(const std::filesystem::path& path,
                      std::vector<std::string>* warnings = nullptr);

/// BFS hop counts from `source`; -1 marks unreachable stations.
std::vector<int> hop_distances(const MetroGraph& graph, int source);

}  // namespace hiam
