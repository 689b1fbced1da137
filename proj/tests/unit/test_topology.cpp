#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "hiam/topology.hpp"

using namespace hiam;
using hiam::test::thrown_kind;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "hiam_topology_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

MetroGraph line3() {
  const Edge edges[] = {{0, 1}, {1, 2}};
  return build_graph(edges, 3, {"A", "B", "C"});
}

}  // namespace

TEST_CASE("three-station line has half weights in the middle") {
  Eigen::MatrixXd expected(3, 3);
  expected << 0, 1, 0, 0.5, 0, 0.5, 0, 1, 0;
  CHECK(line3().weights().isApprox(expected, 0.0));
  CHECK(line3().weights() == expected);
}

TEST_CASE("stations without edges get zero weight rows") {
  const MetroGraph g = build_graph({}, 2);
  CHECK(g.weights().isZero(0.0));
  CHECK(g.station_names() == std::vector<std::string>{"S0", "S1"});
}

TEST_CASE("star graph weights") {
  const Edge edges[] = {{0, 1}, {0, 2}, {0, 3}, {0, 4}};
  const MetroGraph g = build_graph(edges, 5);
  for (int k = 1; k < 5; ++k) {
    CHECK(g.weights()(0, k) == 0.25);
    CHECK(g.weights()(k, 0) == 1.0);
  }
  CHECK(g.weights()(0, 0) == 0.0);
}

TEST_CASE("invalid edges are rejected") {
  const Edge out_of_range[] = {{0, 3}};
  CHECK(thrown_kind([&] { build_graph(out_of_range, 3); }) == ErrorKind::InvalidEdge);
  const Edge negative[] = {{-1, 0}};
  CHECK(thrown_kind([&] { build_graph(negative, 3); }) == ErrorKind::InvalidEdge);
  const Edge loop[] = {{1, 1}};
  CHECK(thrown_kind([&] { build_graph(loop, 3); }) == ErrorKind::InvalidEdge);
}

TEST_CASE("duplicate edges are idempotent") {
  const Edge twice[] = {{0, 1}, {1, 0}, {0, 1}, {1, 2}};
  CHECK(build_graph(twice, 3, {"A", "B", "C"}) == line3());
}

TEST_CASE("graph file round trip") {
  const auto path = temp_path("line3.txt");
  save_graph(line3(), path);
  const MetroGraph loaded = load_graph(path);
  CHECK(loaded == line3());
  CHECK(loaded.connectivity() == line3().connectivity());
  CHECK(loaded.station_names() == line3().station_names());
}

TEST_CASE("one-directional pairs are symmetrized with a warning") {
  const auto path = temp_path("asym.txt");
  {
    std::ofstream f(path);
    f << "3\n0 1\n1 2\n2 1\n";
  }
  std::filesystem::remove(path.string() + ".names");
  std::vector<std::string> warnings;
  const MetroGraph g = load_graph(path, &warnings);
  CHECK(g.connectivity() == line3().connectivity());
  CHECK(warnings.size() == 1);
}

TEST_CASE("graph file referencing station N fails naming the line") {
  const auto path = temp_path("bad.txt");
  {
    std::ofstream f(path);
    f << "3\n0 1\n1 3\n";
  }
  std::filesystem::remove(path.string() + ".names");
  try {
    load_graph(path);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("malformed graph file line is reported") {
  const auto path = temp_path("garbage.txt");
  {
    std::ofstream f(path);
    f << "3\n0 x\n";
  }
  CHECK(thrown_kind([&] { load_graph(path); }) == ErrorKind::Parse);
}

TEST_CASE("property: weight rows are stochastic and match connectivity") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 63);
    std::bernoulli_distribution coin(std::min(1.0, 3.0 / n));
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (coin(rng)) edges.push_back({i, j});
      }
    }
    const MetroGraph g = build_graph(edges, n);
    const auto& e = g.connectivity();
    const auto& w = g.weights();
    CHECK(e == e.transpose());
    for (int i = 0; i < n; ++i) {
      CHECK(e(i, i) == 0);
      if (g.degree(i) > 0) {
        CHECK(std::abs(w.row(i).sum() - 1.0) <= 1e-12);
      } else {
        CHECK(w.row(i).isZero(0.0));
      }
      for (int j = 0; j < n; ++j) CHECK((w(i, j) > 0) == (e(i, j) == 1));
    }
  }
}

TEST_CASE("property: relabeling stations permutes the weight matrix") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 20);
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng() % 4 == 0) edges.push_back({i, j});
      }
    }
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> moved;
    for (const Edge& e : edges) moved.push_back({perm[e.a], perm[e.b]});
    const Eigen::MatrixXd w = build_graph(edges, n).weights();
    const Eigen::MatrixXd wp = build_graph(moved, n).weights();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) CHECK(wp(perm[i], perm[j]) == w(i, j));
    }
  }
}

TEST_CASE("hop distances on a line") {
  const auto d = hop_distances(line3(), 0);
  CHECK(d == std::vector<int>{0, 1, 2});
  const auto iso = hop_distances(build_graph({}, 2), 0);
  CHECK(iso == std::vector<int>{0, -1});
}
