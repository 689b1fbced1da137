#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dense_oracle.hpp"
#include "helpers.hpp"
#include "hiam/nncore.hpp"
#include "hiam/topology.hpp"

using namespace hiam;
using hiam::test::dense_gcgru;
using hiam::test::max_gradient_error;
using hiam::test::thrown_kind;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                     double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

MetroGraph line3() { return build_graph(std::vector<Edge>{{0, 1}, {1, 2}}, 3); }

}  // namespace

TEST_CASE("graph conv with identity self weights and no neighbour term is the identity") {
  std::mt19937_64 rng(1);
  Tape t;
  const Matrix x = random_matrix(rng, 3, 4);
  const Var out = graph_conv(t.constant(x), t.constant(line3().weights()),
                             t.constant(Matrix::Identity(4, 4)), t.constant(Matrix::Zero(4, 4)));
  CHECK(out.value() == x);
}

TEST_CASE("isolated node keeps only its self term") {
  std::mt19937_64 rng(2);
  const MetroGraph g = build_graph(std::vector<Edge>{{0, 1}}, 3);
  Tape t;
  const Matrix x = random_matrix(rng, 3, 2);
  const Matrix ts = random_matrix(rng, 2, 3);
  const Matrix tn = random_matrix(rng, 2, 3);
  const Var out = graph_conv(t.constant(x), t.constant(g.weights()), t.constant(ts), t.constant(tn));
  CHECK(out.value().row(2).isApprox(x.row(2) * ts, 1e-15));
}

TEST_CASE("line graph neighbour averaging") {
  Tape t;
  Matrix x(3, 1);
  x << 2, 5, 7;
  const Var out = graph_conv(t.constant(x), t.constant(line3().weights()),
                             t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Ones(1, 1)));
  CHECK(out.value()(0, 0) == 5.0);
  CHECK(out.value()(1, 0) == 0.5 * 2 + 0.5 * 7);
  CHECK(out.value()(2, 0) == 5.0);
}

TEST_CASE("graph conv shape mismatch") {
  Tape t;
  CHECK(thrown_kind([&] {
          graph_conv(t.constant(Matrix::Zero(4, 2)), t.constant(line3().weights()),
                     t.constant(Matrix::Zero(2, 2)), t.constant(Matrix::Zero(2, 2)));
        }) == ErrorKind::Dimension);
  CHECK(thrown_kind([&] {
          graph_conv(t.constant(Matrix::Zero(3, 2)), t.constant(line3().weights()),
                     t.constant(Matrix::Zero(3, 2)), t.constant(Matrix::Zero(3, 2)));
        }) == ErrorKind::Dimension);
}

TEST_CASE("GCGRU with zero input and state stays at zero") {
  ParameterSet p;
  register_gcgru(p, "cell", 2, 3);
  p.initialize(4);
  Tape t;
  const Var h = gcgru_step(t.constant(Matrix::Zero(3, 2)), t.constant(Matrix::Zero(3, 3)),
                           t.constant(line3().weights()), bind_gcgru(t, p, "cell"));
  CHECK(h.value().isZero(0.0));
}

TEST_CASE("saturated update gate carries the previous state") {
  std::mt19937_64 rng(3);
  ParameterSet p;
  register_gcgru(p, "cell", 2, 3);
  p.initialize(5);
  p.at("cell.gate.bias").rightCols(3).setConstant(50.0);
  Tape t;
  const Matrix h0 = random_matrix(rng, 3, 3, 0.5);
  const Var h = gcgru_step(t.constant(random_matrix(rng, 3, 2)), t.constant(h0),
                           t.constant(line3().weights()), bind_gcgru(t, p, "cell"));
  CHECK((h.value() - h0).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("GCGRU matches a straight-line evaluation") {
  std::mt19937_64 rng(6);
  const Edge edges[] = {{0, 1}, {1, 2}, {1, 3}};
  const MetroGraph g = build_graph(edges, 4);
  ParameterSet p;
  register_gcgru(p, "cell", 2, 3);
  p.initialize(7);
  for (auto& [name, v] : p.values()) v = random_matrix(rng, v.rows(), v.cols(), 0.7);
  const Matrix x = random_matrix(rng, 4, 2);
  const Matrix h0 = random_matrix(rng, 4, 3, 0.5);
  Tape t;
  const Var h = gcgru_step(t.constant(x), t.constant(h0), t.constant(g.weights()),
                           bind_gcgru(t, p, "cell"));
  const Matrix expected = dense_gcgru(x, h0, g.weights(), p, "cell");
  CHECK((h.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("DIT with zero value projections is the identity") {
  std::mt19937_64 rng(8);
  ParameterSet p;
  register_dit(p, "dit", 4);
  p.initialize(9);
  p.at("dit.od.value").setZero();
  p.at("dit.do.value").setZero();
  Tape t;
  const Matrix od = random_matrix(rng, 5, 4);
  const Matrix dom = random_matrix(rng, 5, 4);
  const DitResult r = dit_step(t.constant(od), t.constant(dom), bind_dit(t, p, "dit"), 2, true);
  CHECK(r.od.value() == od);
  CHECK(r.dom.value() == dom);
}

TEST_CASE("identical keys give uniform attention") {
  std::mt19937_64 rng(10);
  ParameterSet p;
  register_dit(p, "dit", 4);
  p.initialize(11);
  Tape t;
  const Matrix od = random_matrix(rng, 6, 4);
  const Matrix dom = random_matrix(rng, 1, 4).replicate(6, 1);
  const DitResult r = dit_step(t.constant(od), t.constant(dom), bind_dit(t, p, "dit"), 2, true);
  for (const Var& a : r.do_to_od) {
    CHECK((a.value().array() - 1.0 / 6.0).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("two-station DIT hand trace") {
  ParameterSet p;
  register_dit(p, "dit", 2);
  for (auto& [name, v] : p.values()) v = Matrix::Identity(2, 2);
  Matrix od(2, 2), dom(2, 2);
  od << 1, 0, 0, 1;
  dom << 1, 1, 0, 2;
  Tape t;
  const DitResult r = dit_step(t.constant(od), t.constant(dom), bind_dit(t, p, "dit"), 1, false);
  const double e = std::exp(1.0);
  // OD queries DO: scores [[1, 0], [1, 2]].
  const double a = e / (e + 1.0);
  const double b = 1.0 / (e + 1.0);
  Matrix att_od(2, 2);
  att_od << a, b, b, a;
  CHECK((r.do_to_od[0].value() - att_od).cwiseAbs().maxCoeff() < 1e-15);
  Matrix expect_od(2, 2);
  expect_od << 1 + a, 2 * b + a, b, 1 + b + 2 * a;
  CHECK((r.od.value() - expect_od).cwiseAbs().maxCoeff() < 1e-15);
  // DO queries OD: scores [[1, 1], [0, 2]].
  const double c = 1.0 / (1.0 + e * e);
  const double s = e * e / (1.0 + e * e);
  Matrix expect_do(2, 2);
  expect_do << 1.5, 1.5, c, 2 + s;
  CHECK((r.dom.value() - expect_do).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("DIT head count must divide the width") {
  ParameterSet p;
  register_dit(p, "dit", 6);
  p.initialize(1);
  Tape t;
  CHECK(thrown_kind([&] {
          dit_step(t.constant(Matrix::Zero(3, 6)), t.constant(Matrix::Zero(3, 6)),
                   bind_dit(t, p, "dit"), 4, true);
        }) == ErrorKind::Config);
}

TEST_CASE("gradient of summed graph conv output") {
  std::mt19937_64 rng(12);
  ParameterSet p;
  p.add("self", 2, 3, Init::Xavier);
  p.add("neighbor", 2, 3, Init::Zero);
  p.initialize(3);
  const Matrix x = random_matrix(rng, 3, 2);
  auto build = [&](Tape& t) {
    return ad::sum(graph_conv(t.constant(x), t.constant(line3().weights()),
                              t.parameter("self", p.at("self")),
                              t.parameter("neighbor", p.at("neighbor"))));
  };
  Tape t;
  const Gradients g = gradients(t, build(t));
  // d/dΘ_self of Σ XΘ is column sums of X repeated over output columns.
  const Matrix expected = x.colwise().sum().transpose().replicate(1, 3);
  CHECK((g.at("self") - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(max_gradient_error(p, build) < 1e-6);
}

TEST_CASE("constant loss has zero gradients") {
  ParameterSet p;
  register_gcgru(p, "cell", 1, 2);
  p.initialize(1);
  Tape t;
  bind_gcgru(t, p, "cell");
  const Gradients g = gradients(t, ad::sum(t.constant(Matrix::Ones(2, 2))));
  for (const auto& [name, v] : g) CHECK(v.isZero(0.0));
}

TEST_CASE("GCGRU and DIT gradients match finite differences") {
  std::mt19937_64 rng(13);
  const Edge edges[] = {{0, 1}, {1, 2}, {2, 3}};
  const MetroGraph g = build_graph(edges, 4);
  ParameterSet p;
  register_gcgru(p, "od", 2, 4);
  register_gcgru(p, "do", 2, 4);
  register_dit(p, "dit", 4);
  p.initialize(14);
  for (auto& [name, v] : p.values()) {
    if (name.find("bias") != std::string::npos) v = random_matrix(rng, v.rows(), v.cols(), 0.3);
  }
  const Matrix x_od = random_matrix(rng, 4, 2);
  const Matrix x_do = random_matrix(rng, 4, 2);
  const Matrix target = random_matrix(rng, 4, 4);
  auto build = [&](Tape& t) {
    const Var w = t.constant(g.weights());
    const Var h0 = t.constant(Matrix::Zero(4, 4));
    const Var od = gcgru_step(t.constant(x_od), h0, w, bind_gcgru(t, p, "od"));
    const Var dom = gcgru_step(t.constant(x_do), h0, w, bind_gcgru(t, p, "do"));
    const DitResult r = dit_step(od, dom, bind_dit(t, p, "dit"), 2, true);
    return ad::add(ad::mean_abs_error(r.od, t.constant(target)),
                   ad::sum(ad::hadamard(r.dom, r.dom)));
  };
  CHECK(max_gradient_error(p, build) < 1e-4);
}

TEST_CASE("property: attention rows are stochastic") {
  std::mt19937_64 rng(15);
  for (int n = 1; n <= 16; ++n) {
    ParameterSet p;
    register_dit(p, "dit", 8);
    p.initialize(static_cast<std::uint64_t>(n));
    Tape t;
    const DitResult r = dit_step(t.constant(random_matrix(rng, n, 8, 2.0)),
                                 t.constant(random_matrix(rng, n, 8, 2.0)), bind_dit(t, p, "dit"),
                                 4, true);
    for (const auto* list : {&r.do_to_od, &r.od_to_do}) {
      REQUIRE(list->size() == 4);
      for (const Var& a : *list) {
        CHECK((a.value().rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
        CHECK(a.value().minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("property: residual identity under zeroed value and output projections") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterSet p;
    register_dit(p, "dit", 4);
    p.initialize(static_cast<std::uint64_t>(trial));
    p.at("dit.od.out").setZero();
    p.at("dit.do.out").setZero();
    Tape t;
    const Matrix od = random_matrix(rng, 3 + trial, 4);
    const Matrix dom = random_matrix(rng, 3 + trial, 4);
    const DitResult r = dit_step(t.constant(od), t.constant(dom), bind_dit(t, p, "dit"), 1, true);
    CHECK(r.od.value() == od);
    CHECK(r.dom.value() == dom);
  }
}

TEST_CASE("property: one GCGRU step from zero state stays inside (-1, 1)") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 7;
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
    const MetroGraph g = build_graph(edges, n);
    ParameterSet p;
    register_gcgru(p, "cell", 3, 5);
    p.initialize(static_cast<std::uint64_t>(trial));
    Tape t;
    const Var h = gcgru_step(t.constant(random_matrix(rng, n, 3, 10.0)),
                             t.constant(Matrix::Zero(n, 5)), t.constant(g.weights()),
                             bind_gcgru(t, p, "cell"));
    CHECK(h.value().cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("property: graph conv is permutation equivariant") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + trial;
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng() % 3 == 0) edges.push_back({i, j});
      }
    }
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> moved;
    for (const Edge& e : edges) moved.push_back({perm[e.a], perm[e.b]});
    Eigen::PermutationMatrix<Eigen::Dynamic> pm(n);
    for (int i = 0; i < n; ++i) pm.indices()(i) = perm[i];

    const Matrix x = random_matrix(rng, n, 3);
    const Matrix ts = random_matrix(rng, 3, 2);
    const Matrix tn = random_matrix(rng, 3, 2);
    Tape t;
    const Var base = graph_conv(t.constant(x), t.constant(build_graph(edges, n).weights()),
                                t.constant(ts), t.constant(tn));
    const Var permuted =
        graph_conv(t.constant(pm * x), t.constant(build_graph(moved, n).weights()),
                   t.constant(ts), t.constant(tn));
    CHECK((permuted.value() - pm * base.value()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("parameter initialization") {
  ParameterSet a, b;
  for (ParameterSet* p : {&a, &b}) {
    register_gcgru(*p, "cell", 3, 4);
    p->add("slope", 1, 1, Init::PreluSlope);
  }
  a.initialize(21);
  b.initialize(21);
  CHECK(a == b);
  const double limit = std::sqrt(6.0 / (7 + 8));
  CHECK(a.at("cell.gate.self").cwiseAbs().maxCoeff() <= limit);
  CHECK(a.at("cell.gate.bias").isZero(0.0));
  CHECK(a.at("slope")(0, 0) == 0.25);
  b.initialize(22);
  CHECK(!(a == b));
  CHECK(thrown_kind([&] { a.add("slope", 1, 1, Init::Zero); }) == ErrorKind::Config);
  CHECK(thrown_kind([&] { a.at("missing"); }) == ErrorKind::Config);
}

TEST_CASE("checkpoint round trip and validation") {
  ParameterSet p;
  register_gcgru(p, "cell", 2, 3);
  register_dit(p, "dit", 3);
  p.initialize(30);
  const auto dir = std::filesystem::temp_directory_path() / "hiam_ckpt_tests";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.bin";
  const nlohmann::json manifest = {{"model", {{"d", 3}}}, {"note", "x"}};
  save_checkpoint(path, manifest, p);
  CHECK(!std::filesystem::exists(path.string() + ".tmp"));
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.manifest == manifest);
  CHECK(ck.params == p);

  // Layout: magic, version, manifest length.
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "HIAMCKPT");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  CHECK(version == kCheckpointVersion);
  in.close();

  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t future = kCheckpointVersion + 1;
    f.write(reinterpret_cast<const char*>(&future), 4);
  }
  CHECK(thrown_kind([&] { load_checkpoint(path); }) == ErrorKind::SchemaVersion);
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPT";
  }
  CHECK(thrown_kind([&] { load_checkpoint(path); }) == ErrorKind::Parse);
  CHECK(thrown_kind([&] { load_checkpoint(dir / "absent.bin"); }) == ErrorKind::Io);
}
