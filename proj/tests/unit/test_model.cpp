#include <numeric>
#include <random>

#include "dense_oracle.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "hiam/model.hpp"

using namespace hiam;
using namespace hiam::test;

namespace {

ModelConfig small_config(InteractionMode mode) {
  ModelConfig c;
  c.stations = 4;
  c.k = 3;
  c.d = 4;
  c.heads = 2;
  c.n = 3;
  c.m = 2;
  c.use_uod_short = true;
  c.use_uod_long = true;
  c.interaction = mode;
  return c;
}

MetroGraph y_graph() {
  const Edge edges[] = {{0, 1}, {1, 2}, {1, 3}};
  return build_graph(edges, 4);
}

Matrix noise(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

SnapshotSample random_sample(std::mt19937_64& rng, const ModelConfig& c) {
  SnapshotSample s;
  s.reference = c.n - 1;
  for (int i = 0; i < c.n; ++i) {
    SampleInput in;
    in.iod = noise(rng, c.stations, c.k);
    in.u = noise(rng, c.stations, 1);
    in.uod_long = noise(rng, c.stations, c.k);
    in.uod_short = noise(rng, c.stations, c.k);
    in.dom = noise(rng, c.stations, c.k);
    s.inputs.push_back(in);
  }
  for (int h = 0; h < c.m; ++h) {
    s.targets.push_back({noise(rng, c.stations, c.k), noise(rng, c.stations, c.k)});
  }
  return s;
}

void randomize(ParameterSet& p, std::mt19937_64& rng, double scale) {
  for (auto& [name, v] : p.values()) v = noise(rng, v.rows(), v.cols(), scale);
}

// Whole forward pass written against the dense block oracles.
std::vector<SampleTarget> dense_forward(const HiamModel& model, const SnapshotSample& s) {
  const ModelConfig& c = model.config();
  const ParameterSet& p = model.params();
  const Matrix& w = model.graph_weights();
  const Matrix zero = Matrix::Zero(c.stations, c.d);
  auto interact = [&](const std::string& prefix, Matrix& od, Matrix& dom) {
    if (c.interaction != InteractionMode::Dit) {
      REQUIRE(c.interaction == InteractionMode::None);
      return;
    }
    const Matrix od_new =
        dense_cross_attention(od, dom, p, prefix + ".od", prefix + ".do", c.heads,
                              c.scaled_attention);
    const Matrix do_new =
        dense_cross_attention(dom, od, p, prefix + ".do", prefix + ".od", c.heads,
                              c.scaled_attention);
    od = od_new;
    dom = do_new;
  };
  Matrix h_long = zero, h_short = zero, h_u = zero, h_iod = zero, h_od2 = zero, h_do1 = zero,
         h_do2 = zero;
  for (const SampleInput& in : s.inputs) {
    std::vector<Matrix> aux;
    if (c.use_uod_long) aux.push_back(h_long = dense_gcgru(in.uod_long, h_long, w, p,
                                                           "enc.uod_long"));
    if (c.use_uod_short) aux.push_back(h_short = dense_gcgru(in.uod_short, h_short, w, p,
                                                             "enc.uod_short"));
    if (c.use_u_raw) aux.push_back(h_u = dense_gcgru(Matrix(in.u), h_u, w, p, "enc.u"));
    h_iod = dense_gcgru(in.iod, h_iod, w, p, "enc.iod");
    Matrix od1 = h_iod;
    if (!aux.empty()) {
      Matrix stacked(c.stations, c.d * static_cast<Eigen::Index>(aux.size()));
      for (std::size_t a = 0; a < aux.size(); ++a) {
        stacked.middleCols(static_cast<Eigen::Index>(a) * c.d, c.d) = aux[a];
      }
      Matrix fused = stacked * p.at("enc.fusion.weight");
      fused.rowwise() += p.at("enc.fusion.bias").row(0);
      od1 += fused;
    }
    h_do1 = dense_gcgru(in.dom, h_do1, w, p, "enc.do1");
    Matrix do1 = h_do1;
    interact("enc.inter1", od1, do1);
    h_od2 = dense_gcgru(od1, h_od2, w, p, "enc.od2");
    h_do2 = dense_gcgru(do1, h_do2, w, p, "enc.do2");
    interact("enc.inter2", h_od2, h_do2);
  }
  Matrix d_od1 = h_iod, d_od2 = h_od2, d_do1 = h_do1, d_do2 = h_do2;
  Matrix prev_od = Matrix::Zero(c.stations, c.k), prev_do = prev_od;
  std::vector<SampleTarget> out;
  for (int h = 0; h < c.m; ++h) {
    d_od1 = dense_gcgru(prev_od, d_od1, w, p, "dec.od1");
    d_do1 = dense_gcgru(prev_do, d_do1, w, p, "dec.do1");
    Matrix od1 = d_od1, do1 = d_do1;
    interact("dec.inter1", od1, do1);
    d_od2 = dense_gcgru(od1, d_od2, w, p, "dec.od2");
    d_do2 = dense_gcgru(do1, d_do2, w, p, "dec.do2");
    interact("dec.inter2", d_od2, d_do2);
    prev_od = dense_prelu_head(d_od2, p, "head.od");
    prev_do = dense_prelu_head(d_do2, p, "head.do");
    out.push_back({prev_od, prev_do});
  }
  return out;
}

double max_difference(const std::vector<SampleTarget>& a, const std::vector<SampleTarget>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t h = 0; h < a.size(); ++h) {
    worst = std::max(worst, (a[h].od - b[h].od).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a[h].dom - b[h].dom).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("zero parameters predict zero") {
  HiamModel model(small_config(InteractionMode::Dit), y_graph());
  for (auto& [name, v] : model.params().values()) v.setZero();
  std::mt19937_64 rng(1);
  for (const SampleTarget& t : model.predict(random_sample(rng, model.config()))) {
    CHECK(t.od.isZero(0.0));
    CHECK(t.dom.isZero(0.0));
  }
}

TEST_CASE("zero inputs with zero biases predict zero") {
  HiamModel model(small_config(InteractionMode::Dit), y_graph());
  model.params().initialize(2);
  std::mt19937_64 rng(2);
  SnapshotSample s = random_sample(rng, model.config());
  for (SampleInput& in : s.inputs) {
    in.iod.setZero();
    in.u.setZero();
    in.uod_long.setZero();
    in.uod_short.setZero();
    in.dom.setZero();
  }
  for (const SampleTarget& t : model.predict(s)) {
    CHECK(t.od.isZero(0.0));
    CHECK(t.dom.isZero(0.0));
  }
}

TEST_CASE("forward pass matches the dense oracle") {
  for (InteractionMode mode : {InteractionMode::None, InteractionMode::Dit}) {
    for (bool short_on : {false, true}) {
      ModelConfig c = small_config(mode);
      c.use_uod_short = short_on;
      c.use_uod_long = !short_on;
      c.use_u_raw = short_on;
      HiamModel model(c, y_graph());
      std::mt19937_64 rng(3);
      randomize(model.params(), rng, 0.5);
      const SnapshotSample s = random_sample(rng, c);
      CAPTURE(short_on);
      CAPTURE(to_string(mode));
      CHECK(max_difference(model.predict(s), dense_forward(model, s)) < 1e-12);
    }
  }
}

TEST_CASE("disabled branches ignore their inputs and own no parameters") {
  ModelConfig c = small_config(InteractionMode::Dit);
  c.use_uod_short = false;
  c.use_uod_long = false;
  HiamModel model(c, y_graph());
  CHECK(!model.params().contains("enc.uod_short.gate.self"));
  CHECK(!model.params().contains("enc.uod_long.gate.self"));
  CHECK(!model.params().contains("enc.u.gate.self"));
  CHECK(!model.params().contains("enc.fusion.weight"));
  model.params().initialize(4);
  std::mt19937_64 rng(4);
  SnapshotSample s = random_sample(rng, c);
  const auto base = model.predict(s);
  for (SampleInput& in : s.inputs) {
    in.u = noise(rng, c.stations, 1, 5.0);
    in.uod_short = noise(rng, c.stations, c.k, 5.0);
    in.uod_long = noise(rng, c.stations, c.k, 5.0);
  }
  CHECK(max_difference(model.predict(s), base) == 0.0);
  s.inputs.back().iod(0, 0) += 1.0;
  CHECK(max_difference(model.predict(s), base) > 0.0);
}

TEST_CASE("enabled short-term branch influences the forecast") {
  ModelConfig c = small_config(InteractionMode::Dit);
  c.use_uod_long = false;
  HiamModel model(c, y_graph());
  model.params().initialize(5);
  std::mt19937_64 rng(5);
  SnapshotSample s = random_sample(rng, c);
  const auto base = model.predict(s);
  for (SampleInput& in : s.inputs) in.uod_long = noise(rng, c.stations, c.k, 5.0);
  CHECK(max_difference(model.predict(s), base) == 0.0);
  s.inputs.front().uod_short(2, 1) += 1.0;
  CHECK(max_difference(model.predict(s), base) > 0.0);
}

TEST_CASE("single-station interaction never mixes stations") {
  HiamModel model(small_config(InteractionMode::SingleStation), y_graph());
  std::mt19937_64 rng(6);
  randomize(model.params(), rng, 0.5);
  for (auto& [name, v] : model.params().values()) {
    if (name.ends_with(".neighbor")) v.setZero();
  }
  const SnapshotSample s = random_sample(rng, model.config());
  const auto base = model.predict(s);
  SnapshotSample moved = s;
  moved.inputs[1].dom.row(3).array() += 2.0;
  const auto after = model.predict(moved);
  for (std::size_t h = 0; h < base.size(); ++h) {
    CHECK(after[h].od.topRows(3) == base[h].od.topRows(3));
    CHECK(after[h].dom.topRows(3) == base[h].dom.topRows(3));
    CHECK(after[h].od.row(3) != base[h].od.row(3));
  }

  // DIT mixes stations even without graph neighbours.
  HiamModel dit(small_config(InteractionMode::Dit), y_graph());
  randomize(dit.params(), rng, 0.5);
  for (auto& [name, v] : dit.params().values()) {
    if (name.ends_with(".neighbor")) v.setZero();
  }
  const auto dit_base = dit.predict(s);
  const auto dit_after = dit.predict(moved);
  CHECK((dit_after[0].od.row(0) - dit_base[0].od.row(0)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("decoder requires an encoder handoff") {
  HiamModel model(small_config(InteractionMode::Dit), y_graph());
  model.params().initialize(7);
  Tape t;
  const BoundModel b = model.bind(t);
  const Var zero = t.constant(Matrix::Zero(4, 3));
  CHECK(thrown_kind([&] { model.decoder_step(b, DecoderState{}, zero, zero); }) ==
        ErrorKind::UninitializedState);
  CHECK(thrown_kind([&] { model.handoff(EncoderState{}); }) == ErrorKind::UninitializedState);
}

TEST_CASE("malformed samples and configurations are rejected") {
  ModelConfig c = small_config(InteractionMode::Dit);
  HiamModel model(c, y_graph());
  std::mt19937_64 rng(8);
  SnapshotSample s = random_sample(rng, c);
  s.inputs.pop_back();
  CHECK(thrown_kind([&] { model.predict(s); }) == ErrorKind::Dimension);
  s = random_sample(rng, c);
  s.inputs[0].iod = Matrix::Zero(4, 2);
  CHECK(thrown_kind([&] { model.predict(s); }) == ErrorKind::Dimension);

  c.heads = 3;
  CHECK(thrown_kind([&] { HiamModel bad(c, y_graph()); }) == ErrorKind::Config);
  c = small_config(InteractionMode::Dit);
  c.stations = 5;
  CHECK(thrown_kind([&] { HiamModel bad(c, y_graph()); }) == ErrorKind::Dimension);
  CHECK(thrown_kind([] { parse_interaction_mode("global"); }) == ErrorKind::Config);
}

TEST_CASE("model config JSON round trip") {
  ModelConfig c = small_config(InteractionMode::SingleStation);
  c.use_u_raw = true;
  c.scaled_attention = false;
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  nlohmann::json j = c.to_json();
  j.erase("heads");
  CHECK(thrown_kind([&] { ModelConfig::from_json(j); }) == ErrorKind::MissingKey);
}

TEST_CASE("initialization and prediction are deterministic") {
  HiamModel a(small_config(InteractionMode::Dit), y_graph());
  HiamModel b(small_config(InteractionMode::Dit), y_graph());
  a.params().initialize(9);
  b.params().initialize(9);
  CHECK(a.params() == b.params());
  std::mt19937_64 rng(9);
  const SnapshotSample s = random_sample(rng, a.config());
  CHECK(max_difference(a.predict(s), b.predict(s)) == 0.0);
  CHECK(max_difference(a.predict(s), a.predict(s)) == 0.0);
}

TEST_CASE("property: relabeling stations permutes the forecast") {
  std::mt19937_64 rng(10);
  const Edge edges[] = {{0, 1}, {1, 2}, {1, 3}};
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm(4);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> moved;
    for (const Edge& e : edges) moved.push_back({perm[e.a], perm[e.b]});
    Eigen::PermutationMatrix<Eigen::Dynamic> pm(4);
    for (int i = 0; i < 4; ++i) pm.indices()(i) = perm[i];

    HiamModel base(small_config(InteractionMode::Dit), build_graph(edges, 4));
    HiamModel relabeled(small_config(InteractionMode::Dit), build_graph(moved, 4));
    randomize(base.params(), rng, 0.5);
    relabeled.params() = base.params();

    const SnapshotSample s = random_sample(rng, base.config());
    SnapshotSample ps = s;
    for (SampleInput& in : ps.inputs) {
      in.iod = pm * in.iod;
      in.u = pm * in.u;
      in.uod_long = pm * in.uod_long;
      in.uod_short = pm * in.uod_short;
      in.dom = pm * in.dom;
    }
    const auto a = base.predict(s);
    const auto b = relabeled.predict(ps);
    for (std::size_t h = 0; h < a.size(); ++h) {
      CHECK((b[h].od - pm * a[h].od).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((b[h].dom - pm * a[h].dom).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("full model gradients match finite differences") {
  for (InteractionMode mode : {InteractionMode::Dit, InteractionMode::SingleStation}) {
    ModelConfig c = small_config(mode);
    c.use_u_raw = true;
    c.m = 2;
    c.n = 2;
    HiamModel model(c, y_graph());
    std::mt19937_64 rng(11);
    randomize(model.params(), rng, 0.4);
    const SnapshotSample s = random_sample(rng, c);
    auto build = [&](Tape& t) {
      const BoundModel b = model.bind(t);
      const Forecast f = model.forward(t, b, s);
      Var total = ad::mean_abs_error(f.od[0], t.constant(s.targets[0].od));
      for (int h = 0; h < c.m; ++h) {
        total = ad::add(total, ad::sum(ad::hadamard(f.od[h], f.dom[h])));
      }
      return total;
    };
    CHECK(max_gradient_error(model.params(), build) < 1e-4);
  }
}
