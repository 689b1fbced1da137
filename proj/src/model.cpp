#include "hiam/model.hpp"

#include "hiam/error.hpp"

namespace hiam {

std::string to_string(InteractionMode mode) {
  switch (mode) {
    case InteractionMode::None:
      return "none";
    case InteractionMode::SingleStation:
      return "single_station";
    case InteractionMode::Dit:
      return "dit";
  }
  return "unknown";
}

InteractionMode parse_interaction_mode(const std::string& text) {
  if (text == "none") return InteractionMode::None;
  if (text == "single_station") return InteractionMode::SingleStation;
  if (text == "dit") return InteractionMode::Dit;
  throw Error(ErrorKind::Config, "unknown interaction mode '" + text + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw Error(ErrorKind::Config, std::string(name) + " must be positive");
  };
  positive(stations, "stations");
  positive(k, "k");
  positive(d, "d");
  positive(heads, "heads");
  positive(n, "n");
  positive(m, "m");
  if (d % heads != 0) {
    throw Error(ErrorKind::Config, "d=" + std::to_string(d) + " is not divisible by heads=" +
                                       std::to_string(heads));
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"stations", stations},
          {"k", k},
          {"d", d},
          {"heads", heads},
          {"n", n},
          {"m", m},
          {"use_u_raw", use_u_raw},
          {"use_uod_short", use_uod_short},
          {"use_uod_long", use_uod_long},
          {"interaction", to_string(interaction)},
          {"scaled_attention", scaled_attention}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw Error(ErrorKind::MissingKey, std::string("model.") + key);
    return j.at(key);
  };
  ModelConfig c;
  try {
    c.stations = need("stations").get<int>();
    c.k = need("k").get<int>();
    c.d = need("d").get<int>();
    c.heads = need("heads").get<int>();
    c.n = need("n").get<int>();
    c.m = need("m").get<int>();
    c.use_u_raw = need("use_u_raw").get<bool>();
    c.use_uod_short = need("use_uod_short").get<bool>();
    c.use_uod_long = need("use_uod_long").get<bool>();
    c.interaction = parse_interaction_mode(need("interaction").get<std::string>());
    c.scaled_attention = need("scaled_attention").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

HiamModel::HiamModel(ModelConfig cfg, const MetroGraph& graph)
    : HiamModel(std::move(cfg), graph.weights()) {}

HiamModel::HiamModel(ModelConfig cfg, Matrix graph_weights)
    : cfg_(std::move(cfg)), graph_weights_(std::move(graph_weights)) {
  cfg_.validate();
  if (graph_weights_.rows() != cfg_.stations || graph_weights_.cols() != cfg_.stations) {
    throw Error(ErrorKind::Dimension, "graph has " + std::to_string(graph_weights_.rows()) +
                                          " stations, model expects " +
                                          std::to_string(cfg_.stations));
  }
  register_parameters();
}

namespace {

void register_interaction(ParameterSet& p, const std::string& prefix, const ModelConfig& c) {
  switch (c.interaction) {
    case InteractionMode::None:
      break;
    case InteractionMode::SingleStation:
      p.add(prefix + ".station.weight", 2 * c.d, 2 * c.d, Init::Xavier);
      p.add(prefix + ".station.bias", 1, 2 * c.d, Init::Zero);
      break;
    case InteractionMode::Dit:
      register_dit(p, prefix, c.d);
      break;
  }
}

void register_head(ParameterSet& p, const std::string& prefix, const ModelConfig& c) {
  p.add(prefix + ".hidden", c.d, c.d, Init::Xavier);
  p.add(prefix + ".hidden_bias", 1, c.d, Init::Zero);
  p.add(prefix + ".slope", 1, 1, Init::PreluSlope);
  p.add(prefix + ".out", c.d, c.k, Init::Xavier);
  p.add(prefix + ".out_bias", 1, c.k, Init::Zero);
}

InteractionWeights bind_interaction(Tape& t, const ParameterSet& p, const std::string& prefix,
                                    const ModelConfig& c) {
  InteractionWeights w;
  if (c.interaction == InteractionMode::SingleStation) {
    w.station_weight = t.parameter(prefix + ".station.weight", p.at(prefix + ".station.weight"));
    w.station_bias = t.parameter(prefix + ".station.bias", p.at(prefix + ".station.bias"));
  } else if (c.interaction == InteractionMode::Dit) {
    w.dit = bind_dit(t, p, prefix);
  }
  return w;
}

HeadWeights bind_head(Tape& t, const ParameterSet& p, const std::string& prefix) {
  auto bind = [&](const std::string& leaf) {
    return t.parameter(prefix + leaf, p.at(prefix + leaf));
  };
  return {bind(".hidden"), bind(".hidden_bias"), bind(".slope"), bind(".out"),
          bind(".out_bias")};
}

Var apply_head(const HeadWeights& w, Var h) {
  const Var hidden = ad::prelu(ad::add_row(ad::matmul(h, w.hidden), w.hidden_bias), w.slope);
  return ad::add_row(ad::matmul(hidden, w.out), w.out_bias);
}

}  // namespace

void HiamModel::register_parameters() {
  const ModelConfig& c = cfg_;
  ParameterSet& p = params_;
  if (c.use_uod_long) register_gcgru(p, "enc.uod_long", c.k, c.d);
  if (c.use_uod_short) register_gcgru(p, "enc.uod_short", c.k, c.d);
  if (c.use_u_raw) register_gcgru(p, "enc.u", 1, c.d);
  register_gcgru(p, "enc.iod", c.k, c.d);
  if (c.auxiliary_branches() > 0) {
    p.add("enc.fusion.weight", c.auxiliary_branches() * c.d, c.d, Init::Xavier);
    p.add("enc.fusion.bias", 1, c.d, Init::Zero);
  }
  register_gcgru(p, "enc.do1", c.k, c.d);
  register_gcgru(p, "enc.od2", c.d, c.d);
  register_gcgru(p, "enc.do2", c.d, c.d);
  register_interaction(p, "enc.inter1", c);
  register_interaction(p, "enc.inter2", c);

  register_gcgru(p, "dec.od1", c.k, c.d);
  register_gcgru(p, "dec.do1", c.k, c.d);
  register_gcgru(p, "dec.od2", c.d, c.d);
  register_gcgru(p, "dec.do2", c.d, c.d);
  register_interaction(p, "dec.inter1", c);
  register_interaction(p, "dec.inter2", c);

  register_head(p, "head.od", c);
  register_head(p, "head.do", c);
}

BoundModel HiamModel::bind(Tape& tape) const {
  const ModelConfig& c = cfg_;
  const ParameterSet& p = params_;
  BoundModel b;
  b.graph = tape.constant(graph_weights_);
  if (c.use_uod_long) b.enc_uod_long = bind_gcgru(tape, p, "enc.uod_long");
  if (c.use_uod_short) b.enc_uod_short = bind_gcgru(tape, p, "enc.uod_short");
  if (c.use_u_raw) b.enc_u = bind_gcgru(tape, p, "enc.u");
  b.enc_iod = bind_gcgru(tape, p, "enc.iod");
  if (c.auxiliary_branches() > 0) {
    b.fusion_weight = tape.parameter("enc.fusion.weight", p.at("enc.fusion.weight"));
    b.fusion_bias = tape.parameter("enc.fusion.bias", p.at("enc.fusion.bias"));
  }
  b.enc_do1 = bind_gcgru(tape, p, "enc.do1");
  b.enc_od2 = bind_gcgru(tape, p, "enc.od2");
  b.enc_do2 = bind_gcgru(tape, p, "enc.do2");
  b.enc_inter1 = bind_interaction(tape, p, "enc.inter1", c);
  b.enc_inter2 = bind_interaction(tape, p, "enc.inter2", c);
  b.dec_od1 = bind_gcgru(tape, p, "dec.od1");
  b.dec_do1 = bind_gcgru(tape, p, "dec.do1");
  b.dec_od2 = bind_gcgru(tape, p, "dec.od2");
  b.dec_do2 = bind_gcgru(tape, p, "dec.do2");
  b.dec_inter1 = bind_interaction(tape, p, "dec.inter1", c);
  b.dec_inter2 = bind_interaction(tape, p, "dec.inter2", c);
  b.od_head = bind_head(tape, p, "head.od");
  b.do_head = bind_head(tape, p, "head.do");
  return b;
}

EncoderState HiamModel::initial_state(Tape& tape) const {
  const Matrix zero = Matrix::Zero(cfg_.stations, cfg_.d);
  EncoderState s;
  if (cfg_.use_uod_long) s.uod_long = tape.constant(zero);
  if (cfg_.use_uod_short) s.uod_short = tape.constant(zero);
  if (cfg_.use_u_raw) s.u = tape.constant(zero);
  s.iod = tape.constant(zero);
  s.od2 = tape.constant(zero);
  s.do1 = tape.constant(zero);
  s.do2 = tape.constant(zero);
  return s;
}

std::pair<Var, Var> HiamModel::interact(const InteractionWeights& w, Var h_od, Var h_do) const {
  switch (cfg_.interaction) {
    case InteractionMode::None:
      return {h_od, h_do};
    case InteractionMode::SingleStation: {
      // Each station mixes only its own OD and DO rows.
      const Var both[] = {h_od, h_do};
      const Var mixed =
          ad::add_row(ad::matmul(ad::concat_cols(both), w.station_weight), w.station_bias);
      return {ad::add(h_od, ad::slice_cols(mixed, 0, cfg_.d)),
              ad::add(h_do, ad::slice_cols(mixed, cfg_.d, cfg_.d))};
    }
    case InteractionMode::Dit: {
      const DitResult r = dit_step(h_od, h_do, w.dit, cfg_.heads, cfg_.scaled_attention);
      return {r.od, r.dom};
    }
  }
  return {h_od, h_do};
}

namespace {

void check_input(const Var& v, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (v.rows() != rows || v.cols() != cols) {
    throw Error(ErrorKind::Dimension, std::string(what) + " is " + std::to_string(v.rows()) +
                                          "x" + std::to_string(v.cols()) + ", expected " +
                                          std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

EncoderState HiamModel::encoder_step(const BoundModel& b, const EncoderState& s,
                                     const StepInput& x) const {
  const ModelConfig& c = cfg_;
  check_input(x.iod, c.stations, c.k, "iod");
  check_input(x.dom, c.stations, c.k, "do");
  EncoderState next;
  std::vector<Var> aux;
  if (c.use_uod_long) {
    check_input(x.uod_long, c.stations, c.k, "uod_long");
    next.uod_long = gcgru_step(x.uod_long, s.uod_long, b.graph, b.enc_uod_long);
    aux.push_back(next.uod_long);
  }
  if (c.use_uod_short) {
    check_input(x.uod_short, c.stations, c.k, "uod_short");
    next.uod_short = gcgru_step(x.uod_short, s.uod_short, b.graph, b.enc_uod_short);
    aux.push_back(next.uod_short);
  }
  if (c.use_u_raw) {
    check_input(x.u, c.stations, 1, "u");
    next.u = gcgru_step(x.u, s.u, b.graph, b.enc_u);
    aux.push_back(next.u);
  }
  next.iod = gcgru_step(x.iod, s.iod, b.graph, b.enc_iod);

  Var od1 = next.iod;
  if (!aux.empty()) {
    const Var stacked = aux.size() == 1 ? aux.front() : ad::concat_cols(aux);
    od1 = ad::add(od1, ad::add_row(ad::matmul(stacked, b.fusion_weight), b.fusion_bias));
  }
  next.do1 = gcgru_step(x.dom, s.do1, b.graph, b.enc_do1);

  const auto [od1_hat, do1_hat] = interact(b.enc_inter1, od1, next.do1);
  const Var od2 = gcgru_step(od1_hat, s.od2, b.graph, b.enc_od2);
  const Var do2 = gcgru_step(do1_hat, s.do2, b.graph, b.enc_do2);
  std::tie(next.od2, next.do2) = interact(b.enc_inter2, od2, do2);
  return next;
}

DecoderState HiamModel::handoff(const EncoderState& s) const {
  if (!s.iod.valid() || !s.od2.valid() || !s.do1.valid() || !s.do2.valid()) {
    throw Error(ErrorKind::UninitializedState, "encoder state is empty");
  }
  return {s.iod, s.od2, s.do1, s.do2, true};
}

std::pair<DecoderState, StepPrediction> HiamModel::decoder_step(const BoundModel& b,
                                                                const DecoderState& s,
                                                                Var prev_od,
                                                                Var prev_do) const {
  if (!s.initialized) {
    throw Error(ErrorKind::UninitializedState, "decoder called before encoder handoff");
  }
  check_input(prev_od, cfg_.stations, cfg_.k, "previous OD prediction");
  check_input(prev_do, cfg_.stations, cfg_.k, "previous DO prediction");
  DecoderState next;
  next.initialized = true;
  next.od1 = gcgru_step(prev_od, s.od1, b.graph, b.dec_od1);
  next.do1 = gcgru_step(prev_do, s.do1, b.graph, b.dec_do1);
  const auto [od1_hat, do1_hat] = interact(b.dec_inter1, next.od1, next.do1);
  const Var od2 = gcgru_step(od1_hat, s.od2, b.graph, b.dec_od2);
  const Var do2 = gcgru_step(do1_hat, s.do2, b.graph, b.dec_do2);
  std::tie(next.od2, next.do2) = interact(b.dec_inter2, od2, do2);
  StepPrediction out{apply_head(b.od_head, next.od2), apply_head(b.do_head, next.do2)};
  return {next, out};
}

StepInput bind_input(Tape& tape, const SampleInput& in) {
  StepInput x;
  x.iod = tape.constant(in.iod);
  x.u = tape.constant(Matrix(in.u));
  x.uod_long = tape.constant(in.uod_long);
  x.uod_short = tape.constant(in.uod_short);
  x.dom = tape.constant(in.dom);
  return x;
}

Forecast HiamModel::forward(Tape& tape, const BoundModel& b,
                            const SnapshotSample& normalized) const {
  if (static_cast<int>(normalized.inputs.size()) != cfg_.n) {
    throw Error(ErrorKind::Dimension, "sample has " + std::to_string(normalized.inputs.size()) +
                                          " input steps, model expects " +
                                          std::to_string(cfg_.n));
  }
  EncoderState state = initial_state(tape);
  for (const SampleInput& in : normalized.inputs) {
    state = encoder_step(b, state, bind_input(tape, in));
  }
  DecoderState dec = handoff(state);
  Var prev_od = tape.constant(Matrix::Zero(cfg_.stations, cfg_.k));
  Var prev_do = prev_od;
  Forecast f;
  for (int h = 0; h < cfg_.m; ++h) {
    auto [next, pred] = decoder_step(b, dec, prev_od, prev_do);
    dec = next;
    f.od.push_back(pred.od);
    f.dom.push_back(pred.dom);
    prev_od = pred.od;
    prev_do = pred.dom;
  }
  return f;
}

std::vector<SampleTarget> HiamModel::predict(const SnapshotSample& normalized) const {
  Tape tape;
  const BoundModel b = bind(tape);
  const Forecast f = forward(tape, b, normalized);
  std::vector<SampleTarget> out;
  out.reserve(f.od.size());
  for (std::size_t h = 0; h < f.od.size(); ++h) out.push_back({f.od[h].value(), f.dom[h].value()});
  return out;
}

}  // namespace hiam
