#include "hiam/nncore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "hiam/error.hpp"

namespace hiam {

void ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init) {
  if (values_.contains(name)) throw Error(ErrorKind::Config, "duplicate parameter " + name);
  values_.emplace(name, Matrix::Zero(rows, cols));
  init_.emplace(name, init);
}

Matrix& ParameterSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error(ErrorKind::Config, "unknown parameter " + name);
  return it->second;
}

const Matrix& ParameterSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error(ErrorKind::Config, "unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [_, v] : values_) total += static_cast<std::size_t>(v.size());
  return total;
}

void ParameterSet::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, value] : values_) {
    const auto it = init_.find(name);
    const Init rule = it == init_.end() ? Init::Zero : it->second;
    switch (rule) {
      case Init::Zero:
        value.setZero();
        break;
      case Init::PreluSlope:
        value.setConstant(0.25);
        break;
      case Init::Xavier: {
        const double limit = std::sqrt(6.0 / static_cast<double>(value.rows() + value.cols()));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (Eigen::Index r = 0; r < value.rows(); ++r) {
          for (Eigen::Index c = 0; c < value.cols(); ++c) value(r, c) = dist(rng);
        }
        break;
      }
    }
  }
}

Gradients gradients(Tape& tape, Var loss) {
  tape.backward(loss);
  return tape.parameter_gradients();
}

Var graph_conv(Var x, Var graph_weights, Var theta_self, Var theta_neighbor) {
  if (graph_weights.rows() != x.rows() || graph_weights.cols() != x.rows()) {
    throw Error(ErrorKind::Dimension, "graph_conv: features have " + std::to_string(x.rows()) +
                                          " rows, graph has " +
                                          std::to_string(graph_weights.rows()) + " stations");
  }
  if (theta_self.rows() != x.cols() || theta_neighbor.rows() != x.cols()) {
    throw Error(ErrorKind::Dimension, "graph_conv: input width " + std::to_string(x.cols()) +
                                          " does not match parameters");
  }
  return ad::add(ad::matmul(x, theta_self),
                 ad::matmul(ad::matmul(graph_weights, x), theta_neighbor));
}

void register_gcgru(ParameterSet& params, const std::string& prefix, int input_dim,
                    int hidden_dim) {
  const int in = input_dim + hidden_dim;
  params.add(prefix + ".gate.self", in, 2 * hidden_dim, Init::Xavier);
  params.add(prefix + ".gate.neighbor", in, 2 * hidden_dim, Init::Xavier);
  params.add(prefix + ".gate.bias", 1, 2 * hidden_dim, Init::Zero);
  params.add(prefix + ".cand.self", in, hidden_dim, Init::Xavier);
  params.add(prefix + ".cand.neighbor", in, hidden_dim, Init::Xavier);
  params.add(prefix + ".cand.bias", 1, hidden_dim, Init::Zero);
}

GcgruWeights bind_gcgru(Tape& tape, const ParameterSet& params, const std::string& prefix) {
  auto bind = [&](const std::string& leaf) {
    const std::string name = prefix + leaf;
    return tape.parameter(name, params.at(name));
  };
  return {bind(".gate.self"), bind(".gate.neighbor"), bind(".gate.bias"),
          bind(".cand.self"), bind(".cand.neighbor"), bind(".cand.bias")};
}

Var gcgru_step(Var x, Var h, Var graph_weights, const GcgruWeights& w) {
  const Eigen::Index d = h.cols();
  if (x.rows() != h.rows()) throw Error(ErrorKind::Dimension, "gcgru: input/state row mismatch");
  if (w.cand_bias.cols() != d) {
    throw Error(ErrorKind::Dimension, "gcgru: state width " + std::to_string(d) +
                                          " does not match parameters");
  }
  const Var xh[] = {x, h};
  const Var gates = ad::sigmoid(
      ad::add_row(graph_conv(ad::concat_cols(xh), graph_weights, w.gate_self, w.gate_neighbor),
                  w.gate_bias));
  const Var reset = ad::slice_cols(gates, 0, d);
  const Var update = ad::slice_cols(gates, d, d);
  const Var xrh[] = {x, ad::hadamard(reset, h)};
  const Var cand = ad::tanh(
      ad::add_row(graph_conv(ad::concat_cols(xrh), graph_weights, w.cand_self, w.cand_neighbor),
                  w.cand_bias));
  return ad::add(ad::hadamard(update, h), ad::hadamard(ad::affine(update, -1.0, 1.0), cand));
}

void register_dit(ParameterSet& params, const std::string& prefix, int hidden_dim) {
  for (const char* branch : {".od", ".do"}) {
    for (const char* proj : {".query", ".key", ".value", ".out"}) {
      params.add(prefix + branch + proj, hidden_dim, hidden_dim, Init::Xavier);
    }
  }
}

DitWeights bind_dit(Tape& tape, const ParameterSet& params, const std::string& prefix) {
  auto bind = [&](const std::string& leaf) {
    const std::string name = prefix + leaf;
    return tape.parameter(name, params.at(name));
  };
  return {bind(".od.query"), bind(".od.key"), bind(".od.value"), bind(".od.out"),
          bind(".do.query"), bind(".do.key"), bind(".do.value"), bind(".do.out")};
}

namespace {

// Cross attention of `queries` over `keys`/`values`, heads concatenated.
Var attend(Var queries, Var keys, Var values, int heads, bool scaled, std::vector<Var>& weights) {
  const Eigen::Index width = queries.cols() / heads;
  const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(width)) : 1.0;
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var q = ad::slice_cols(queries, h * width, width);
    const Var k = ad::slice_cols(keys, h * width, width);
    const Var v = ad::slice_cols(values, h * width, width);
    const Var a = ad::softmax_rows(ad::affine(ad::matmul_nt(q, k), scale, 0.0));
    weights.push_back(a);
    contexts.push_back(ad::matmul(a, v));
  }
  return heads == 1 ? contexts.front() : ad::concat_cols(contexts);
}

}  // namespace

DitResult dit_step(Var h_od, Var h_do, const DitWeights& w, int heads, bool scaled) {
  const Eigen::Index d = h_od.cols();
  if (heads <= 0 || d % heads != 0) {
    throw Error(ErrorKind::Config, "feature width " + std::to_string(d) +
                                       " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (h_do.cols() != d || h_do.rows() != h_od.rows()) {
    throw Error(ErrorKind::Dimension, "dit: OD and DO states differ in shape");
  }
  const Var q_od = ad::matmul(h_od, w.q_od);
  const Var k_od = ad::matmul(h_od, w.k_od);
  const Var v_od = ad::matmul(h_od, w.v_od);
  const Var q_do = ad::matmul(h_do, w.q_do);
  const Var k_do = ad::matmul(h_do, w.k_do);
  const Var v_do = ad::matmul(h_do, w.v_do);

  DitResult out;
  const Var ctx_od = attend(q_od, k_do, v_do, heads, scaled, out.do_to_od);
  const Var ctx_do = attend(q_do, k_od, v_od, heads, scaled, out.od_to_do);
  out.od = ad::add(h_od, ad::matmul(ctx_od, w.out_od));
  out.dom = ad::add(h_do, ad::matmul(ctx_do, w.out_do));
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'I', 'A', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::Parse, path.string() + ": truncated checkpoint");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParameterSet& params) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string text = manifest.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.values().size()));
    for (const auto& [name, value] : params.values()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(value.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(value.cols()));
      for (Eigen::Index r = 0; r < value.rows(); ++r) {
        for (Eigen::Index c = 0; c < value.cols(); ++c) put<double>(out, value(r, c));
      }
    }
    if (!out) throw Error(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::Parse, path.string() + ": not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::SchemaVersion, path.string() + ": checkpoint version " +
                                              std::to_string(version) + " unsupported");
  }
  Checkpoint ck;
  const auto manifest_len = get<std::uint64_t>(in, path);
  std::string text(manifest_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_len))) {
    throw Error(ErrorKind::Parse, path.string() + ": truncated manifest");
  }
  try {
    ck.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": manifest: " + e.what());
  }
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw Error(ErrorKind::Parse, path.string() + ": truncated parameter name");
    }
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    ck.params.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                  Init::Zero);
    Matrix& value = ck.params.at(name);
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) value(r, c) = get<double>(in, path);
    }
  }
  return ck;
}

}  // namespace hiam
