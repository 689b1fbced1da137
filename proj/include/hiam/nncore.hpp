#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiam/autodiff.hpp"
#include "json.hpp"

namespace hiam {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class Init { Xavier, Zero, PreluSlope };

/// Named learnable arrays. Names are dotted paths such as
/// "enc.od.iod.gate.self"; iteration order is lexicographic.
class ParameterSet {
 public:
  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init);

  bool contains(const std::string& name) const { return values_.contains(name); }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const std::map<std::string, Matrix>& values() const { return values_; }
  std::map<std::string, Matrix>& values() { return values_; }
  std::size_t scalar_count() const;

  /// Xavier-uniform for weights (limit sqrt(6 / (rows + cols)), rows being
  /// fan-in), zero for biases, 0.25 for PReLU slopes.
  void initialize(std::uint64_t seed);

  bool operator==(const ParameterSet& other) const { return values_ == other.values_; }

 private:
  std::map<std::string, Matrix> values_;
  std::map<std::string, Init> init_;
};

using Gradients = std::map<std::string, Matrix>;

/// Runs backward from `loss` and returns d loss / d parameter for every
/// parameter bound on the tape (zeros where the loss does not depend on it).
Gradients gradients(Tape& tape, Var loss);

/// Spatial graph convolution, row-major features: out = X Θ_self + W X Θ_nbr,
/// i.e. row i is x_i Θ_self + Σ_j W(i,j) x_j Θ_nbr.
Var graph_conv(Var x, Var graph_weights, Var theta_self, Var theta_neighbor);

struct GcgruWeights {
  Var gate_self;       // (in + d) x 2d, reset | update
  Var gate_neighbor;
  Var gate_bias;       // 1 x 2d
  Var cand_self;       // (in + d) x d
  Var cand_neighbor;
  Var cand_bias;       // 1 x d
};

void register_gcgru(ParameterSet& params, const std::string& prefix, int input_dim, int hidden_dim);
GcgruWeights bind_gcgru(Tape& tape, const ParameterSet& params, const std::string& prefix);

/// r = σ(GC([x‖h])), z = σ(GC([x‖h])), c = tanh(GC([x‖r⊙h])),
/// h' = z⊙h + (1 − z)⊙c.
Var gcgru_step(Var x, Var h, Var graph_weights, const GcgruWeights& w);

struct DitWeights {
  Var q_od, k_od, v_od, out_od;
  Var q_do, k_do, v_do, out_do;
};

void register_dit(ParameterSet& params, const std::string& prefix, int hidden_dim);
DitWeights bind_dit(Tape& tape, const ParameterSet& params, const std::string& prefix);

struct DitResult {
  Var od;
  Var dom;
  /// Per head: rows are OD stations (targets), columns DO stations (sources).
  std::vector<Var> do_to_od;
  /// Per head: rows are DO stations, columns OD stations.
  std::vector<Var> od_to_do;
};

/// Dual cross-attention: each branch queries the other, per head width
/// d/heads, softmax over source stations, heads concatenated, projected and
/// added residually. Throws ErrorKind::Config if d % heads != 0.
DitResult dit_step(Var h_od, Var h_do, const DitWeights& w, int heads, bool scaled);

// Checkpoint archive, all integers little-endian:
//   "HIAMCKPT" | u32 format version | u64 manifest length | manifest JSON |
//   u32 parameter count | per parameter in name order:
//   u32 name length | name | u64 rows | u64 cols | rows*cols f64 row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  ParameterSet params;
};

/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hiam
