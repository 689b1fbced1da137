#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hiam/aggregation.hpp"
#include "hiam/nncore.hpp"
#include "hiam/topology.hpp"
#include "json.hpp"

namespace hiam {

enum class InteractionMode { None, SingleStation, Dit };

std::string to_string(InteractionMode mode);
/// Accepts "none", "single_station", "dit"; throws ErrorKind::Config otherwise.
InteractionMode parse_interaction_mode(const std::string& text);

struct ModelConfig {
  int stations = 0;
  int k = 0;
  int d = 96;
  int heads = 4;
  int n = 4;
  int m = 4;
  /// Raw unfinished-order vector as an extra input branch ("IOD+U").
  bool use_u_raw = false;
  bool use_uod_short = true;
  bool use_uod_long = true;
  InteractionMode interaction = InteractionMode::Dit;
  bool scaled_attention = true;

  /// Throws ErrorKind::Config on non-positive sizes or d % heads != 0.
  void validate() const;
  int auxiliary_branches() const {
    return static_cast<int>(use_u_raw) + static_cast<int>(use_uod_short) +
           static_cast<int>(use_uod_long);
  }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// One normalized input interval bound on a tape. `u` is N x 1.
struct StepInput {
  Var iod;
  Var u;
  Var uod_long;
  Var uod_short;
  Var dom;
};

/// Hidden states of every encoder GCGRU. od2 and do2 hold the
/// interaction-enhanced states, which is what the next step consumes.
struct EncoderState {
  Var uod_long;
  Var uod_short;
  Var u;
  Var iod;
  Var od2;
  Var do1;
  Var do2;
};

struct DecoderState {
  Var od1;
  Var od2;
  Var do1;
  Var do2;
  bool initialized = false;
};

struct StepPrediction {
  Var od;
  Var dom;
};

struct Forecast {
  std::vector<Var> od;
  std::vector<Var> dom;
};

struct InteractionWeights {
  DitWeights dit;
  Var station_weight;  // 2d x 2d, single_station mode
  Var station_bias;    // 1 x 2d
};

struct HeadWeights {
  Var hidden;       // d x d
  Var hidden_bias;  // 1 x d
  Var slope;        // 1 x 1 PReLU slope
  Var out;          // d x K
  Var out_bias;     // 1 x K
};

/// Every parameter of a model bound on one tape. Disabled branches stay
/// default-constructed.
struct BoundModel {
  Var graph;
  GcgruWeights enc_uod_long, enc_uod_short, enc_u, enc_iod, enc_od2, enc_do1, enc_do2;
  Var fusion_weight;  // (branches * d) x d
  Var fusion_bias;    // 1 x d
  InteractionWeights enc_inter1, enc_inter2;
  GcgruWeights dec_od1, dec_od2, dec_do1, dec_do2;
  InteractionWeights dec_inter1, dec_inter2;
  HeadWeights od_head, do_head;
};

/// Seq2Seq forecaster. Owns its parameters; graph weights are copied in.
class HiamModel {
 public:
  HiamModel(ModelConfig cfg, const MetroGraph& graph);
  HiamModel(ModelConfig cfg, Matrix graph_weights);

  const ModelConfig& config() const { return cfg_; }
  const Matrix& graph_weights() const { return graph_weights_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Parameters are borrowed: the model must outlive the tape.
  BoundModel bind(Tape& tape) const;

  EncoderState initial_state(Tape& tape) const;
  EncoderState encoder_step(const BoundModel& b, const EncoderState& state,
                            const StepInput& x) const;
  DecoderState handoff(const EncoderState& state) const;
  /// Throws ErrorKind::UninitializedState if `state` did not come from handoff().
  std::pair<DecoderState, StepPrediction> decoder_step(const BoundModel& b,
                                                       const DecoderState& state, Var prev_od,
                                                       Var prev_do) const;

  /// n encoder steps from zero state, handoff, m decoder steps fed back with
  /// their own predictions (the first decoder input is normalized zero).
  Forecast forward(Tape& tape, const BoundModel& b, const SnapshotSample& normalized) const;

  /// Forward on a private tape, values only.
  std::vector<SampleTarget> predict(const SnapshotSample& normalized) const;

 private:
  void register_parameters();
  std::pair<Var, Var> interact(const InteractionWeights& w, Var h_od, Var h_do) const;

  ModelConfig cfg_;
  Matrix graph_weights_;
  ParameterSet params_;
};

/// Binds a sample interval's normalized matrices as tape constants.
StepInput bind_input(Tape& tape, const SampleInput& input);

}  // namespace hiam
