#include "hiam/error.hpp"

namespace hiam {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidEdge: return "invalid_edge";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::InsufficientData: return "insufficient_data";
    case ErrorKind::EmptyInput: return "empty_input";
    case ErrorKind::UninitializedState: return "uninitialized_state";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::MissingKey: return "missing_key";
    case ErrorKind::SchemaVersion: return "schema_version";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace hiam
