#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hiam {

enum class ErrorKind {
  InvalidEdge,
  Parse,
  Config,
  Dimension,
  InsufficientData,
  EmptyInput,
  UninitializedState,
  Divergence,
  MissingKey,
  SchemaVersion,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so the CLI can print a
/// machine-parseable line without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hiam
