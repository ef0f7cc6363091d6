#pragma once

#include <stdexcept>
#include <string>

namespace manipflow {

enum class ErrorKind {
  Input,
  Config,
  Dependency,
  NoOverlap,
  Ambiguity,
  Degenerate,
  NoConsensus,
  ObjectLost,
};

const char* to_string(ErrorKind kind);

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error input_error(const std::string& what) { return {ErrorKind::Input, what}; }
inline Error config_error(const std::string& what) { return {ErrorKind::Config, what}; }

}  // namespace manipflow
