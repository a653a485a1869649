#pragma once

#include <stdexcept>
#include <string>

namespace apnet {

enum class ErrorKind {
  Usage,         // bad arguments, non-scalar loss, unknown key
  InvalidInput,  // data that violates a precondition (empty waveform, shape mismatch)
  Config,        // inconsistent configuration
  Format,        // malformed file contents
  Io,            // file system failure
  Numeric,       // NaN/Inf produced or consumed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace apnet
