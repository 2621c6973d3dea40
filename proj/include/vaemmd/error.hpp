#pragma once

#include <stdexcept>
#include <string>

namespace vaemmd {

/// Coarse failure classes. The C API and the CLI map these onto return codes.
enum class ErrorCode {
  kInvalidArgument,  // shape mismatch, bad parameter, precondition violation
  kConfig,           // malformed or inconsistent configuration document
  kFormat,           // malformed file header or payload
  kTruncated,        // payload shorter than the header promises
  kPayloadMismatch,  // payload length disagrees with the declared shape
  kValidation,       // well-formed data violating a semantic invariant
  kMissingArtifact,  // an input file or upstream artifact does not exist
  kIo,               // read/write failure
  kNumerical,        // non-finite values or degenerate statistics
  kState,            // API misuse, e.g. backward twice without reset
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace vaemmd
