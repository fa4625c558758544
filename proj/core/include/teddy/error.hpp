#pragma once

#include <stdexcept>
#include <string>

namespace teddy {

enum class ErrorCode {
  missing_files,
  corrupt_record,
  empty_class,
  insufficient_samples,
  unknown_architecture,
  shape_mismatch,
  version_mismatch,
  checksum_failure,
  infeasible_ratio,
  untrained_base,
  n_exceeds_pool,
  class_count_mismatch,
  nan_in_activation,
  divergence,
  size_cap_exceeded,
  unknown_mode,
  degenerate_config,
  schema_violation,
  dangling_artifact,
  locked_output,
  invalid_argument,
  io_failure,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace teddy
