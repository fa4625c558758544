#include "teddy/error.hpp"

namespace teddy {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_files: return "missing-files";
    case ErrorCode::corrupt_record: return "corrupt-record";
    case ErrorCode::empty_class: return "empty-class";
    case ErrorCode::insufficient_samples: return "insufficient-samples";
    case ErrorCode::unknown_architecture: return "unknown-architecture";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::checksum_failure: return "checksum-failure";
    case ErrorCode::infeasible_ratio: return "infeasible-ratio";
    case ErrorCode::untrained_base: return "untrained-base";
    case ErrorCode::n_exceeds_pool: return "n-exceeds-pool";
    case ErrorCode::class_count_mismatch: return "class-count-mismatch";
    case ErrorCode::nan_in_activation: return "nan-in-activation";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::size_cap_exceeded: return "size-cap-exceeded";
    case ErrorCode::unknown_mode: return "unknown-mode";
    case ErrorCode::degenerate_config: return "degenerate-config";
    case ErrorCode::schema_violation: return "schema-violation";
    case ErrorCode::dangling_artifact: return "dangling-artifact";
    case ErrorCode::locked_output: return "locked-output";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::io_failure: return "io-failure";
  }
  return "unknown-error";
}

}  // namespace teddy
