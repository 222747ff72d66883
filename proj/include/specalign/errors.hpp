#pragma once

#include <stdexcept>
#include <string>

namespace specalign {

// Error categories double as CLI exit codes.
enum class ErrorCategory : int {
  config = 1,
  data = 2,
  numeric = 3,
};

enum class ErrorCode {
  // embedstore
  bad_magic,
  truncated_file,
  non_finite,
  io_error,
  index_out_of_range,
  missing_positive,
  count_mismatch,
  duplicate_candidate,
  duplicate_record_id,
  parse_error,
  // model
  shape_mismatch,
  degenerate_embedding,
  tape_mismatch,
  // train
  zero_norm_target,
  missing_positive_in_block,
  non_finite_gradient,
  empty_subset,
  // retrieval
  empty_input,
  missing_formula,
  too_few_candidates,
  // shift
  dim_mismatch,
  zero_projections,
  degenerate_denominator,
  // splits
  missing_key,
  // config
  invalid_config,
};

const char* to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }
  int exit_code() const noexcept { return static_cast<int>(category()); }

 private:
  ErrorCode code_;
};

}  // namespace specalign
