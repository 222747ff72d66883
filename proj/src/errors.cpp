#include "specalign/errors.hpp"

namespace specalign {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_magic: return "BadMagic";
    case ErrorCode::truncated_file: return "TruncatedFile";
    case ErrorCode::non_finite: return "NonFinite";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::index_out_of_range: return "IndexOutOfRange";
    case ErrorCode::missing_positive: return "MissingPositive";
    case ErrorCode::count_mismatch: return "CountMismatch";
    case ErrorCode::duplicate_candidate: return "DuplicateCandidate";
    case ErrorCode::duplicate_record_id: return "DuplicateRecordId";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::degenerate_embedding: return "DegenerateEmbedding";
    case ErrorCode::tape_mismatch: return "TapeMismatch";
    case ErrorCode::zero_norm_target: return "ZeroNormTarget";
    case ErrorCode::missing_positive_in_block: return "MissingPositiveInBlock";
    case ErrorCode::non_finite_gradient: return "NonFiniteGradient";
    case ErrorCode::empty_subset: return "EmptySubset";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::missing_formula: return "MissingFormula";
    case ErrorCode::too_few_candidates: return "TooFewCandidates";
    case ErrorCode::dim_mismatch: return "DimMismatch";
    case ErrorCode::zero_projections: return "ZeroProjections";
    case ErrorCode::degenerate_denominator: return "DegenerateDenominator";
    case ErrorCode::missing_key: return "MissingKey";
    case ErrorCode::invalid_config: return "InvalidConfig";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_config:
    case ErrorCode::missing_key:
      return ErrorCategory::config;
    case ErrorCode::non_finite_gradient:
    case ErrorCode::degenerate_embedding:
    case ErrorCode::degenerate_denominator:
    case ErrorCode::zero_norm_target:
      return ErrorCategory::numeric;
    default:
      return ErrorCategory::data;
  }
}

}  // namespace specalign
