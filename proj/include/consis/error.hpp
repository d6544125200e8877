#pragma once

#include <stdexcept>
#include <string>

namespace consis {

// Stable error identifiers. The CLI prints the name verbatim so callers can
// match on it; keep names in sync with error_code_name().
enum class ErrorCode {
  malformed_taxonomy,
  duplicate_class_label,
  unknown_class_index,
  non_positive_sigma,
  shape_mismatch,
  non_finite_activation,
  non_finite_gradient,
  corrupt_checkpoint,
  spec_mismatch,
  unknown_tap,
  empty_split,
  empty_summary,
  dimension_mismatch,
  unknown_neuron,
  patch_larger_than_image,
  dataset_empty,
  diverged_training,
  corrupt_container,
  io_error,
  invalid_config,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::malformed_taxonomy: return "MalformedTaxonomy";
    case ErrorCode::duplicate_class_label: return "DuplicateClassLabel";
    case ErrorCode::unknown_class_index: return "UnknownClassIndex";
    case ErrorCode::non_positive_sigma: return "NonPositiveSigma";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::non_finite_activation: return "NonFiniteActivation";
    case ErrorCode::non_finite_gradient: return "NonFiniteGradient";
    case ErrorCode::corrupt_checkpoint: return "CorruptCheckpoint";
    case ErrorCode::spec_mismatch: return "SpecMismatch";
    case ErrorCode::unknown_tap: return "UnknownTap";
    case ErrorCode::empty_split: return "EmptySplit";
    case ErrorCode::empty_summary: return "EmptySummary";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::unknown_neuron: return "UnknownNeuron";
    case ErrorCode::patch_larger_than_image: return "PatchLargerThanImage";
    case ErrorCode::dataset_empty: return "DatasetEmpty";
    case ErrorCode::diverged_training: return "DivergedTraining";
    case ErrorCode::corrupt_container: return "CorruptContainer";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::invalid_config: return "InvalidConfig";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }
  const char* code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) raise(code, message);
}

}  // namespace consis
