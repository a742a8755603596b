#pragma once

#include <stdexcept>
#include <string>

namespace svlad {

// Error taxonomy. Every throw in the library uses one of these so callers
// (and tests) can tell bad shapes from bad data from bad files.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };          // operand dimensions disagree
struct ConfigError : Error { using Error::Error; };         // invalid or inconsistent configuration
struct DataError : Error { using Error::Error; };           // malformed dataset content
struct EmptySequenceError : Error { using Error::Error; };  // no valid tokens after masking
struct InternalError : Error { using Error::Error; };       // broken internal invariant
struct NonFiniteError : InternalError { using InternalError::InternalError; };  // NaN/Inf produced
struct MetricError : Error { using Error::Error; };         // metric undefined on the given inputs
struct IoError : Error { using Error::Error; };             // file read/write/parse failure
struct TrainError : Error { using Error::Error; };          // training aborted

}  // namespace svlad
