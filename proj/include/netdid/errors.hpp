#pragma once

#include <stdexcept>
#include <string>

namespace netdid {

// Bad user input or configuration. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Dataset file does not satisfy the panel CSV schema.
class SchemaError : public ValidationError {
 public:
  SchemaError(const std::string& what, long row = -1, std::string column = {})
      : ValidationError(format(what, row, column)), row_(row), column_(std::move(column)) {}

  long row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  static std::string format(const std::string& what, long row, const std::string& column) {
    std::string msg = "schema error";
    if (row >= 0) msg += " at row " + std::to_string(row);
    if (!column.empty()) msg += " column '" + column + "'";
    return msg + ": " + what;
  }

  long row_;
  std::string column_;
};

// Failure while computing something from otherwise valid inputs. Exit code 2.
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NETDID_COMPUTE_ERROR(Name)             \
  class Name : public ComputeError {           \
   public:                                     \
    using ComputeError::ComputeError;          \
  }

NETDID_COMPUTE_ERROR(NumericError);
NETDID_COMPUTE_ERROR(ShapeError);
NETDID_COMPUTE_ERROR(StatisticError);
NETDID_COMPUTE_ERROR(BandwidthError);
NETDID_COMPUTE_ERROR(WeightingError);
NETDID_COMPUTE_ERROR(FitError);
NETDID_COMPUTE_ERROR(EstimationError);
NETDID_COMPUTE_ERROR(InferenceError);
NETDID_COMPUTE_ERROR(RegressionError);
NETDID_COMPUTE_ERROR(OracleError);
NETDID_COMPUTE_ERROR(IoError);

#undef NETDID_COMPUTE_ERROR

}  // namespace netdid
