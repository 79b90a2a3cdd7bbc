#pragma once

#include <stdexcept>
#include <string>

namespace scoreflow {

// Base for every fault the library raises. Validation problems are not
// faults; they are reported as data in ValidationReport.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
 public:
  SyntaxError(int line, int column, std::string message, std::string expected)
      : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) + ": " +
              message + (expected.empty() ? "" : " (expected " + expected + ")")),
        line_(line),
        column_(column),
        expected_(std::move(expected)) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  int line_;
  int column_;
  std::string expected_;
};

#define SCOREFLOW_DEFINE_ERROR(Name)   \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

SCOREFLOW_DEFINE_ERROR(DuplicateOperator);
SCOREFLOW_DEFINE_ERROR(ExecutorFault);
SCOREFLOW_DEFINE_ERROR(CredentialMissing);
SCOREFLOW_DEFINE_ERROR(DomainError);
SCOREFLOW_DEFINE_ERROR(EmptyDataset);
SCOREFLOW_DEFINE_ERROR(ZeroMass);
SCOREFLOW_DEFINE_ERROR(ShapeMismatch);
SCOREFLOW_DEFINE_ERROR(IndexOutOfBank);
SCOREFLOW_DEFINE_ERROR(CorruptCheckpoint);
SCOREFLOW_DEFINE_ERROR(NonFinite);
SCOREFLOW_DEFINE_ERROR(ConfigError);
SCOREFLOW_DEFINE_ERROR(IoError);

#undef SCOREFLOW_DEFINE_ERROR

}  // namespace scoreflow
