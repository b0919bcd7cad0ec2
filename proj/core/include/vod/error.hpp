#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vod {

// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorCategory {
  kValidation,  // bad input data or configuration
  kIo,          // filesystem problems
  kBackend,     // backend transport or protocol failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define VOD_DEFINE_ERROR(Name, Category)                                    \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(Category, what) {}       \
  }

VOD_DEFINE_ERROR(ConfigError, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(UnknownClassName, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(UnknownClassIndex, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(DegenerateBox, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(OutOfRangeCoordinate, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(MissingFrame, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(DuplicateEntryId, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(WeightSumViolation, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(UnclassifiedRow, ErrorCategory::kValidation);
VOD_DEFINE_ERROR(IoError, ErrorCategory::kIo);
VOD_DEFINE_ERROR(BackendFailure, ErrorCategory::kBackend);
VOD_DEFINE_ERROR(BackendTimeout, ErrorCategory::kBackend);
VOD_DEFINE_ERROR(NonzeroExit, ErrorCategory::kBackend);

#undef VOD_DEFINE_ERROR

// Malformed text input. `line` is 1-based; `column` is 1-based or 0 when
// the whole line is at fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, std::size_t column,
             const std::string& message)
      : Error(ErrorCategory::kValidation,
              source + ":" + std::to_string(line) +
                  (column ? ":" + std::to_string(column) : std::string()) +
                  ": " + message),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// A structured row (JSONL) that violates its schema.
class SchemaViolation : public Error {
 public:
  SchemaViolation(std::size_t row, const std::string& field,
                  const std::string& message)
      : Error(ErrorCategory::kValidation,
              "row " + std::to_string(row) + ", field '" + field +
                  "': " + message),
        row_(row),
        field_(field) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t row_;
  std::string field_;
};

// The child process broke the line protocol. `line` counts response lines.
class ProtocolViolation : public Error {
 public:
  ProtocolViolation(std::size_t line, const std::string& message)
      : Error(ErrorCategory::kBackend,
              "protocol violation at response line " + std::to_string(line) +
                  ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vod
