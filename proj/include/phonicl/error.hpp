#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace phonicl {

enum class ErrorCode {
  MalformedRecord,
  DuplicateId,
  InsufficientData,
  ProfileNotFound,
  RuleParseError,
  VocabParseError,
  EmptyPool,
  TokenizerMismatch,
  MissingChannel,
  OddKForSplitHalf,
  MissingVectors,
  SnapshotVersionMismatch,
  SnapshotParseError,
  MissingField,
  TemplateParseError,
  LengthMismatch,
  CacheMiss,
  EndpointError,
  Timeout,
  QueryMismatch,
  MissingGroup,
  InvalidArgument,
  IoError,
  StageError,
};

const char* to_string(ErrorCode code);

/// Base for every error raised by the library. Callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line_no, const std::string& what)
      : Error(ErrorCode::MalformedRecord,
              "malformed record at line " + std::to_string(line_no) + ": " + what),
        line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class RuleParseError : public Error {
 public:
  RuleParseError(std::string file, std::size_t line_no, const std::string& what)
      : Error(ErrorCode::RuleParseError,
              file + ":" + std::to_string(line_no) + ": " + what),
        file_(std::move(file)),
        line_no_(line_no) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::string file_;
  std::size_t line_no_;
};

class EndpointError : public Error {
 public:
  EndpointError(int status, const std::string& what)
      : Error(ErrorCode::EndpointError,
              "endpoint returned status " + std::to_string(status) + ": " + what),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Wraps a failure from one pipeline stage; the message is prefixed "[stage] ".
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorCode inner, const std::string& what)
      : Error(ErrorCode::StageError, "[" + stage + "] " + what),
        stage_(std::move(stage)),
        inner_(inner) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorCode inner_code() const noexcept { return inner_; }

 private:
  std::string stage_;
  ErrorCode inner_;
};

}  // namespace phonicl
