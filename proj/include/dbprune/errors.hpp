#pragma once

#include <stdexcept>
#include <string>

namespace dbprune {

/// Process exit codes shared by the CLI and the pipeline driver.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kDataFormat = 3,
  kInfeasible = 4,
  kEmptySelection = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ExitCode::kConfig, what) {}
};

/// Malformed or truncated input file. `offset` is the byte position where
/// decoding stopped, or npos when it does not apply.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset = npos)
      : Error(ExitCode::kDataFormat,
              offset == npos ? what
                             : what + " (at byte offset " +
                                   std::to_string(offset) + ")"),
        offset_(offset) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what)
      : Error(ExitCode::kInfeasible, what) {}
};

class EmptySelectionError : public Error {
 public:
  explicit EmptySelectionError(const std::string& what)
      : Error(ExitCode::kEmptySelection, what) {}
};

}  // namespace dbprune
