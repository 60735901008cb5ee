#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace audfer {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  Ok = 0,
  Contract = 1,
  Numeric = 2,
  Io = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Violated precondition or malformed input.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ExitCode::Contract, what) {}
};

/// Non-finite values encountered during a numeric computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ExitCode::Numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::Io, what) {}
};

/// Collects non-fatal warnings emitted by pipeline stages.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  bool empty() const { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag) diag->warn(std::move(message));
}

}  // namespace audfer
