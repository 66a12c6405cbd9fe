#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace fodkit {

// Invalid arguments are reported with std::invalid_argument. The types below
// carry extra payload that callers may want to inspect.

class IllConditionedError : public std::runtime_error {
 public:
  IllConditionedError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested model cannot be fit with the acquisition at hand
/// (e.g. MSMT with fewer than three b-values).
class InvalidModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iteration cap reached. `best()` holds the last (best) iterate and
/// `trace()` any per-iteration objective values the solver recorded.
class NonConvergedError : public std::runtime_error {
 public:
  NonConvergedError(const std::string& what, Eigen::VectorXd best,
                    std::vector<double> trace = {})
      : std::runtime_error(what), best_(std::move(best)), trace_(std::move(trace)) {}
  const Eigen::VectorXd& best() const noexcept { return best_; }
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  Eigen::VectorXd best_;
  std::vector<double> trace_;
};

class EmptyPopulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, int line, int column, const std::string& msg)
      : std::runtime_error(file + ":" + std::to_string(line) + ":" + std::to_string(column) +
                           ": " + msg),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

enum class VolumeErrc {
  io_error,
  malformed_header,
  truncated_payload,
  unsupported_datatype,
  unsupported_feature,
};

const char* to_string(VolumeErrc code);

class VolumeError : public std::runtime_error {
 public:
  VolumeError(VolumeErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  VolumeErrc code() const noexcept { return code_; }

 private:
  VolumeErrc code_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fodkit
