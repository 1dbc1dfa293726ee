#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace throttle_lift {

// Broad failure classes. The CLI maps each class to one exit code.
enum class ErrorClass : std::uint8_t {
  usage,        // bad flags or arguments
  data,         // unreadable files, schema or parse failures, invalid configs
  degeneracy,   // statistically degenerate input (no compliers, zero first stage, ...)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorClass::data, "invalid config: " + what) {}
};

struct SchemaMismatch : Error {
  explicit SchemaMismatch(const std::string& what) : Error(ErrorClass::data, "schema mismatch: " + what) {}
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorClass::data, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorClass::data, what) {}
};

// An arm (Z=1 or Z=0) of a stratum is empty.
struct DegenerateStratum : Error {
  DegenerateStratum(double p, const std::string& what)
      : Error(ErrorClass::degeneracy, "degenerate stratum p=" + std::to_string(p) + ": " + what), p_(p) {}
  double p() const noexcept { return p_; }

 private:
  double p_;
};

struct ZeroFirstStage : Error {
  explicit ZeroFirstStage(const std::string& what = "first stage is zero")
      : Error(ErrorClass::degeneracy, what) {}
};

struct NoCompliers : Error {
  explicit NoCompliers(const std::string& what = "no compliers") : Error(ErrorClass::degeneracy, what) {}
};

// An exposure arm (D=1 or D=0) is empty.
struct DegenerateArm : Error {
  explicit DegenerateArm(const std::string& what) : Error(ErrorClass::degeneracy, what) {}
};

// The bootstrap demanded resamples from an observed arm that has no rows.
struct EmptyArm : Error {
  EmptyArm(std::int64_t interval, int arm)
      : Error(ErrorClass::degeneracy, "interval " + std::to_string(interval) + " has an empty Z=" +
                                          std::to_string(arm) + " arm"),
        interval_(interval),
        arm_(arm) {}
  std::int64_t interval() const noexcept { return interval_; }
  int arm() const noexcept { return arm_; }

 private:
  std::int64_t interval_;
  int arm_;
};

struct InsufficientStratum : Error {
  InsufficientStratum(double p, const std::string& what)
      : Error(ErrorClass::degeneracy, "stratum p=" + std::to_string(p) + ": " + what), p_(p) {}
  double p() const noexcept { return p_; }

 private:
  double p_;
};

struct TooManyFailures : Error {
  explicit TooManyFailures(const std::string& what) : Error(ErrorClass::degeneracy, what) {}
};

struct InconsistentProbability : Error {
  explicit InconsistentProbability(const std::string& key)
      : Error(ErrorClass::data, "participated rows disagree on p for key " + key) {}
};

struct NoControls : Error {
  explicit NoControls(std::int64_t interval)
      : Error(ErrorClass::degeneracy, "no matched controls in interval " + std::to_string(interval)),
        interval_(interval) {}
  std::int64_t interval() const noexcept { return interval_; }

 private:
  std::int64_t interval_;
};

}  // namespace throttle_lift
