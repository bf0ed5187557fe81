#pragma once

#include <stdexcept>
#include <string>

namespace sapg {

enum class ErrorKind {
  dimension,
  domain,
  config,
  divergence,
  convergence,
  io,
};

// Single exception type for the library; `kind()` lets front ends map failures
// to exit codes without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double gamma, double lambda, double theta, long step)
      : Error(ErrorKind::divergence, what), gamma_(gamma), lambda_(lambda), theta_(theta), step_(step) {}

  double gamma() const noexcept { return gamma_; }
  double lambda() const noexcept { return lambda_; }
  double theta() const noexcept { return theta_; }
  long step() const noexcept { return step_; }

 private:
  double gamma_;
  double lambda_;
  double theta_;
  long step_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(ErrorKind::convergence, what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

[[noreturn]] inline void throw_dimension(const std::string& field, std::size_t expected, std::size_t got) {
  throw Error(ErrorKind::dimension, "dimension mismatch in '" + field + "': expected " + std::to_string(expected) +
                                        ", got " + std::to_string(got));
}

}  // namespace sapg
