#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace dvgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Violation of an operation's input contract (dimension mismatch,
/// non-positive parameter, malformed configuration).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string &what) : std::invalid_argument(what) {}
};

/// A kernel-derived matrix could not be factorized even after jitter.
/// Carries the name of the offending matrix ("K_mm", "A", ...).
class SingularKernelError : public std::runtime_error {
 public:
  explicit SingularKernelError(std::string matrix_name)
      : std::runtime_error("matrix " + matrix_name + " is singular after jitter"),
        matrix_name_(std::move(matrix_name)) {}

  const std::string &matrix_name() const { return matrix_name_; }

 private:
  std::string matrix_name_;
};

inline void require(bool condition, const std::string &message) {
  if (!condition) throw ContractError(message);
}

}  // namespace dvgp
