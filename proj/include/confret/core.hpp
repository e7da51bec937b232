#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace confret {

using Scalar = double;

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Malformed or inconsistent input files (exit code 2 at the CLI).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model applied to data with a different schema (exit code 3 at the CLI).
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (query modality j, reference modality k) index pair.
struct ModalityPair {
  std::size_t query = 0;
  std::size_t reference = 0;

  auto operator<=>(const ModalityPair&) const = default;
};

}  // namespace confret
