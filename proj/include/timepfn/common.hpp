#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace timepfn {

inline constexpr const char* kVersion = "0.1.0";

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

// Error hierarchy. Each class maps to one failure mode named by the library
// contracts; the CLI translates them into distinct exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteParameter : Error {
  using Error::Error;
};
struct FactorizationFailed : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct WindowTooLong : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct NotScalarLoss : Error {
  using Error::Error;
};
struct ContextTooShort : Error {
  using Error::Error;
};
struct EmptyBudget : Error {
  using Error::Error;
};

inline std::string shape_string(const std::vector<Index>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

}  // namespace timepfn
