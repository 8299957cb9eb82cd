#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace lagtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Time is measured in days throughout the library (fractional days since
/// the Unix epoch for absolute timestamps).
using Days = double;

enum class ErrorCode {
  BehindCamera,
  DegenerateGeometry,
  NoConvergence,
  InsufficientPoints,
  OutOfDomain,
  GridMismatch,
  DegenerateImage,
  SizeError,
  PeakOnBoundary,
  ZeroTotalWeight,
  EmptyGrid,
  BothDegenerate,
  Config,
  InputData,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lagtrack
