#include "lagtrack/types.hpp"

namespace lagtrack {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::DegenerateImage: return "DegenerateImage";
    case ErrorCode::SizeError: return "SizeError";
    case ErrorCode::PeakOnBoundary: return "PeakOnBoundary";
    case ErrorCode::ZeroTotalWeight: return "ZeroTotalWeight";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::BothDegenerate: return "BothDegenerate";
    case ErrorCode::Config: return "Config";
    case ErrorCode::InputData: return "InputData";
  }
  return "Unknown";
}

}  // namespace lagtrack
