#include "cmet/error.hpp"

namespace cmet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownSpecies: return "UnknownSpecies";
    case ErrorKind::DuplicateSpecies: return "DuplicateSpecies";
    case ErrorKind::MissingRate: return "MissingRate";
    case ErrorKind::NonPositiveRate: return "NonPositiveRate";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::SpaceTooLarge: return "SpaceTooLarge";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorKind::SupportMismatch: return "SupportMismatch";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::TimeIndexOutOfRange: return "TimeIndexOutOfRange";
    case ErrorKind::UnstableStep: return "UnstableStep";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::BadFormat: return "BadFormat";
    case ErrorKind::Io: return "Io";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace cmet
