#include "higsfa/error.hpp"

namespace higsfa {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format: return "format";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Request: return "request";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::Architecture: return "architecture";
    case ErrorKind::Persistence: return "persistence";
    case ErrorKind::Episode: return "episode";
    case ErrorKind::Config: return "config";
    case ErrorKind::Preparation: return "preparation";
    case ErrorKind::Report: return "report";
  }
  return "unknown";
}

}  // namespace higsfa
