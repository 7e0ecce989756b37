#include "perturbench/errors.hpp"

namespace pb {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Training: return "training";
    case ErrorKind::Attack: return "attack";
    case ErrorKind::Orchestration: return "orchestration";
    case ErrorKind::Undefined: return "undefined";
  }
  return "unknown";
}

}  // namespace pb
