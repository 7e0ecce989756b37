#pragma once

#include <stdexcept>
#include <string>

namespace pb {

// Error taxonomy. The CLI maps categories to exit codes (usage -> 2,
// orchestration -> 3, everything else -> 1), so keep the set small and stable.
enum class ErrorKind {
  Config,         // bad shapes, invalid parameter combinations
  Usage,          // caller violated an API precondition
  Ingestion,      // unreadable or truncated input data
  Format,         // structurally invalid file contents
  Corruption,     // checksum mismatch on persisted artifacts
  Training,       // optimization diverged
  Attack,         // non-finite gradients or invariant violation while crafting
  Orchestration,  // missing upstream artifact in a pipeline run
  Undefined,      // mathematically undefined result (zero norm, zero variance)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::Usage, m) {}
};
struct IngestionError : Error {
  explicit IngestionError(const std::string& m) : Error(ErrorKind::Ingestion, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorKind::Format, m) {}
};
struct CorruptionError : Error {
  explicit CorruptionError(const std::string& m) : Error(ErrorKind::Corruption, m) {}
};
struct TrainingError : Error {
  TrainingError(const std::string& m, int epoch = -1)
      : Error(ErrorKind::Training, m), epoch(epoch) {}
  int epoch;
};
struct AttackError : Error {
  AttackError(const std::string& m, long image_index = -1)
      : Error(ErrorKind::Attack, m), image_index(image_index) {}
  long image_index;
};
struct OrchestrationError : Error {
  OrchestrationError(const std::string& m, std::string missing = {})
      : Error(ErrorKind::Orchestration, m), missing_artifact(std::move(missing)) {}
  std::string missing_artifact;
};
struct UndefinedValueError : Error {
  explicit UndefinedValueError(const std::string& m) : Error(ErrorKind::Undefined, m) {}
};

const char* error_kind_name(ErrorKind kind);

}  // namespace pb
