#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace pb {

// Every CLI subcommand writes one of these beside its main artifact. Reruns
// with identical inputs must produce identical output hashes, so the manifest
// is the idempotence witness: compare `outputs` across runs.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json resolved_config, uint64_t seed);

  void add_input(const std::string& path);   // hashes the file now
  void add_output(const std::string& path);  // hashes the file now

  nlohmann::json to_json() const;
  // Writes <artifact_path>.manifest.json.
  void write_beside(const std::string& artifact_path) const;

 private:
  nlohmann::json doc_;
};

}  // namespace pb
