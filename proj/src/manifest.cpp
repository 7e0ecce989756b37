#include "perturbench/manifest.hpp"

#include <chrono>
#include <ctime>

#include "perturbench/common.hpp"
#include "perturbench/errors.hpp"

namespace pb {

namespace {

std::string utc_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json file_entry(const std::string& path) {
  return {{"path", path}, {"fnv64", hex64(fnv1a64_file(path))}};
}

}  // namespace

RunManifest::RunManifest(std::string command, nlohmann::json resolved_config,
                         uint64_t seed) {
  doc_ = {{"command", std::move(command)},
          {"config", std::move(resolved_config)},
          {"seed", seed},
          {"created", utc_now()},
          {"inputs", nlohmann::json::array()},
          {"outputs", nlohmann::json::array()}};
}

void RunManifest::add_input(const std::string& path) {
  doc_["inputs"].push_back(file_entry(path));
}

void RunManifest::add_output(const std::string& path) {
  doc_["outputs"].push_back(file_entry(path));
}

nlohmann::json RunManifest::to_json() const { return doc_; }

void RunManifest::write_beside(const std::string& artifact_path) const {
  write_file_atomic(artifact_path + ".manifest.json", doc_.dump(2) + "\n");
}

}  // namespace pb
