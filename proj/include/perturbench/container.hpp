#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace pb {

// Shared on-disk layout for cached sets, features, and adversarial batches:
// u32 header length, JSON header, raw payload. The writer stamps
// header["payload_fnv64"]; the reader refuses the file (CorruptionError) on a
// checksum mismatch or any truncation, so no partial artifact ever loads.
void write_container(const std::string& path, nlohmann::json header,
                     const std::vector<uint8_t>& payload);

std::pair<nlohmann::json, std::vector<uint8_t>> read_container(const std::string& path);

}  // namespace pb
