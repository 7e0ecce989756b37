#include "perturbench/container.hpp"

#include <cstring>

#include "perturbench/common.hpp"
#include "perturbench/errors.hpp"

namespace pb {

void write_container(const std::string& path, nlohmann::json header,
                     const std::vector<uint8_t>& payload) {
  header["payload_fnv64"] = hex64(fnv1a64(payload.data(), payload.size()));
  const std::string head = header.dump();
  std::vector<uint8_t> out;
  out.reserve(4 + head.size() + payload.size());
  const uint32_t len = static_cast<uint32_t>(head.size());
  out.push_back(static_cast<uint8_t>(len));
  out.push_back(static_cast<uint8_t>(len >> 8));
  out.push_back(static_cast<uint8_t>(len >> 16));
  out.push_back(static_cast<uint8_t>(len >> 24));
  out.insert(out.end(), head.begin(), head.end());
  out.insert(out.end(), payload.begin(), payload.end());
  write_file_atomic(path, out.data(), out.size());
}

std::pair<nlohmann::json, std::vector<uint8_t>> read_container(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() < 4)
    throw CorruptionError(path + ": truncated before header length");
  const uint32_t len = static_cast<uint32_t>(bytes[0]) |
                       static_cast<uint32_t>(bytes[1]) << 8 |
                       static_cast<uint32_t>(bytes[2]) << 16 |
                       static_cast<uint32_t>(bytes[3]) << 24;
  if (bytes.size() < 4 + static_cast<size_t>(len))
    throw CorruptionError(path + ": truncated inside header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path + ": unparsable header: " + e.what());
  }
  std::vector<uint8_t> payload(bytes.begin() + 4 + len, bytes.end());
  if (!header.contains("payload_fnv64") || !header["payload_fnv64"].is_string())
    throw CorruptionError(path + ": header lacks payload checksum");
  const std::string want = header["payload_fnv64"].get<std::string>();
  const std::string got = hex64(fnv1a64(payload.data(), payload.size()));
  if (want != got)
    throw CorruptionError(path + ": payload checksum mismatch (stored " + want +
                          ", computed " + got + ")");
  return {std::move(header), std::move(payload)};
}

}  // namespace pb
