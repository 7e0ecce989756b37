#include "perturbench/tensor.hpp"

#include <cstring>

#include "perturbench/common.hpp"

namespace pb {

long shape_numel(const Shape& shape) {
  long n = 1;
  for (long d : shape) {
    if (d < 0) throw ConfigError("tensor: negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

void Checkpoint::add(const std::string& name, TensorF t) {
  for (auto& e : entries)
    if (e.first == name)
      throw UsageError("checkpoint: duplicate tensor name '" + name + "'");
  entries.emplace_back(name, std::move(t));
}

const TensorF& Checkpoint::get(const std::string& name) const {
  for (auto& e : entries)
    if (e.first == name) return e.second;
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (auto& e : entries)
    if (e.first == name) return true;
  return false;
}

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

struct Reader {
  const uint8_t* p;
  size_t left;
  const char* what;

  void need(size_t n) const {
    if (left < n)
      throw FormatError(std::string(what) + ": truncated, needed " + std::to_string(n) +
                        " more bytes with " + std::to_string(left) + " remaining");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                 static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
    p += 4;
    left -= 4;
    return v;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

}  // namespace

std::vector<uint8_t> checkpoint_bytes(const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'P', 'B', 'T', 'C'});
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (long d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    const size_t at = out.size();
    out.resize(at + t.data.size() * sizeof(float));
    // float layout is IEEE-754 on every supported target; dump little-endian
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + at, t.data.data(), t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint checkpoint_from_bytes(const uint8_t* data, size_t size) {
  Reader r{data, size, "checkpoint"};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "PBTC", 4) != 0)
    throw FormatError("checkpoint: bad magic bytes");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = r.u32();
  Checkpoint ckpt;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<long>(r.u32());
    TensorF t = TensorF::zeros(shape);
    r.bytes(t.data.data(), t.data.size() * sizeof(float));
    ckpt.add(name, std::move(t));
  }
  if (r.left != 0)
    throw FormatError("checkpoint: " + std::to_string(r.left) + " trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<uint8_t> bytes = checkpoint_bytes(ckpt);
  write_file_atomic(path, bytes.data(), bytes.size());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  try {
    return checkpoint_from_bytes(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace pb
