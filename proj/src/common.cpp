#include "perturbench/common.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "perturbench/errors.hpp"

namespace pb {

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double parse_epsilon(const std::string& text) {
  if (text.empty()) throw ConfigError("epsilon: empty value");
  const size_t slash = text.find('/');
  double v = 0.0;
  try {
    if (slash != std::string::npos) {
      size_t an = 0, bn = 0;
      const double a = std::stod(text.substr(0, slash), &an);
      const double b = std::stod(text.substr(slash + 1), &bn);
      if (an != slash || bn != text.size() - slash - 1)
        throw ConfigError("epsilon: malformed rational '" + text + "'");
      if (b == 0.0) throw ConfigError("epsilon: zero denominator in '" + text + "'");
      v = a / b;
    } else {
      size_t n = 0;
      v = std::stod(text, &n);
      if (n != text.size()) throw ConfigError("epsilon: malformed value '" + text + "'");
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("epsilon: malformed value '" + text + "'");
  }
  if (!(v >= 0.0 && v <= 1.0))
    throw ConfigError("epsilon: " + text + " outside [0, 1]");
  return v;
}

std::string epsilon_label(double eps) {
  const double n = eps * 255.0;
  const double r = std::round(n);
  if (r >= 0 && std::fabs(n - r) < 1e-9) {
    if (r == 0) return "0";
    return std::to_string(static_cast<long>(r)) + "/255";
  }
  return format_double(eps, 6);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IngestionError("cannot open " + path);
  const std::streamsize len = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> out(static_cast<size_t>(len));
  if (len > 0 && !in.read(reinterpret_cast<char*>(out.data()), len))
    throw IngestionError("short read on " + path);
  return out;
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot open " + path + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw IngestionError("short write on " + path);
}

void write_file_atomic(const std::string& path, const void* data, size_t len) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, data, len);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IngestionError("rename " + tmp + " -> " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

std::string join_path(const std::string& a, const std::string& b) {
  if (a.empty()) return b;
  if (!a.empty() && a.back() == '/') return a + b;
  return a + "/" + b;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IngestionError("mkdir " + path + ": " + ec.message());
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

std::string format_double(double v, int digits) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

}  // namespace pb
