#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pb {

// FNV-1a 64-bit, used for artifact content hashes and cache payload checks.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& text);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

// Accepts "a/b" exact rationals (the usual pixel budgets like 4/255) or a
// plain decimal. Throws ConfigError on malformed input or values outside
// [0, 1].
double parse_epsilon(const std::string& text);
// Renders 4.0/255 back as "4/255" when the value is an exact n/255 multiple,
// otherwise a shortest-ish decimal.
std::string epsilon_label(double eps);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, size_t len);
// Write via a temp file + rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, const void* data, size_t len);
void write_file_atomic(const std::string& path, const std::string& text);

std::string join_path(const std::string& a, const std::string& b);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// CSV with minimal quoting (fields containing comma/quote/newline).
std::string csv_escape(const std::string& field);
std::string csv_row(const std::vector<std::string>& fields);

std::string format_double(double v, int digits = 6);

}  // namespace pb
