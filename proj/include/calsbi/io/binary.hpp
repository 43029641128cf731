#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace calsbi {

// Malformed, truncated or mismatched file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

// Little-endian primitives, independent of host byte order.
inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void need(std::istream& is, const char* what) {
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t get_u32(std::istream& is, const char* what = "u32") {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  need(is, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what = "u64") {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  need(is, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const char* what = "f64") {
  return std::bit_cast<double>(get_u64(is, what));
}

inline std::string get_string(std::istream& is, const char* what = "string", std::uint32_t max_len = 1u << 26) {
  const std::uint32_t n = get_u32(is, what);
  if (n > max_len) throw FormatError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  need(is, what);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char b[4] = {};
  is.read(b, 4);
  if (!is || std::string(b, 4) != std::string(magic, 4)) {
    throw FormatError(std::string("bad magic, expected '") + magic + "'");
  }
}

}  // namespace io
}  // namespace calsbi
