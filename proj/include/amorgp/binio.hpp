#pragma once

// Little-endian POD and length-prefixed string helpers shared by the binary
// file formats (checkpoints and cached pair files).

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace amorgp::detail {

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("binary file: truncated");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw std::runtime_error("binary file: truncated");
  return s;
}

}  // namespace amorgp::detail
