#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "toxgate/common.hpp"

namespace toxgate::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, std::string_view what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw CorruptFileError("truncated " + std::string(what));
  }
}

inline std::uint32_t read_u32(std::istream& in, std::string_view what) {
  std::uint32_t v = 0;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v, what);
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  return v;
}

inline void read_floats(std::istream& in, std::span<float> dst, std::string_view what) {
  read_exact(in, reinterpret_cast<char*>(dst.data()), dst.size_bytes(), what);
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : dst) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string buf(magic.size(), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size() || buf != magic) {
    throw CorruptFileError("not a " + std::string(what) + " (bad magic)");
  }
}

inline void expect_eof(std::istream& in, std::string_view what) {
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CorruptFileError("trailing bytes after " + std::string(what));
  }
}

}  // namespace toxgate::detail
