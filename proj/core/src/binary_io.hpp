// SPDX-License-Identifier: Apache-2.0
// Little-endian framing shared by the dataset and checkpoint files.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "lagcd/errors.hpp"

namespace lagcd::detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, std::span<const double> values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline void get_f64(std::string_view in, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_u64(in.substr(8 * i, 8)));
}

/// magic | u64 header length | header
inline std::string frame(std::string_view magic, std::string_view header) {
  std::string out(magic);
  put_u64(out, header.size());
  out.append(header);
  return out;
}

struct Framed {
  std::string_view header;
  std::string_view payload;
};

inline Framed unframe(std::string_view bytes, std::string_view magic, const char* what) {
  if (bytes.size() < magic.size() + 8) throw FormatError(std::string(what) + ": file too short");
  if (bytes.substr(0, magic.size()) != magic) throw FormatError(std::string(what) + ": bad magic or version");
  const std::uint64_t len = get_u64(bytes.substr(magic.size(), 8));
  const std::size_t start = magic.size() + 8;
  if (len > bytes.size() - start) throw FormatError(std::string(what) + ": truncated header");
  return {bytes.substr(start, len), bytes.substr(start + len)};
}

}  // namespace lagcd::detail
