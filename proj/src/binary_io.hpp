#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ambireg/error.hpp"

namespace ambireg::detail {

template <typename Float, typename UInt>
void append_le(std::string& out, std::span<const Float> values)
{
  static_assert(sizeof(Float) == sizeof(UInt));
  out.reserve(out.size() + values.size() * sizeof(Float));
  for (Float f : values) {
    const UInt bits = std::bit_cast<UInt>(f);
    for (std::size_t b = 0; b < sizeof(UInt); ++b) {
      out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
}

template <typename Float, typename UInt>
std::vector<Float> parse_le(std::string_view bytes)
{
  std::vector<Float> out(bytes.size() / sizeof(Float));
  for (std::size_t i = 0; i < out.size(); ++i) {
    UInt bits = 0;
    for (std::size_t b = 0; b < sizeof(UInt); ++b) {
      bits |= UInt(static_cast<unsigned char>(bytes[i * sizeof(UInt) + b])) << (8 * b);
    }
    out[i] = std::bit_cast<Float>(bits);
  }
  return out;
}

inline void append_f32le(std::string& out, std::span<const float> v) { append_le<float, std::uint32_t>(out, v); }
inline void append_f64le(std::string& out, std::span<const double> v) { append_le<double, std::uint64_t>(out, v); }
inline std::vector<float> parse_f32le(std::string_view b) { return parse_le<float, std::uint32_t>(b); }
inline std::vector<double> parse_f64le(std::string_view b) { return parse_le<double, std::uint64_t>(b); }

inline std::string read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

// Splits "<json header>\n<payload>" files.
inline std::pair<std::string, std::string_view> split_header(const std::string& contents,
                                                             const std::filesystem::path& path)
{
  const auto nl = contents.find('\n');
  if (nl == std::string::npos || nl > 65536) {
    throw FormatError("missing header line in " + path.string());
  }
  return {contents.substr(0, nl), std::string_view(contents).substr(nl + 1)};
}

}  // namespace ambireg::detail
