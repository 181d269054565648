#pragma once

// Reader/writer for the single-array .npy binary format (versions 1.0 and 2.0
// on read, 1.0 on write). Only little-endian / byte-sized dtypes in C order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/tensor.hpp"

namespace oscar::npy {

static_assert(std::endian::native == std::endian::little, "npy support assumes a little-endian host");

/// Raw contents of an .npy file: dtype descriptor plus payload bytes.
struct RawArray {
  std::string descr;
  Shape shape;
  std::vector<char> bytes;

  std::size_t word_size() const { return static_cast<std::size_t>(std::stoi(descr.substr(2))); }
  char kind() const { return descr[1]; }
};

namespace detail {

template <typename T>
constexpr const char* descr_of() {
  if constexpr (std::is_same_v<T, double>) return "<f8";
  else if constexpr (std::is_same_v<T, float>) return "<f4";
  else if constexpr (std::is_same_v<T, std::int64_t>) return "<i8";
  else if constexpr (std::is_same_v<T, std::int32_t>) return "<i4";
  else if constexpr (std::is_same_v<T, std::int16_t>) return "<i2";
  else if constexpr (std::is_same_v<T, std::int8_t>) return "|i1";
  else if constexpr (std::is_same_v<T, std::uint8_t>) return "|u1";
  else if constexpr (std::is_same_v<T, std::uint16_t>) return "<u2";
  else if constexpr (std::is_same_v<T, std::uint32_t>) return "<u4";
  else static_assert(sizeof(T) == 0, "unsupported npy element type");
}

inline std::string header_dict(const std::string& descr, const Shape& shape) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // magic(6) + version(2) + len(2) + dict + padding + '\n' must be a multiple of 64
  std::size_t total = 10 + dict.size() + 1;
  std::size_t pad = (64 - total % 64) % 64;
  dict.append(pad, ' ');
  dict += '\n';
  return dict;
}

inline std::string dict_value(const std::string& header, const std::string& key, const std::string& path) {
  auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos)
    throw Error(ErrorCode::FormatError, "npy", path + ": header lacks '" + key + "'");
  pos = header.find(':', pos);
  if (pos == std::string::npos) throw Error(ErrorCode::FormatError, "npy", path + ": malformed header");
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  std::size_t end;
  if (header[pos] == '(') {
    end = header.find(')', pos);
    if (end == std::string::npos) throw Error(ErrorCode::FormatError, "npy", path + ": malformed shape");
    return header.substr(pos + 1, end - pos - 1);
  }
  if (header[pos] == '\'' || header[pos] == '"') {
    char q = header[pos];
    end = header.find(q, pos + 1);
    if (end == std::string::npos) throw Error(ErrorCode::FormatError, "npy", path + ": malformed descr");
    return header.substr(pos + 1, end - pos - 1);
  }
  end = header.find_first_of(",}", pos);
  return header.substr(pos, end - pos);
}

template <typename Out, typename In>
void convert(const char* src, std::size_t n, Out* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    In v;
    std::memcpy(&v, src + i * sizeof(In), sizeof(In));
    dst[i] = static_cast<Out>(v);
  }
}

inline RawArray read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw Error(ErrorCode::FormatError, "npy", path.string() + ": not an npy file");
  const auto major = static_cast<unsigned char>(magic[6]);
  std::uint32_t header_len = 0;
  if (major == 1) {
    std::uint16_t len16 = 0;
    in.read(reinterpret_cast<char*>(&len16), 2);
    header_len = len16;
  } else if (major == 2 || major == 3) {
    in.read(reinterpret_cast<char*>(&header_len), 4);
  } else {
    throw Error(ErrorCode::FormatError, "npy", path.string() + ": unsupported version");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw Error(ErrorCode::FormatError, "npy", path.string() + ": truncated header");

  RawArray raw;
  raw.descr = detail::dict_value(header, "descr", path.string());
  if (detail::dict_value(header, "fortran_order", path.string()).find("True") != std::string::npos)
    throw Error(ErrorCode::FormatError, "npy", path.string() + ": Fortran order not supported");
  if (raw.descr.size() < 3 || raw.descr[0] == '>')
    throw Error(ErrorCode::FormatError, "npy", path.string() + ": unsupported dtype " + raw.descr);

  std::string shape_text = detail::dict_value(header, "shape", path.string());
  std::size_t pos = 0;
  while (pos < shape_text.size()) {
    auto comma = shape_text.find(',', pos);
    std::string tok = shape_text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    auto first = tok.find_first_not_of(' ');
    if (first != std::string::npos) raw.shape.push_back(std::stoull(tok.substr(first)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return raw;
}

}  // namespace detail

/// Reads only the header; payload is left empty.
inline RawArray read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "npy", "cannot open " + path.string());
  return detail::read_header(in, path);
}

inline RawArray read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "npy", "cannot open " + path.string());
  RawArray raw = detail::read_header(in, path);
  const std::size_t nbytes = shape_size(raw.shape) * raw.word_size();
  raw.bytes.resize(nbytes);
  in.read(raw.bytes.data(), static_cast<std::streamsize>(nbytes));
  if (static_cast<std::size_t>(in.gcount()) != nbytes)
    throw Error(ErrorCode::FormatError, "npy", path.string() + ": truncated payload");
  return raw;
}

/// Converts any supported numeric dtype to T.
template <typename T>
Tensor<T> as_tensor(const RawArray& raw, const std::string& origin = "array") {
  Tensor<T> out(raw.shape);
  const std::size_t n = out.size();
  const char* src = raw.bytes.data();
  const char k = raw.kind();
  const std::size_t w = raw.word_size();
  if (k == 'f' && w == 8) detail::convert<T, double>(src, n, out.data.data());
  else if (k == 'f' && w == 4) detail::convert<T, float>(src, n, out.data.data());
  else if (k == 'i' && w == 8) detail::convert<T, std::int64_t>(src, n, out.data.data());
  else if (k == 'i' && w == 4) detail::convert<T, std::int32_t>(src, n, out.data.data());
  else if (k == 'i' && w == 2) detail::convert<T, std::int16_t>(src, n, out.data.data());
  else if (k == 'i' && w == 1) detail::convert<T, std::int8_t>(src, n, out.data.data());
  else if ((k == 'u' || k == 'b') && w == 1) detail::convert<T, std::uint8_t>(src, n, out.data.data());
  else if (k == 'u' && w == 2) detail::convert<T, std::uint16_t>(src, n, out.data.data());
  else if (k == 'u' && w == 4) detail::convert<T, std::uint32_t>(src, n, out.data.data());
  else if (k == 'u' && w == 8) detail::convert<T, std::uint64_t>(src, n, out.data.data());
  else throw Error(ErrorCode::FormatError, "npy", origin + ": unsupported dtype " + raw.descr);
  return out;
}

template <typename T>
Tensor<T> load(const std::filesystem::path& path) {
  return as_tensor<T>(read_raw(path), path.string());
}

template <typename T>
void save(const std::filesystem::path& path, const Tensor<T>& array) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "npy", "cannot write " + path.string());
  const std::string dict = detail::header_dict(detail::descr_of<T>(), array.shape);
  const auto len = static_cast<std::uint16_t>(dict.size());
  out.write("\x93NUMPY\x01\x00", 8);
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(array.data.data()),
            static_cast<std::streamsize>(array.data.size() * sizeof(T)));
  if (!out) throw Error(ErrorCode::IoError, "npy", "write failed for " + path.string());
}

template <typename T>
void save(const std::filesystem::path& path, const std::vector<T>& values) {
  save(path, Tensor<T>(Shape{values.size()}, values));
}

}  // namespace oscar::npy
