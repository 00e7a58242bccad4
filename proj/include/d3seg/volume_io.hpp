#pragma once

#include "d3seg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace d3seg {

enum class FormatErrorKind {
  Io,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  ShapeMismatch,
  UnknownParameter,
};

std::string_view to_string(FormatErrorKind kind);

/// Failure reading or writing a binary file; kind() distinguishes the category.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

// D3SV volume file, little-endian:
//   "D3SV" | u32 version (1) | u32 rank | u32 extents[rank] | f64 payload[product(extents)]
inline constexpr std::uint32_t kVolumeVersion = 1;

std::size_t volume_file_size(const Shape& shape);
void write_volume(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_volume(const std::filesystem::path& path);

namespace io_detail {

void put_u16(std::string& buf, std::uint16_t v);
void put_u32(std::string& buf, std::uint32_t v);
void put_f64(std::string& buf, double v);

/// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  std::string bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n);
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace io_detail

}  // namespace d3seg
