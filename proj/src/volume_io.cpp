#include "d3seg/volume_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace d3seg {

std::string_view to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::Io: return "io error";
    case FormatErrorKind::BadMagic: return "bad magic";
    case FormatErrorKind::UnsupportedVersion: return "unsupported version";
    case FormatErrorKind::Truncated: return "truncated";
    case FormatErrorKind::ShapeMismatch: return "shape mismatch";
    case FormatErrorKind::UnknownParameter: return "unknown parameter";
  }
  return "format error";
}

namespace io_detail {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void Reader::need(std::size_t n) {
  if (remaining() < n) {
    throw FormatError(FormatErrorKind::Truncated,
                      origin_ + ": needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
  }
}

std::uint16_t Reader::u16() {
  need(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) {
    v |= static_cast<std::uint16_t>(static_cast<unsigned char>(data_[pos_++]) << (8 * i));
  }
  return v;
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
  }
  return v;
}

double Reader::f64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
  }
  return std::bit_cast<double>(v);
}

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::Io, "write failed: " + path.string());
}

}  // namespace io_detail

std::size_t volume_file_size(const Shape& shape) {
  return 4 + 4 + 4 + 4 * shape.size() + 8 * numel(shape);
}

void write_volume(const std::filesystem::path& path, const Tensor& tensor) {
  if (!tensor.all_finite()) {
    throw std::invalid_argument("write_volume: tensor has non-finite entries");
  }
  std::string buf = "D3SV";
  buf.reserve(volume_file_size(tensor.shape()));
  io_detail::put_u32(buf, kVolumeVersion);
  io_detail::put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) io_detail::put_u32(buf, static_cast<std::uint32_t>(e));
  for (double v : tensor.data()) io_detail::put_f64(buf, v);
  io_detail::write_file(path, buf);
}

Tensor read_volume(const std::filesystem::path& path) {
  io_detail::Reader in(io_detail::read_file(path), path.string());
  if (in.remaining() < 4 || in.bytes(4) != "D3SV") {
    throw FormatError(FormatErrorKind::BadMagic, path.string() + " is not a D3SV volume");
  }
  const auto version = in.u32();
  if (version != kVolumeVersion) {
    throw FormatError(FormatErrorKind::UnsupportedVersion,
                      path.string() + " has version " + std::to_string(version));
  }
  const auto rank = in.u32();
  Shape shape(rank);
  for (auto& e : shape) {
    e = in.u32();
    if (e == 0) throw FormatError(FormatErrorKind::ShapeMismatch, path.string() + ": zero extent");
  }
  const std::size_t n = numel(shape);
  if (in.remaining() != 8 * n) {
    if (in.remaining() < 8 * n) {
      throw FormatError(FormatErrorKind::Truncated,
                        path.string() + ": payload has " + std::to_string(in.remaining()) +
                            " bytes, shape " + to_string(shape) + " needs " +
                            std::to_string(8 * n));
    }
    throw FormatError(FormatErrorKind::ShapeMismatch,
                      path.string() + ": " + std::to_string(in.remaining() - 8 * n) +
                          " trailing bytes after payload of shape " + to_string(shape));
  }
  std::vector<double> data(n);
  for (auto& v : data) v = in.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace d3seg
