#include "d3seg/checkpoint.hpp"

#include <limits>

namespace d3seg {

std::size_t checkpoint_file_size(const ParamStore& store) {
  std::size_t size = 12;
  for (const auto& e : store) {
    size += 2 + e.name.size() + 4 + 4 * e.value.rank() + 8 * e.value.size();
  }
  return size;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::string buf = "D3CK";
  buf.reserve(checkpoint_file_size(store));
  io_detail::put_u32(buf, kCheckpointVersion);
  io_detail::put_u32(buf, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("save_checkpoint: parameter name too long: " + e.name);
    }
    if (!e.value.all_finite()) {
      throw std::invalid_argument("save_checkpoint: parameter " + e.name + " has non-finite values");
    }
    io_detail::put_u16(buf, static_cast<std::uint16_t>(e.name.size()));
    buf += e.name;
    io_detail::put_u32(buf, static_cast<std::uint32_t>(e.value.rank()));
    for (auto extent : e.value.shape()) io_detail::put_u32(buf, static_cast<std::uint32_t>(extent));
    for (double v : e.value.data()) io_detail::put_f64(buf, v);
  }
  io_detail::write_file(path, buf);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  io_detail::Reader in(io_detail::read_file(path), path.string());
  if (in.remaining() < 4 || in.bytes(4) != "D3CK") {
    throw FormatError(FormatErrorKind::BadMagic, path.string() + " is not a D3CK checkpoint");
  }
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::UnsupportedVersion,
                      path.string() + " has version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto count = in.u32();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.bytes(in.u16());
    const auto rank = in.u32();
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = in.u32();
      if (extent == 0) {
        throw FormatError(FormatErrorKind::ShapeMismatch,
                          path.string() + ": parameter " + name + " has a zero extent");
      }
    }
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = in.f64();
    if (store.contains(name)) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        path.string() + ": duplicate parameter " + name);
    }
    store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatErrorKind::ShapeMismatch,
                      path.string() + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return store;
}

void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path) {
  ParamStore loaded = load_checkpoint(path);
  for (const auto& e : loaded) {
    if (!store.contains(e.name)) {
      throw FormatError(FormatErrorKind::UnknownParameter,
                        path.string() + ": parameter " + e.name + " is not part of the model");
    }
    const Tensor& expected = store.value(e.name);
    if (expected.shape() != e.value.shape()) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        path.string() + ": parameter " + e.name + " has shape " +
                            to_string(e.value.shape()) + ", model expects " +
                            to_string(expected.shape()));
    }
  }
  for (const auto& e : store) {
    if (!loaded.contains(e.name)) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        path.string() + ": checkpoint lacks parameter " + e.name);
    }
  }
  for (auto& e : store) e.value = loaded.value(e.name);
}

}  // namespace d3seg
