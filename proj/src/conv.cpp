// 3D convolution lowered to GEMM over column blocks (im2col), processed in
// chunks of whole output x-planes to bound scratch memory.

#include "d3seg/ops.hpp"

#include <algorithm>

namespace d3seg {
namespace {

// Column block sized to stay cache resident.
constexpr std::size_t kChunkBytes = 1 << 20;
constexpr std::size_t kMinChunkColumns = 256;
constexpr std::size_t kMaxChunkColumns = 4096;

struct ConvDims {
  std::size_t c_in, c_out, k;
  std::size_t nx, ny, nz;
  std::size_t ox, oy, oz;
  long stride, pad, dilation;

  std::size_t rows() const { return c_in * k * k * k; }
  std::size_t plane() const { return oy * oz; }
  std::size_t out_voxels() const { return ox * oy * oz; }
};

ConvDims check_dims(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  if (input.rank() != 4) {
    throw ShapeError("conv3d: input must be [C_in, X, Y, Z], got " + to_string(input.shape()));
  }
  if (kernel.rank() != 5 || kernel.dim(2) != kernel.dim(3) || kernel.dim(3) != kernel.dim(4)) {
    throw ShapeError("conv3d: kernel must be [C_out, C_in, k, k, k], got " +
                     to_string(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw ShapeError("conv3d: kernel " + to_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)) + " input channels but input " +
                     to_string(input.shape()) + " has " + std::to_string(input.dim(0)));
  }
  if (kernel.dim(2) % 2 == 0) {
    throw ShapeError("conv3d: kernel extent must be odd, got " + to_string(kernel.shape()));
  }
  if (g.stride < 1 || g.pad < 0 || g.dilation < 1) {
    throw std::invalid_argument("conv3d: invalid geometry");
  }
  ConvDims d{};
  d.c_in = input.dim(0);
  d.c_out = kernel.dim(0);
  d.k = kernel.dim(2);
  d.nx = input.dim(1);
  d.ny = input.dim(2);
  d.nz = input.dim(3);
  d.ox = conv_output_extent(d.nx, d.k, g);
  d.oy = conv_output_extent(d.ny, d.k, g);
  d.oz = conv_output_extent(d.nz, d.k, g);
  d.stride = g.stride;
  d.pad = g.pad;
  d.dilation = g.dilation;
  return d;
}

// Valid output range [lo, hi) along one axis for a kernel tap at offset `off`.
void valid_range(long off, long stride, long in, long out, long& lo, long& hi) {
  lo = off < 0 ? (-off + stride - 1) / stride : 0;
  const long last = in - 1 - off;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  lo = std::min(lo, hi);
}

template <bool Scatter>
void column_pass(const ConvDims& d, std::size_t x0, std::size_t x1, double* image,
                 double* cols) {
  const std::size_t n = (x1 - x0) * d.plane();
  const long k = static_cast<long>(d.k);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < d.c_in; ++ci) {
    for (long a = 0; a < k; ++a) {
      for (long b = 0; b < k; ++b) {
        for (long c = 0; c < k; ++c, ++row) {
          double* col_row = cols + row * n;
          const long off_y = b * d.dilation - d.pad;
          const long off_z = c * d.dilation - d.pad;
          long y_lo, y_hi, z_lo, z_hi;
          valid_range(off_y, d.stride, static_cast<long>(d.ny), static_cast<long>(d.oy), y_lo,
                      y_hi);
          valid_range(off_z, d.stride, static_cast<long>(d.nz), static_cast<long>(d.oz), z_lo,
                      z_hi);
          for (std::size_t ox = x0; ox < x1; ++ox) {
            const long ix = static_cast<long>(ox) * d.stride + a * d.dilation - d.pad;
            double* dst_plane = col_row + (ox - x0) * d.plane();
            if (ix < 0 || ix >= static_cast<long>(d.nx)) {
              if constexpr (!Scatter) std::fill(dst_plane, dst_plane + d.plane(), 0.0);
              continue;
            }
            for (long oy = 0; oy < static_cast<long>(d.oy); ++oy) {
              double* dst = dst_plane + static_cast<std::size_t>(oy) * d.oz;
              if (oy < y_lo || oy >= y_hi) {
                if constexpr (!Scatter) std::fill(dst, dst + d.oz, 0.0);
                continue;
              }
              const long iy = oy * d.stride + off_y;
              double* src = image + ((ci * d.nx + static_cast<std::size_t>(ix)) * d.ny +
                                     static_cast<std::size_t>(iy)) *
                                        d.nz;
              if constexpr (Scatter) {
                if (d.stride == 1) {
                  double* s = src + off_z;
                  for (long oz = z_lo; oz < z_hi; ++oz) s[oz] += dst[oz];
                } else {
                  for (long oz = z_lo; oz < z_hi; ++oz) src[oz * d.stride + off_z] += dst[oz];
                }
              } else {
                std::fill(dst, dst + z_lo, 0.0);
                if (d.stride == 1) {
                  std::copy(src + z_lo + off_z, src + z_hi + off_z, dst + z_lo);
                } else {
                  for (long oz = z_lo; oz < z_hi; ++oz) dst[oz] = src[oz * d.stride + off_z];
                }
                std::fill(dst + z_hi, dst + d.oz, 0.0);
              }
            }
          }
        }
      }
    }
  }
}

std::size_t planes_per_chunk(const ConvDims& d) {
  const std::size_t columns =
      std::clamp<std::size_t>(kChunkBytes / (8 * d.rows()), kMinChunkColumns, kMaxChunkColumns);
  return std::max<std::size_t>(1, columns / std::max<std::size_t>(1, d.plane()));
}

Tensor conv_forward(const ConvDims& d, const Tensor& input, const Tensor& kernel) {
  Tensor out({d.c_out, d.ox, d.oy, d.oz});
  const auto w = kernel.matrix(d.c_out, d.rows());
  auto y = out.matrix(d.c_out, d.out_voxels());
  const std::size_t step = planes_per_chunk(d);
  RowMatrix cols(static_cast<Eigen::Index>(d.rows()),
                 static_cast<Eigen::Index>(std::min(step, d.ox) * d.plane()));
  double* image = const_cast<double*>(input.data().data());
  for (std::size_t x0 = 0; x0 < d.ox; x0 += step) {
    const std::size_t x1 = std::min(d.ox, x0 + step);
    const auto n = static_cast<Eigen::Index>((x1 - x0) * d.plane());
    Eigen::Map<RowMatrix> block(cols.data(), cols.rows(), n);
    column_pass<false>(d, x0, x1, image, block.data());
    y.middleCols(static_cast<Eigen::Index>(x0 * d.plane()), n).noalias() = w * block;
  }
  return out;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const long span = static_cast<long>(g.dilation) * (static_cast<long>(kernel) - 1) + 1;
  const long padded = static_cast<long>(in) + 2L * g.pad;
  if (padded < span) {
    throw ShapeError("conv3d: extent " + std::to_string(in) + " too small for kernel " +
                     std::to_string(kernel));
  }
  return static_cast<std::size_t>((padded - span) / g.stride + 1);
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  return conv_forward(check_dims(input, kernel, g), input, kernel);
}

Var conv3d(Var input, Var kernel, const ConvGeometry& g) {
  const ConvDims d = check_dims(input.value(), kernel.value(), g);
  Tensor out = conv_forward(d, input.value(), kernel.value());
  return input.tape().record(
      std::move(out), {input, kernel},
      [input, kernel, d](Tape& t, std::span<const double> g_out, const Tensor&) {
        const bool want_input = t.requires_grad(input);
        const bool want_kernel = t.requires_grad(kernel);
        ConstMatrixMap gy(g_out.data(), static_cast<Eigen::Index>(d.c_out),
                          static_cast<Eigen::Index>(d.out_voxels()));
        const auto w = kernel.value().matrix(d.c_out, d.rows());
        double* image = const_cast<double*>(input.value().data().data());
        double* d_image = want_input ? t.grad_buffer(input.id()).data() : nullptr;
        std::span<double> dk_span = want_kernel ? t.grad_buffer(kernel.id()) : std::span<double>{};
        const std::size_t step = planes_per_chunk(d);
        RowMatrix cols(static_cast<Eigen::Index>(d.rows()),
                       static_cast<Eigen::Index>(std::min(step, d.ox) * d.plane()));
        for (std::size_t x0 = 0; x0 < d.ox; x0 += step) {
          const std::size_t x1 = std::min(d.ox, x0 + step);
          const auto n = static_cast<Eigen::Index>((x1 - x0) * d.plane());
          Eigen::Map<RowMatrix> block(cols.data(), cols.rows(), n);
          const auto gy_block = gy.middleCols(static_cast<Eigen::Index>(x0 * d.plane()), n);
          if (want_kernel) {
            column_pass<false>(d, x0, x1, image, block.data());
            MatrixMap dk(dk_span.data(), static_cast<Eigen::Index>(d.c_out),
                         static_cast<Eigen::Index>(d.rows()));
            dk.noalias() += gy_block * block.transpose();
          }
          if (want_input) {
            block.noalias() = w.transpose() * gy_block;
            column_pass<true>(d, x0, x1, d_image, block.data());
          }
        }
      });
}

}  // namespace d3seg
