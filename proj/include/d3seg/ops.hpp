#pragma once

#include "d3seg/autodiff.hpp"

#include <span>
#include <vector>

namespace d3seg {

inline constexpr double kLeakySlope = 0.01;

/// Geometry of a cubic 3D convolution. Padding is symmetric.
struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  /// "Same"-style padding for an odd kernel at the given dilation.
  static ConvGeometry same(std::size_t kernel, int stride = 1, int dilation = 1) {
    return {stride, dilation * static_cast<int>(kernel - 1) / 2, dilation};
  }
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

// Convolution of input [C_in, X, Y, Z] with kernel [C_out, C_in, k, k, k].
Tensor conv3d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g);
Var conv3d(Var input, Var kernel, const ConvGeometry& g);

// Elementwise arithmetic on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// x times a one-element tensor.
Var scale_by(Var x, Var factor);
Var square(Var x);
Var leaky_relu(Var x, double slope = kLeakySlope);
Var sigmoid(Var x);

/// x [C, ...] plus bias [C] broadcast over trailing axes.
Var add_channel_bias(Var x, Var bias);
/// x [N, D] plus bias [D] added to every row.
Var add_row_bias(Var x, Var bias);
/// Row i of x (leading axis) multiplied by factors[i].
Var scale_rows(Var x, std::span<const double> factors);

Var sum(Var x);
Var mean(Var x);
/// Spatial mean per channel: [C, ...] -> [C].
Tensor gap(const Tensor& x);
Var gap(Var x);

Var reshape(Var x, Shape shape);
/// Concatenate along the leading axis.
Var concat(std::span<const Var> parts);
/// Stack equally shaped tensors along a new leading axis.
Var stack(std::span<const Var> parts);
/// Sub-range [start, start + count) of the leading axis.
Var slice(Var x, std::size_t start, std::size_t count);

Var matmul(Var a, Var b);
Var transpose(Var x);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);

/// Row softmax over the columns flagged in column_mask. Unflagged columns get
/// exactly 0; rows are max-shifted before exponentiation.
Tensor masked_row_softmax(const Tensor& logits, std::span<const bool> column_mask);
Var masked_row_softmax(Var logits, std::span<const bool> column_mask);
Var row_softmax(Var logits);
/// Softmax over the leading (class) axis at every voxel.
Tensor channel_softmax(const Tensor& logits);
Var channel_softmax(Var logits);

/// Nearest-neighbour x2 upsampling of [C, X, Y, Z].
Var upsample_nearest2(Var x);

/// sum_k coeffs[k] * terms[k]; coeffs is a [K] tensor.
Var linear_combination(std::span<const Var> terms, Var coeffs);
/// sum_k weights[k] * terms[k] with constant weights.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

Var stop_gradient(Var x);

}  // namespace d3seg
