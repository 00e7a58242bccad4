#pragma once

#include "d3seg/autodiff.hpp"
#include "d3seg/rng.hpp"

#include <string>
#include <vector>

namespace d3seg {

/// Uniform init in [-bound, bound] with bound = gain * sqrt(3 / fan_in).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, CounterRng& rng, double gain = 1.0);

/// Parameters of one residual self-attention block over tokens of width `dim`:
///   <prefix>.{wq,wk,wv,wo} [dim, dim], <prefix>.{bq,bv,bo} [dim],
///   <prefix>.mlp1.{w [dim, 2 dim], b}, <prefix>.mlp2.{w [2 dim, dim], b}.
void add_attention_params(ParamStore& store, const std::string& prefix, std::size_t dim,
                          CounterRng& rng);

struct AttentionOutput {
  Var out;
  /// Row-stochastic attention matrix [N, N] per head.
  std::vector<Tensor> weights;
};

/// tokens [N, dim] -> x1 = tokens + MHA(tokens); out = x1 + MLP(x1).
AttentionOutput attention_block(ParamBinding& p, const std::string& prefix, Var tokens,
                                std::size_t heads);

/// Dense layer over token rows: x [N, in] * w [in, out] + b [out].
Var dense(ParamBinding& p, const std::string& prefix, Var x);

}  // namespace d3seg
