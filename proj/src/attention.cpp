#include "d3seg/attention.hpp"

#include "d3seg/ops.hpp"

#include <cmath>

namespace d3seg {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, CounterRng& rng, double gain) {
  Tensor t(std::move(shape));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_attention_params(ParamStore& store, const std::string& prefix, std::size_t dim,
                          CounterRng& rng) {
  for (const char* name : {"q", "k", "v"}) {
    store.add(prefix + ".w" + name, fan_in_uniform({dim, dim}, dim, rng));
    if (name[0] != 'k') store.add(prefix + ".b" + name, Tensor({dim}, 0.0));
  }
  store.add(prefix + ".wo", fan_in_uniform({dim, dim}, dim, rng, 0.5));
  store.add(prefix + ".bo", Tensor({dim}, 0.0));
  store.add(prefix + ".mlp1.w", fan_in_uniform({dim, 2 * dim}, dim, rng));
  store.add(prefix + ".mlp1.b", Tensor({2 * dim}, 0.0));
  store.add(prefix + ".mlp2.w", fan_in_uniform({2 * dim, dim}, 2 * dim, rng, 0.5));
  store.add(prefix + ".mlp2.b", Tensor({dim}, 0.0));
}

Var dense(ParamBinding& p, const std::string& prefix, Var x) {
  return add_row_bias(matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

AttentionOutput attention_block(ParamBinding& p, const std::string& prefix, Var tokens,
                                std::size_t heads) {
  const std::size_t dim = tokens.value().dim(1);
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(dim) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = dim / heads;
  Var q = add_row_bias(matmul(tokens, p(prefix + ".wq")), p(prefix + ".bq"));
  // No key bias: it shifts each score row by a constant and cancels in the softmax.
  Var k = matmul(tokens, p(prefix + ".wk"));
  Var v = add_row_bias(matmul(tokens, p(prefix + ".wv")), p(prefix + ".bv"));

  AttentionOutput result;
  std::vector<Var> head_outputs;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * head_dim, head_dim);
    Var kh = slice_cols(k, h * head_dim, head_dim);
    Var vh = slice_cols(v, h * head_dim, head_dim);
    Var weights = row_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    result.weights.push_back(weights.value());
    head_outputs.push_back(matmul(weights, vh));
  }
  Var attended = add_row_bias(matmul(concat_cols(head_outputs), p(prefix + ".wo")),
                              p(prefix + ".bo"));
  Var x1 = add(tokens, attended);
  Var hidden = leaky_relu(dense(p, prefix + ".mlp1", x1));
  result.out = add(x1, dense(p, prefix + ".mlp2", hidden));
  return result;
}

}  // namespace d3seg
