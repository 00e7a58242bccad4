#include "d3seg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace d3seg {
namespace {

void accumulate(Tape& tape, Var target, std::span<const double> g) {
  if (!tape.requires_grad(target)) return;
  auto dst = tape.grad_buffer(target.id());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

void require_scalar(const Tensor& t, const char* op) {
  if (t.size() != 1) {
    throw ShapeError(std::string(op) + ": expected a one-element tensor, got " +
                     to_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.array() += b.value().array();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.array() -= b.value().array();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    accumulate(t, a, g);
    if (t.requires_grad(b)) {
      auto dst = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  out.array() *= b.value().array();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (t.requires_grad(a)) {
      auto dst = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto dst = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out.array() *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, std::span<const double> g, const Tensor&) {
    auto dst = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

Var scale_by(Var x, Var factor) {
  require_scalar(factor.value(), "scale_by");
  const double s = factor.value()[0];
  Tensor out = x.value();
  out.array() *= s;
  return x.tape().record(std::move(out), {x, factor},
                         [x, factor](Tape& t, std::span<const double> g, const Tensor&) {
                           const double s = factor.value()[0];
                           if (t.requires_grad(x)) {
                             auto dst = t.grad_buffer(x.id());
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
                           }
                           if (t.requires_grad(factor)) {
                             const auto& xv = x.value();
                             double acc = 0.0;
                             for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                             t.grad_buffer(factor.id())[0] += acc;
                           }
                         });
}

Var square(Var x) {
  Tensor out = x.value();
  out.array() = out.array().square();
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::span<const double> g, const Tensor&) {
    const auto& xv = x.value();
    auto dst = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += 2.0 * xv[i] * g[i];
  });
}

Var leaky_relu(Var x, double slope) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : slope * v;
  return x.tape().record(std::move(out), {x}, [x, slope](Tape& t, std::span<const double> g, const Tensor&) {
    const auto& xv = x.value();
    auto dst = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return x.tape().record(std::move(out), {x},
                         [x](Tape& t, std::span<const double> g, const Tensor& s) {
                           auto dst = t.grad_buffer(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             dst[i] += g[i] * s[i] * (1.0 - s[i]);
                           }
                         });
}

Var add_channel_bias(Var x, Var bias) {
  const auto& xv = x.value();
  if (xv.rank() < 1 || bias.value().rank() != 1 || bias.value().size() != xv.dim(0)) {
    throw ShapeError("add_channel_bias: input " + to_string(xv.shape()) + " with bias " +
                     to_string(bias.value().shape()));
  }
  Tensor out = xv;
  const std::size_t inner = out.inner_size();
  out.as_matrix().colwise() += bias.value().matrix(bias.value().size(), 1).col(0);
  return x.tape().record(std::move(out), {x, bias},
                         [x, bias, inner](Tape& t, std::span<const double> g, const Tensor&) {
                           accumulate(t, x, g);
                           if (t.requires_grad(bias)) {
                             auto dst = t.grad_buffer(bias.id());
                             for (std::size_t c = 0; c < dst.size(); ++c) {
                               double acc = 0.0;
                               for (std::size_t i = 0; i < inner; ++i) acc += g[c * inner + i];
                               dst[c] += acc;
                             }
                           }
                         });
}

Var add_row_bias(Var x, Var bias) {
  const auto& xv = x.value();
  require_rank(xv, 2, "add_row_bias");
  if (bias.value().size() != xv.dim(1)) {
    throw ShapeError("add_row_bias: input " + to_string(xv.shape()) + " with bias " +
                     to_string(bias.value().shape()));
  }
  Tensor out = xv;
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  out.matrix(rows, cols).rowwise() += bias.value().matrix(1, cols).row(0);
  return x.tape().record(std::move(out), {x, bias},
                         [x, bias, rows, cols](Tape& t, std::span<const double> g, const Tensor&) {
                           accumulate(t, x, g);
                           if (t.requires_grad(bias)) {
                             auto dst = t.grad_buffer(bias.id());
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
                             }
                           }
                         });
}

Var scale_rows(Var x, std::span<const double> factors) {
  const auto& xv = x.value();
  if (xv.rank() < 1 || factors.size() != xv.dim(0)) {
    throw ShapeError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                     to_string(xv.shape()));
  }
  std::vector<double> f(factors.begin(), factors.end());
  Tensor out = xv;
  const std::size_t inner = out.inner_size();
  for (std::size_t r = 0; r < f.size(); ++r) {
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] *= f[r];
  }
  return x.tape().record(std::move(out), {x},
                         [x, f = std::move(f), inner](Tape& t, std::span<const double> g, const Tensor&) {
                           auto dst = t.grad_buffer(x.id());
                           for (std::size_t r = 0; r < f.size(); ++r) {
                             for (std::size_t i = 0; i < inner; ++i) {
                               dst[r * inner + i] += f[r] * g[r * inner + i];
                             }
                           }
                         });
}

Var sum(Var x) {
  CompensatedSum acc;
  for (double v : x.value().data()) acc += v;
  return x.tape().record(Tensor({1}, acc.value()), {x}, [x](Tape& t, std::span<const double> g, const Tensor&) {
    auto dst = t.grad_buffer(x.id());
    for (auto& d : dst) d += g[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Tensor gap(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("gap: expected [C, ...], got " + to_string(x.shape()));
  const std::size_t channels = x.dim(0), inner = x.inner_size();
  Tensor out({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += x[c * inner + i];
    out[c] = acc / static_cast<double>(inner);
  }
  return out;
}

Var gap(Var x) {
  const std::size_t inner = x.value().inner_size();
  return x.tape().record(gap(x.value()), {x}, [x, inner](Tape& t, std::span<const double> g, const Tensor&) {
    auto dst = t.grad_buffer(x.id());
    const double w = 1.0 / static_cast<double>(inner);
    for (std::size_t c = 0; c < g.size(); ++c) {
      for (std::size_t i = 0; i < inner; ++i) dst[c * inner + i] += g[c] * w;
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x},
                         [x](Tape& t, std::span<const double> g, const Tensor&) { accumulate(t, x, g); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  Shape out_shape = first;
  out_shape[0] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw ShapeError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    }
    out_shape[0] += s[0];
  }
  std::vector<double> data;
  data.reserve(numel(out_shape));
  for (const auto& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      Tensor(std::move(out_shape), std::move(data)), parts,
      [inputs](Tape& t, std::span<const double> g, const Tensor&) {
        std::size_t off = 0;
        for (const auto& p : inputs) {
          const std::size_t n = p.value().size();
          accumulate(t, p, g.subspan(off, n));
          off += n;
        }
      });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack: no operands");
  std::vector<Var> reshaped;
  reshaped.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw ShapeError("stack: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
    }
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    reshaped.push_back(reshape(p, std::move(s)));
  }
  return concat(reshaped);
}

Var slice(Var x, std::size_t start, std::size_t count) {
  const auto& xv = x.value();
  if (xv.rank() < 1 || count == 0 || start + count > xv.dim(0)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") of " + to_string(xv.shape()));
  }
  const std::size_t inner = xv.inner_size();
  Shape s = xv.shape();
  s[0] = count;
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(start * inner),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * inner));
  return x.tape().record(Tensor(std::move(s), std::move(data)), {x},
                         [x, start, inner](Tape& t, std::span<const double> g, const Tensor&) {
                           auto dst = t.grad_buffer(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i) dst[start * inner + i] += g[i];
                         });
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  out.matrix(m, n).noalias() = av.matrix(m, k) * bv.matrix(k, n);
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, k, n](Tape& t, std::span<const double> g, const Tensor&) {
                           ConstMatrixMap gm(g.data(), static_cast<Eigen::Index>(m),
                                             static_cast<Eigen::Index>(n));
                           if (t.requires_grad(a)) {
                             MatrixMap da(t.grad_buffer(a.id()).data(),
                                          static_cast<Eigen::Index>(m),
                                          static_cast<Eigen::Index>(k));
                             da.noalias() += gm * b.value().matrix(k, n).transpose();
                           }
                           if (t.requires_grad(b)) {
                             MatrixMap db(t.grad_buffer(b.id()).data(),
                                          static_cast<Eigen::Index>(k),
                                          static_cast<Eigen::Index>(n));
                             db.noalias() += a.value().matrix(m, k).transpose() * gm;
                           }
                         });
}

Var transpose(Var x) {
  const auto& xv = x.value();
  require_rank(xv, 2, "transpose");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  out.matrix(c, r) = xv.matrix(r, c).transpose();
  return x.tape().record(std::move(out), {x}, [x, r, c](Tape& t, std::span<const double> g, const Tensor&) {
    MatrixMap dst(t.grad_buffer(x.id()).data(), static_cast<Eigen::Index>(r),
                  static_cast<Eigen::Index>(c));
    dst += ConstMatrixMap(g.data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r))
               .transpose();
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const auto& xv = x.value();
  require_rank(xv, 2, "slice_cols");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (count == 0 || start + count > cols) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") of " + to_string(xv.shape()));
  }
  Tensor out({rows, count});
  out.matrix(rows, count) = xv.matrix(rows, cols).middleCols(static_cast<Eigen::Index>(start),
                                                             static_cast<Eigen::Index>(count));
  return x.tape().record(std::move(out), {x},
                         [x, rows, cols, start, count](Tape& t, std::span<const double> g, const Tensor&) {
                           MatrixMap dst(t.grad_buffer(x.id()).data(),
                                         static_cast<Eigen::Index>(rows),
                                         static_cast<Eigen::Index>(cols));
                           dst.middleCols(static_cast<Eigen::Index>(start),
                                          static_cast<Eigen::Index>(count)) +=
                               ConstMatrixMap(g.data(), static_cast<Eigen::Index>(rows),
                                              static_cast<Eigen::Index>(count));
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].value().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p.value(), 2, "concat_cols");
    if (p.value().dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + to_string(p.shape()));
    }
    cols += p.value().dim(1);
  }
  Tensor out({rows, cols});
  auto om = out.matrix(rows, cols);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t c = p.value().dim(1);
    om.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(c)) =
        p.value().matrix(rows, c);
    offsets.push_back(off);
    off += c;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), parts, [inputs, offsets, rows, cols](Tape& t, std::span<const double> g, const Tensor&) {
        ConstMatrixMap gm(g.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (!t.requires_grad(inputs[i])) continue;
          const std::size_t c = inputs[i].value().dim(1);
          MatrixMap dst(t.grad_buffer(inputs[i].id()).data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(c));
          dst += gm.middleCols(static_cast<Eigen::Index>(offsets[i]), static_cast<Eigen::Index>(c));
        }
      });
}

Tensor masked_row_softmax(const Tensor& logits, std::span<const bool> column_mask) {
  require_rank(logits, 2, "masked_row_softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (column_mask.size() != cols) {
    throw ShapeError("masked_row_softmax: mask of " + std::to_string(column_mask.size()) +
                     " for " + to_string(logits.shape()));
  }
  if (std::none_of(column_mask.begin(), column_mask.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("masked_row_softmax: every column is masked");
  }
  Tensor out({rows, cols}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (column_mask[c]) mx = std::max(mx, logits[r * cols + c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!column_mask[c]) continue;
      const double e = std::exp(logits[r * cols + c] - mx);
      out[r * cols + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return out;
}

namespace {

// Softmax backward over rows of y [rows, cols].
void softmax_rows_backward(const Tensor& y, std::span<const double> g, std::span<double> dst,
                           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
      dst[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
    }
  }
}

}  // namespace

Var masked_row_softmax(Var logits, std::span<const bool> column_mask) {
  Tensor out = masked_row_softmax(logits.value(), column_mask);
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  return logits.tape().record(
      std::move(out), {logits},
      [logits, rows, cols](Tape& t, std::span<const double> g, const Tensor& y) {
        softmax_rows_backward(y, g, t.grad_buffer(logits.id()), rows, cols);
      });
}

Var row_softmax(Var logits) {
  const std::size_t cols = logits.value().dim(1);
  auto flags = std::make_unique<bool[]>(cols);
  std::fill(flags.get(), flags.get() + cols, true);
  return masked_row_softmax(logits, std::span<const bool>(flags.get(), cols));
}

Tensor channel_softmax(const Tensor& logits) {
  if (logits.rank() < 2) {
    throw ShapeError("channel_softmax: expected [C, ...], got " + to_string(logits.shape()));
  }
  const std::size_t classes = logits.dim(0), voxels = logits.inner_size();
  Tensor out(logits.shape());
  for (std::size_t v = 0; v < voxels; ++v) {
    double mx = logits[v];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits[c * voxels + v]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(logits[c * voxels + v] - mx);
      out[c * voxels + v] = e;
      z += e;
    }
    for (std::size_t c = 0; c < classes; ++c) out[c * voxels + v] /= z;
  }
  return out;
}

Var channel_softmax(Var logits) {
  Tensor out = channel_softmax(logits.value());
  const std::size_t classes = out.dim(0), voxels = out.inner_size();
  return logits.tape().record(
      std::move(out), {logits},
      [logits, classes, voxels](Tape& t, std::span<const double> g, const Tensor& y) {
        auto dst = t.grad_buffer(logits.id());
        for (std::size_t v = 0; v < voxels; ++v) {
          double dot = 0.0;
          for (std::size_t c = 0; c < classes; ++c) dot += y[c * voxels + v] * g[c * voxels + v];
          for (std::size_t c = 0; c < classes; ++c) {
            dst[c * voxels + v] += y[c * voxels + v] * (g[c * voxels + v] - dot);
          }
        }
      });
}

Var upsample_nearest2(Var x) {
  const auto& xv = x.value();
  require_rank(xv, 4, "upsample_nearest2");
  const std::size_t c = xv.dim(0), nx = xv.dim(1), ny = xv.dim(2), nz = xv.dim(3);
  Tensor out({c, 2 * nx, 2 * ny, 2 * nz});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < 2 * nx; ++i) {
      for (std::size_t j = 0; j < 2 * ny; ++j) {
        const double* src = &xv[((ch * nx + i / 2) * ny + j / 2) * nz];
        double* dst = &out[((ch * 2 * nx + i) * 2 * ny + j) * 2 * nz];
        for (std::size_t k = 0; k < 2 * nz; ++k) dst[k] = src[k / 2];
      }
    }
  }
  return x.tape().record(std::move(out), {x},
                         [x, c, nx, ny, nz](Tape& t, std::span<const double> g, const Tensor&) {
                           auto dst = t.grad_buffer(x.id());
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             for (std::size_t i = 0; i < 2 * nx; ++i) {
                               for (std::size_t j = 0; j < 2 * ny; ++j) {
                                 const double* src = &g[((ch * 2 * nx + i) * 2 * ny + j) * 2 * nz];
                                 double* d = &dst[((ch * nx + i / 2) * ny + j / 2) * nz];
                                 for (std::size_t k = 0; k < 2 * nz; ++k) d[k / 2] += src[k];
                               }
                             }
                           }
                         });
}

Var linear_combination(std::span<const Var> terms, Var coeffs) {
  if (terms.empty() || coeffs.value().size() != terms.size()) {
    throw ShapeError("linear_combination: " + std::to_string(terms.size()) + " terms, coeffs " +
                     to_string(coeffs.shape()));
  }
  Tensor out(terms[0].shape(), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require_same_shape(terms[k].value(), out, "linear_combination");
    out.array() += coeffs.value()[k] * terms[k].value().array();
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  inputs.push_back(coeffs);
  return coeffs.tape().record(
      std::move(out), inputs, [inputs](Tape& t, std::span<const double> g, const Tensor&) {
        const Var coeffs = inputs.back();
        const auto& cv = coeffs.value();
        for (std::size_t k = 0; k + 1 < inputs.size(); ++k) {
          const Var term = inputs[k];
          if (t.requires_grad(term)) {
            auto dst = t.grad_buffer(term.id());
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += cv[k] * g[i];
          }
          if (t.requires_grad(coeffs)) {
            const auto& tv = term.value();
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * tv[i];
            t.grad_buffer(coeffs.id())[k] += acc;
          }
        }
      });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || weights.size() != terms.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms, " +
                     std::to_string(weights.size()) + " weights");
  }
  Tensor out(terms[0].shape(), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require_same_shape(terms[k].value(), out, "weighted_sum");
    out.array() += weights[k] * terms[k].value().array();
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape().record(std::move(out), inputs,
                                [inputs, w](Tape& t, std::span<const double> g, const Tensor&) {
                                  for (std::size_t k = 0; k < inputs.size(); ++k) {
                                    if (!t.requires_grad(inputs[k])) continue;
                                    auto dst = t.grad_buffer(inputs[k].id());
                                    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += w[k] * g[i];
                                  }
                                });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

}  // namespace d3seg
