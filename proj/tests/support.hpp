#pragma once

#include "d3seg/rng.hpp"
#include "d3seg/tensor.hpp"

#include <filesystem>
#include <string>

namespace d3seg::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Direct nested-loop convolution, zero padding.
inline Tensor conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad, int dilation) {
  const long ci_n = static_cast<long>(x.dim(0)), co_n = static_cast<long>(w.dim(0));
  const long k = static_cast<long>(w.dim(2));
  const long n[3] = {static_cast<long>(x.dim(1)), static_cast<long>(x.dim(2)),
                     static_cast<long>(x.dim(3))};
  long o[3];
  for (int a = 0; a < 3; ++a) o[a] = (n[a] + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  Tensor y({static_cast<std::size_t>(co_n), static_cast<std::size_t>(o[0]),
            static_cast<std::size_t>(o[1]), static_cast<std::size_t>(o[2])});
  for (long co = 0; co < co_n; ++co)
    for (long i = 0; i < o[0]; ++i)
      for (long j = 0; j < o[1]; ++j)
        for (long l = 0; l < o[2]; ++l) {
          double acc = 0.0;
          for (long ci = 0; ci < ci_n; ++ci)
            for (long a = 0; a < k; ++a)
              for (long b = 0; b < k; ++b)
                for (long c = 0; c < k; ++c) {
                  const long xi = i * stride + a * dilation - pad;
                  const long xj = j * stride + b * dilation - pad;
                  const long xl = l * stride + c * dilation - pad;
                  if (xi < 0 || xj < 0 || xl < 0 || xi >= n[0] || xj >= n[1] || xl >= n[2]) continue;
                  acc += w.at(co, ci, a, b, c) * x.at(ci, xi, xj, xl);
                }
          y.at(co, i, j, l) = acc;
        }
  return y;
}

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("d3seg_test_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace d3seg::test
