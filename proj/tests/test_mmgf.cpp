#include "d3seg/grad_check.hpp"
#include "d3seg/mmgf.hpp"
#include "d3seg/ops.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace d3seg;
using d3seg::test::random_tensor;

namespace {

constexpr Availability kAll{true, true, true, true};

Tensor embeddings_2d(std::array<std::array<double, 2>, 4> rows) {
  Tensor h({4, 2});
  for (std::size_t i = 0; i < 4; ++i) h.at(i, 0) = rows[i][0], h.at(i, 1) = rows[i][1];
  return h;
}

using Mat = std::vector<std::vector<double>>;

Mat matmul_oracle(const Mat& a, const Mat& b) {
  const std::size_t n = a.size();
  Mat c(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Matrix powers and a row softmax over the available columns, written out longhand.
Mat multi_hop_oracle(const Mat& a, const std::array<double, 3>& alpha, const Availability& avail) {
  const std::size_t n = a.size();
  const Mat a2 = matmul_oracle(a, a);
  const Mat a3 = matmul_oracle(a2, a);
  Mat out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (!avail[j]) continue;
      e[j] = std::exp(alpha[0] * a[i][j] + alpha[1] * a2[i][j] + alpha[2] * a3[i][j]);
      denom += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i][j] = e[j] / denom;
  }
  return out;
}

Tensor to_tensor(const Mat& m) {
  Tensor t({m.size(), m.size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) t.at(i, j) = m[i][j];
  return t;
}

Tensor mix(const Tensor& adjacency, std::array<double, 3> alpha, const Availability& avail) {
  return multi_hop_mix(adjacency, Tensor({3}, std::vector<double>(alpha.begin(), alpha.end())),
                       avail);
}

std::vector<Var> constants(Tape& tape, const std::vector<Tensor>& maps) {
  std::vector<Var> out;
  for (const auto& m : maps) out.push_back(tape.constant(m));
  return out;
}

}  // namespace

TEST_CASE("adjacency of identical, orthogonal and 45-degree embeddings") {
  const Tensor same = build_adjacency(embeddings_2d({{{1, 2}, {1, 2}, {1, 2}, {1, 2}}}), kAll);
  for (double v : same.data()) CHECK(std::abs(v - 1.0) < 1e-15);

  Tensor ortho({4, 4});
  for (std::size_t i = 0; i < 4; ++i) ortho.at(i, i) = 1.0 + static_cast<double>(i);
  const Tensor eye = build_adjacency(ortho, kAll);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(eye.at(i, j) == (i == j ? 1.0 : 0.0));

  const Tensor a = build_adjacency(embeddings_2d({{{1, 0}, {1, 1}, {0, 1}, {1, 0}}}), kAll);
  CHECK(std::abs(a.at(0, 1) - 1.0 / std::numbers::sqrt2) < 1e-15);
  CHECK(a.at(0, 1) == a.at(1, 0));
  CHECK(a.at(0, 1) == doctest::Approx(0.70711).epsilon(1e-5));
}

TEST_CASE("adjacency masks unavailable modalities and tolerates zero embeddings") {
  const Availability some{true, false, true, true};
  const Tensor h = random_tensor({4, 5}, 3);
  const Tensor a = build_adjacency(h, some);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a.at(1, k) == 0.0);
    CHECK(a.at(k, 1) == 0.0);
  }
  for (std::size_t i : {0, 2, 3}) CHECK(a.at(i, i) == 1.0);
  for (double v : a.data()) CHECK((v >= -1.0 && v <= 1.0));

  Tensor z = h;
  for (std::size_t c = 0; c < 5; ++c) z.at(2, c) = 0.0;
  const Tensor az = build_adjacency(z, kAll);
  for (std::size_t k = 0; k < 4; ++k) CHECK(az.at(2, k) == 0.0);
  CHECK(az.all_finite());
}

TEST_CASE("multi-hop mix: single availability is one-hot") {
  for (std::size_t j = 0; j < 4; ++j) {
    Availability one{};
    one[j] = true;
    const Tensor m = mix(random_tensor({4, 4}, 30 + j), {1.0, 0.5, 0.25}, one);
    CHECK(m.at(j, j) == 1.0);
    for (std::size_t k = 0; k < 4; ++k)
      if (k != j) CHECK(m.at(j, k) == 0.0);
  }
}

TEST_CASE("multi-hop mix: identity adjacency with first hop only") {
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  const Tensor m = mix(eye, {1.0, 0.0, 0.0}, kAll);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(m.at(i, j) == doctest::Approx(i == j ? 0.4754 : 0.1749).epsilon(1e-4));
  const double e = std::numbers::e;
  CHECK(std::abs(m.at(0, 0) - e / (e + 3)) < 1e-15);
}

TEST_CASE("multi-hop mix matches the matrix-power oracle") {
  {
    const double c = 0.3;
    const Availability two{true, false, false, true};
    Mat a(4, std::vector<double>(4, 0.0));
    a[0][0] = a[3][3] = 1.0;
    a[0][3] = a[3][0] = c;
    const Tensor got = mix(to_tensor(a), {1, 1, 1}, two);
    // 2x2 closed form: A^2 = [[1 + c^2, 2c], ...], A^3 = [[1 + 3c^2, 3c + c^3], ...].
    const double diag = 1 + (1 + c * c) + (1 + 3 * c * c);
    const double off = c + 2 * c + (3 * c + c * c * c);
    const double p = std::exp(diag) / (std::exp(diag) + std::exp(off));
    CHECK(std::abs(got.at(0, 0) - p) < 1e-10);
    CHECK(std::abs(got.at(0, 3) - (1 - p)) < 1e-10);
    CHECK(max_abs_diff(got, to_tensor(multi_hop_oracle(a, {1, 1, 1}, two))) < 1e-10);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor h = random_tensor({4, 6}, 100 + seed);
    const Tensor adj = build_adjacency(h, kAll);
    Mat a(4, std::vector<double>(4));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) a[i][j] = adj.at(i, j);
    CounterRng rng(seed);
    const std::array<double, 3> alpha{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    CHECK(max_abs_diff(mix(adj, alpha, kAll), to_tensor(multi_hop_oracle(a, alpha, kAll))) < 1e-10);
  }
}

TEST_CASE("fuse maps: identity pipeline and equal inputs") {
  ParamStore store;
  CounterRng rng(1);
  add_mmgf_params(store, "g", 3, rng, 0.0);
  Tape tape;
  ParamBinding p(tape, store);
  std::vector<Tensor> maps;
  for (std::size_t m = 0; m < 4; ++m) maps.push_back(random_tensor({3, 2, 2, 2}, 50 + m, 0, 1));
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;

  const Availability only_t2{false, false, false, true};
  const Var single = fuse_maps(p, "g", constants(tape, maps), tape.constant(eye), only_t2);
  CHECK(max_abs_diff(single.value(), maps[3]) < 1e-15);

  // Two available streams that carry the same map: any row-stochastic mixing returns phi(map).
  std::vector<Tensor> equal = maps;
  equal[0] = maps[2];
  const Availability two{true, false, true, false};
  Tensor mixing({4, 4});
  mixing.at(0, 0) = 0.3, mixing.at(0, 2) = 0.7, mixing.at(2, 0) = 0.9, mixing.at(2, 2) = 0.1;
  const Var fused = fuse_maps(p, "g", constants(tape, equal), tape.constant(mixing), two);
  CHECK(max_abs_diff(fused.value(), maps[2]) < 1e-15);
}

TEST_CASE("fuse maps matches a per-voxel oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamStore store;
    CounterRng rng(seed);
    add_mmgf_params(store, "g", 4, rng);
    for (auto& e : store) e.value = random_tensor(e.value.shape(), 200 + seed * 10 + e.value.size());
    std::vector<Tensor> maps;
    for (std::size_t m = 0; m < 4; ++m) maps.push_back(random_tensor({4, 2, 2, 2}, 300 + seed * 4 + m));
    const Availability avail{true, true, false, true};
    const Tensor mixing = masked_row_softmax(random_tensor({4, 4}, 400 + seed, -2, 2), avail);

    Tape tape;
    ParamBinding p(tape, store);
    const Tensor got = fuse_maps(p, "g", constants(tape, maps), tape.constant(mixing), avail).value();

    const Tensor& w1 = store.value("g.phi1.w");
    const Tensor& b1 = store.value("g.phi1.b");
    const Tensor& w2 = store.value("g.phi2.w");
    const Tensor& b2 = store.value("g.phi2.b");
    for (std::size_t v = 0; v < 8; ++v) {
      std::array<double, 4> acc{};
      for (std::size_t i = 0; i < 4; ++i) {
        if (!avail[i]) continue;
        std::array<double, 4> x{}, h{};
        for (std::size_t c = 0; c < 4; ++c)
          for (std::size_t j = 0; j < 4; ++j) x[c] += mixing.at(i, j) * maps[j][c * 8 + v];
        for (std::size_t r = 0; r < 4; ++r) {
          double s = b1[r];
          for (std::size_t c = 0; c < 4; ++c) s += w1.at(r, c) * x[c];
          h[r] = s > 0 ? s : 0.01 * s;
        }
        for (std::size_t r = 0; r < 4; ++r) {
          double s = b2[r];
          for (std::size_t c = 0; c < 4; ++c) s += w2.at(r, c) * h[c];
          acc[r] += s / 3.0;
        }
      }
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got[c * 8 + v] - acc[c]) < 1e-12);
    }
  }
}

TEST_CASE("mmgf forward: masked map contents are irrelevant and imputation counts as T1ce") {
  ParamStore store;
  CounterRng rng(2);
  add_mmgf_params(store, "g", 3, rng);
  std::vector<Tensor> maps;
  for (std::size_t m = 0; m < 4; ++m) maps.push_back(random_tensor({3, 2, 2, 2}, 60 + m));
  const ModalityMask mask(true, true, false, true);
  Tape tape;
  ParamBinding p(tape, store);
  const auto a = mmgf_forward(p, "g", constants(tape, maps), mask);
  std::vector<Tensor> other = maps;
  other[2] = random_tensor({3, 2, 2, 2}, 99, -5, 5);
  const auto b = mmgf_forward(p, "g", constants(tape, other), mask);
  CHECK(bitwise_equal(a.fused.value(), b.fused.value()));
  for (std::size_t k = 0; k < 4; ++k) CHECK(a.mixing.value().at(k, 2) == 0.0);

  const auto imputed = mmgf_forward(p, "g", constants(tape, maps), mask, tape.constant(other[2]));
  CHECK(imputed.mixing.value().at(0, 2) > 0.0);
  CHECK_THROWS_AS(mmgf_forward(p, "g", constants(tape, maps), mask, tape.constant(Tensor({3, 1, 1, 1}))),
                  ShapeError);
}

TEST_CASE("mmgf end-to-end gradient") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store;
    CounterRng rng(seed);
    add_mmgf_params(store, "g", 3, rng, 0.3);
    for (std::size_t m = 0; m < 4; ++m)
      store.add("map" + std::to_string(m), random_tensor({3, 2, 2, 2}, 500 + seed * 4 + m));
    // With two modalities the mixing matrix is doubly stochastic, so alpha has
    // no effect wherever phi is affine; three or more keep every gradient live.
    const ModalityMask mask = enumerate_masks()[10 + seed % 5];
    const auto report = grad_check(
        [&](Tape& tape, ParamStore& s) {
          ParamBinding p(tape, s);
          std::vector<Var> maps;
          for (std::size_t m = 0; m < 4; ++m) maps.push_back(p("map" + std::to_string(m)));
          const auto out = mmgf_forward(p, "g", maps, mask);
          return sum(mul(out.fused, out.fused));
        },
        store, {1e-6, 0, seed, true});
    CHECK(report.max_relative_error < 1e-4);
  }
}
