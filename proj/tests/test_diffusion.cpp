#include "d3seg/diffusion.hpp"
#include "d3seg/grad_check.hpp"
#include "d3seg/training.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace d3seg;
using d3seg::test::random_tensor;

namespace {

constexpr double kHalfSqrt2 = std::numbers::sqrt2 / 2;

DenoiserConfig tiny_denoiser() { return DenoiserConfig{{8, 2, 2, 2}, 4}; }

ParamStore denoiser_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  CounterRng rng(seed);
  add_denoiser_params(store, cfg, rng);
  return store;
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  const auto s = make_schedule(64);
  CHECK(s.alpha[0] == 1.0);
  CHECK(s.sigma[0] == 0.0);
  CHECK(s.alpha[64] == 0.0);
  CHECK(s.sigma[64] == 1.0);
  CHECK(std::abs(s.alpha[32] - kHalfSqrt2) < 1e-15);
  CHECK(std::abs(s.sigma[32] - kHalfSqrt2) < 1e-15);
  for (std::size_t steps : {8, 64, 1000, 1024}) {
    const auto sc = make_schedule(steps);
    for (std::size_t t = 0; t <= steps; ++t) {
      CHECK(std::abs(sc.alpha[t] * sc.alpha[t] + sc.sigma[t] * sc.sigma[t] - 1.0) < 1e-12);
      if (t > 0) CHECK(sc.alpha[t] < sc.alpha[t - 1]);
    }
  }
  CHECK_THROWS(make_schedule(4));
  CHECK_THROWS(make_schedule(2048));
}

TEST_CASE("forward diffusion and velocity target examples") {
  const auto s = make_schedule(64);
  const Tensor z0 = random_tensor({2, 3}, 1);
  const Tensor eps = random_tensor({2, 3}, 2);
  CHECK(bitwise_equal(forward_diffuse(z0, 0, eps, s), z0));
  CHECK(bitwise_equal(forward_diffuse(z0, 64, eps, s), eps));
  const Tensor half = forward_diffuse(Tensor({5}, 1.0), 32, Tensor({5}, 0.0), s);
  for (double v : half.data()) CHECK(std::abs(v - kHalfSqrt2) < 1e-15);

  CHECK(bitwise_equal(v_target(z0, eps, 0, s), eps));
  const Tensor v_end = v_target(z0, eps, 64, s);
  for (std::size_t i = 0; i < z0.size(); ++i) CHECK(v_end[i] == -z0[i]);
  const Tensor v_mid = v_target(z0, z0, 32, s);
  for (double v : v_mid.data()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("recover inverts forward diffusion") {
  const auto s = make_schedule(100);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor z0 = random_tensor({3, 2, 2, 2}, 10 + seed, -3, 3);
    const Tensor eps = random_tensor({3, 2, 2, 2}, 1000 + seed, -3, 3);
    const std::size_t t = seed % 101;
    const Tensor zt = forward_diffuse(z0, t, eps, s);
    const auto [z0_hat, eps_hat] = recover(zt, v_target(z0, eps, t, s), t, s);
    CHECK(max_abs_diff(z0_hat, z0) < 1e-12);
    CHECK(max_abs_diff(eps_hat, eps) < 1e-12);

    const Tensor v_any = random_tensor({3, 2, 2, 2}, 5000 + seed);
    const auto [z0_r, eps_r] = recover(zt, v_any, t, s);
    CHECK(max_abs_diff(forward_diffuse(z0_r, t, eps_r, s), zt) < 1e-12);
  }
  const Tensor zt = random_tensor({4}, 3);
  CHECK(bitwise_equal(recover(zt, random_tensor({4}, 4), 0, s).first, zt));
}

TEST_CASE("DDIM with the oracle velocity follows the forward trajectory") {
  const auto s = make_schedule(64);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor z0 = random_tensor({2, 2, 2, 2}, 7000 + seed, -2, 2);
    const Tensor eps = random_tensor({2, 2, 2, 2}, 8000 + seed, -2, 2);
    const std::size_t t = 1 + seed % 64;
    const std::size_t t_prev = seed % t;
    const Tensor next = ddim_step(forward_diffuse(z0, t, eps, s), v_target(z0, eps, t, s), t, t_prev, s);
    CHECK(max_abs_diff(next, forward_diffuse(z0, t_prev, eps, s)) < 1e-12);
    const Tensor last = ddim_step(forward_diffuse(z0, t, eps, s), v_target(z0, eps, t, s), t, 0, s);
    CHECK(max_abs_diff(last, z0) < 1e-12);
  }
  CHECK_THROWS(ddim_step(Tensor({1}), Tensor({1}), 5, 5, s));
}

TEST_CASE("DDIM trajectory is step-count invariant under the oracle") {
  const auto s = make_schedule(64);
  const Shape shape{2, 2, 2, 2};
  const Tensor z0 = random_tensor(shape, 11, -2, 2);
  auto final_latent = [&](std::size_t steps) {
    CounterRng rng(5);
    const Tensor eps = standard_normal(shape, rng);
    VelocityFn oracle = [&](const Tensor&, std::size_t t) { return v_target(z0, eps, t, s); };
    return sample_latent(oracle, shape, s, steps, 5);
  };
  const Tensor two = final_latent(2);
  CHECK(max_abs_diff(two, final_latent(4)) < 1e-12);
  CHECK(max_abs_diff(two, z0) < 1e-12);
  CHECK(max_abs_diff(final_latent(16), z0) < 1e-12);
}

TEST_CASE("DDIM timesteps and single-step sampling") {
  CHECK(ddim_timesteps(64, 4) == std::vector<std::size_t>{64, 48, 32, 16, 0});
  CHECK(ddim_timesteps(10, 3) == std::vector<std::size_t>{10, 6, 3, 0});
  CHECK_THROWS(ddim_timesteps(8, 9));
  const auto s = make_schedule(64);
  const Shape shape{3, 1, 1, 1};
  Tensor v_hat;
  VelocityFn v = [&](const Tensor& z, std::size_t t) {
    CHECK(t == 64);
    v_hat = Tensor(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) v_hat[i] = 0.5 * z[i] + 1.0;
    return v_hat;
  };
  const Tensor out = sample_latent(v, shape, s, 1, 3);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == -v_hat[i]);
}

TEST_CASE("timestep embedding") {
  const Tensor e0 = timestep_embedding(0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[4 + i] == 1.0);
  }
  const Tensor e = timestep_embedding(3, 8);
  CHECK(std::abs(e[0] - std::sin(3.0)) < 1e-15);
  CHECK(std::abs(e[5] - std::cos(3.0 * std::pow(10000.0, -0.25))) < 1e-15);
  CHECK_THROWS(timestep_embedding(1, 7));
}

TEST_CASE("denoiser output shape and timestep dependence") {
  const DenoiserConfig cfg = tiny_denoiser();
  const ParamStore store = denoiser_params(cfg, 1);
  Tape tape;
  ParamBinding p(tape, store);
  Var z = tape.constant(random_tensor(cfg.latent_shape, 2));
  const Var a = denoise(p, cfg, z, 5);
  const Var b = denoise(p, cfg, z, 40);
  CHECK(a.shape() == cfg.latent_shape);
  CHECK(!bitwise_equal(a.value(), b.value()));
  CHECK_THROWS((DenoiserConfig{{6, 2, 2, 2}, 4}.validate()));
}

TEST_CASE("diffusion loss: oracle, zero output and determinism") {
  const DenoiserConfig cfg = tiny_denoiser();
  ParamStore store = denoiser_params(cfg, 3);
  const auto s = make_schedule(64);
  const Tensor z0 = random_tensor(cfg.latent_shape, 4);
  const Tensor eps = random_tensor(cfg.latent_shape, 5);
  const std::size_t t = 20;
  const Tensor v = v_target(z0, eps, t, s);
  Tape tape;
  ParamBinding p(tape, store);
  const Var oracle = diffusion_loss(p, cfg, s, z0, t, eps,
                                    [&](ParamBinding& b, Var, std::size_t) { return b.tape().constant(v); });
  CHECK(oracle.value()[0] == 0.0);
  const Var zero = diffusion_loss(p, cfg, s, z0, t, eps, [&](ParamBinding& b, Var, std::size_t) {
    return b.tape().constant(Tensor(cfg.latent_shape));
  });
  double direct = 0.0;
  for (double x : v.data()) direct += x * x;
  CHECK(std::abs(zero.value()[0] - direct / static_cast<double>(v.size())) < 1e-14);

  const std::vector<Tensor> batch{z0, eps};
  const double l1 = train_diffusion_step(batch, store, cfg, s, 9);
  const Tensor g1 = store.grad("den.in.w");
  const double l2 = train_diffusion_step(batch, store, cfg, s, 9);
  CHECK(l1 == l2);
  CHECK(bitwise_equal(g1, store.grad("den.in.w")));
  CHECK(store.grad("den.latent_scale")[0] == 0.0);
}

TEST_CASE("denoiser plus MSE gradient") {
  const DenoiserConfig cfg = tiny_denoiser();
  const auto s = make_schedule(64);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore all = denoiser_params(cfg, seed);
    ParamStore store;
    for (const auto& e : all)
      if (is_denoiser_trainable(e.name)) store.add(e.name, e.value);
    const Tensor z0 = random_tensor(cfg.latent_shape, 100 + seed);
    const Tensor eps = random_tensor(cfg.latent_shape, 200 + seed);
    const auto report = grad_check(
        [&](Tape& tape, ParamStore& st) {
          ParamBinding p(tape, st);
          return diffusion_loss(p, cfg, s, z0, 1 + seed * 3, eps);
        },
        store, {1e-6, 4, seed, true});
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("latent normalisation round trip") {
  const DenoiserConfig cfg = tiny_denoiser();
  ParamStore store = denoiser_params(cfg, 6);
  const std::vector<Tensor> latents{random_tensor(cfg.latent_shape, 7, 2, 5),
                                    random_tensor(cfg.latent_shape, 8, 2, 5)};
  fit_latent_normalization(store, latents);
  const Tensor z = normalize_latent(store, latents[0]);
  CHECK(max_abs_diff(denormalize_latent(store, z), latents[0]) < 1e-12);
  double mean = 0.0;
  for (const auto& l : latents) {
    const Tensor n = normalize_latent(store, l);
    for (double v : n.data()) mean += v;
  }
  CHECK(std::abs(mean) < 1e-10);
}

TEST_CASE("sampling is deterministic and approaches an overfitted latent") {
  const DenoiserConfig cfg = tiny_denoiser();
  ParamStore store = denoiser_params(cfg, 10);
  const auto s = make_schedule(64);
  const Tensor target = random_tensor(cfg.latent_shape, 11, -1.5, 1.5);
  const std::vector<Tensor> batch{target, target, target, target};
  CHECK(bitwise_equal(sample_latent(store, cfg, s, 8, 1), sample_latent(store, cfg, s, 8, 1)));

  Adam adam(3e-3);
  std::vector<double> errors;
  std::size_t step = 0;
  for (std::size_t checkpoint : {0, 100, 400, 1200}) {
    for (; step < checkpoint; ++step) {
      train_diffusion_step(batch, store, cfg, s, step);
      adam.step(store, is_denoiser_trainable);
    }
    double err = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) err += mse(sample_latent(store, cfg, s, 8, seed), target);
    errors.push_back(err / 4);
  }
  for (std::size_t i = 1; i < errors.size(); ++i) CHECK(errors[i] < errors[i - 1]);
  CHECK(errors.back() < 0.1 * errors.front());
}
