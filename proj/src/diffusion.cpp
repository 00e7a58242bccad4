#include "d3seg/diffusion.hpp"

#include "d3seg/ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace d3seg {

namespace {

void check_t(std::size_t t, const NoiseSchedule& s) {
  if (t > s.steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.steps) + "]");
  }
}

/// a * x + b * y elementwise.
Tensor axpby(double a, const Tensor& x, double b, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(x.shape()) + " and " +
                     to_string(y.shape()) + " differ");
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

bool is_normalization_param(std::string_view name) {
  return name == "den.latent_shift" || name == "den.latent_scale";
}

}  // namespace

NoiseSchedule make_schedule(std::size_t steps) {
  if (steps < kMinDiffusionSteps || steps > kMaxDiffusionSteps) {
    throw std::invalid_argument("diffusion steps must be in [" +
                                std::to_string(kMinDiffusionSteps) + ", " +
                                std::to_string(kMaxDiffusionSteps) + "], got " +
                                std::to_string(steps));
  }
  NoiseSchedule s{steps, std::vector<double>(steps + 1), std::vector<double>(steps + 1)};
  for (std::size_t t = 0; t <= steps; ++t) {
    const double angle = static_cast<double>(t) / static_cast<double>(steps) * std::numbers::pi / 2;
    s.alpha[t] = std::cos(angle);
    s.sigma[t] = std::sin(angle);
  }
  s.alpha[0] = 1.0;
  s.sigma[0] = 0.0;
  s.alpha[steps] = 0.0;
  s.sigma[steps] = 1.0;
  return s;
}

Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
  check_t(t, s);
  return axpby(s.alpha[t], z0, s.sigma[t], eps, "forward_diffuse");
}

Tensor v_target(const Tensor& z0, const Tensor& eps, std::size_t t, const NoiseSchedule& s) {
  check_t(t, s);
  return axpby(s.alpha[t], eps, -s.sigma[t], z0, "v_target");
}

std::pair<Tensor, Tensor> recover(const Tensor& z_t, const Tensor& v_hat, std::size_t t,
                                  const NoiseSchedule& s) {
  check_t(t, s);
  return {axpby(s.alpha[t], z_t, -s.sigma[t], v_hat, "recover"),
          axpby(s.sigma[t], z_t, s.alpha[t], v_hat, "recover")};
}

Tensor ddim_step(const Tensor& z_t, const Tensor& v_hat, std::size_t t, std::size_t t_prev,
                 const NoiseSchedule& s) {
  if (t_prev >= t) {
    throw std::invalid_argument("ddim_step: t_prev " + std::to_string(t_prev) +
                                " must be below t " + std::to_string(t));
  }
  auto [z0_hat, eps_hat] = recover(z_t, v_hat, t, s);
  return axpby(s.alpha[t_prev], z0_hat, s.sigma[t_prev], eps_hat, "ddim_step");
}

std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t n) {
  if (n == 0 || n > total) {
    throw std::invalid_argument("sampling steps must be in [1, " + std::to_string(total) +
                                "], got " + std::to_string(n));
  }
  std::vector<std::size_t> ts(n + 1);
  for (std::size_t i = 0; i <= n; ++i) ts[i] = total * (n - i) / n;
  return ts;
}

Tensor timestep_embedding(std::size_t t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep embedding dim must be even");
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

void DenoiserConfig::validate() const {
  if (latent_shape.size() != 4) {
    throw ShapeError("denoiser: latent shape must be [C, s, s, s], got " + to_string(latent_shape));
  }
  if (heads == 0 || channels() % heads != 0 || channels() % 2 != 0) {
    throw std::invalid_argument("denoiser: width " + std::to_string(channels()) +
                                " must be even and divisible by " + std::to_string(heads) +
                                " heads");
  }
}

void add_denoiser_params(ParamStore& store, const DenoiserConfig& cfg, CounterRng& rng) {
  cfg.validate();
  const std::size_t d = cfg.channels();
  store.add("den.in.w", fan_in_uniform({d, d}, d, rng));
  store.add("den.in.b", Tensor({d}, 0.0));
  store.add("den.pos", Tensor({cfg.tokens(), d}, 0.0));
  for (std::size_t b = 0; b < kDenoiserBlocks; ++b) {
    add_attention_params(store, "den.b" + std::to_string(b), d, rng);
  }
  store.add("den.out.w", fan_in_uniform({d, d}, d, rng, 0.5));
  store.add("den.out.b", Tensor({d}, 0.0));
  store.add("den.latent_shift", Tensor({1}, 0.0));
  store.add("den.latent_scale", Tensor({1}, 1.0));
}

bool is_denoiser_trainable(std::string_view name) {
  return name.starts_with("den.") && !is_normalization_param(name);
}

Var denoise(ParamBinding& p, const DenoiserConfig& cfg, Var z_t, std::size_t t) {
  if (z_t.shape() != cfg.latent_shape) {
    throw ShapeError("denoise: latent " + to_string(z_t.shape()) + " does not match " +
                     to_string(cfg.latent_shape));
  }
  const std::size_t d = cfg.channels();
  Tape& tape = p.tape();
  Var tokens = transpose(reshape(z_t, {d, cfg.tokens()}));
  Var x = add(dense(p, "den.in", tokens), p("den.pos"));
  x = add_row_bias(x, tape.constant(timestep_embedding(t, d)));
  for (std::size_t b = 0; b < kDenoiserBlocks; ++b) {
    x = attention_block(p, "den.b" + std::to_string(b), x, cfg.heads).out;
  }
  return reshape(transpose(dense(p, "den.out", x)), cfg.latent_shape);
}

Tensor normalize_latent(const ParamStore& store, const Tensor& latent) {
  const double shift = store.value("den.latent_shift")[0];
  const double scale = store.value("den.latent_scale")[0];
  Tensor out(latent.shape());
  for (std::size_t i = 0; i < latent.size(); ++i) out[i] = (latent[i] - shift) / scale;
  return out;
}

Tensor denormalize_latent(const ParamStore& store, const Tensor& z) {
  const double shift = store.value("den.latent_shift")[0];
  const double scale = store.value("den.latent_scale")[0];
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * scale + shift;
  return out;
}

void fit_latent_normalization(ParamStore& store, std::span<const Tensor> latents) {
  if (latents.empty()) throw std::invalid_argument("fit_latent_normalization: no latents");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& z : latents) {
    for (double v : z.data()) total += v;
    count += z.size();
  }
  const double mean = total / static_cast<double>(count);
  double var = 0.0;
  for (const auto& z : latents) {
    for (double v : z.data()) var += (v - mean) * (v - mean);
  }
  const double stddev = std::sqrt(var / static_cast<double>(count));
  store.value("den.latent_shift")[0] = mean;
  store.value("den.latent_scale")[0] = stddev > 1e-12 ? stddev : 1.0;
}

Var diffusion_loss(ParamBinding& p, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                   const Tensor& z0, std::size_t t, const Tensor& eps, const DenoiserGraph& graph) {
  Tape& tape = p.tape();
  Var z_t = tape.constant(forward_diffuse(z0, t, eps, sched));
  Var target = tape.constant(v_target(z0, eps, t, sched));
  Var v_hat = graph ? graph(p, z_t, t) : denoise(p, cfg, z_t, t);
  return mean(square(sub(v_hat, target)));
}

Tensor standard_normal(const Shape& shape, CounterRng& rng) {
  Tensor out(shape);
  for (auto& v : out.data()) v = rng.normal();
  return out;
}

double train_diffusion_step(std::span<const Tensor> z0_batch, ParamStore& store,
                            const DenoiserConfig& cfg, const NoiseSchedule& sched,
                            std::uint64_t seed) {
  if (z0_batch.empty()) throw std::invalid_argument("train_diffusion_step: empty batch");
  store.zero_grad();
  Tape tape;
  ParamBinding p(tape, store, is_denoiser_trainable);
  CounterRng rng(seed);
  std::vector<Var> losses;
  for (const auto& z0 : z0_batch) {
    const std::size_t t = 1 + rng.below(sched.steps);
    const Tensor eps = standard_normal(z0.shape(), rng);
    losses.push_back(diffusion_loss(p, cfg, sched, z0, t, eps));
  }
  const std::vector<double> weights(losses.size(), 1.0 / static_cast<double>(losses.size()));
  Var loss = weighted_sum(losses, weights);
  tape.backward(loss);
  return loss.value()[0];
}

Tensor sample_latent(const VelocityFn& velocity, const Shape& shape, const NoiseSchedule& sched,
                     std::size_t steps, std::uint64_t seed) {
  const auto ts = ddim_timesteps(sched.steps, steps);
  CounterRng rng(seed);
  Tensor z = standard_normal(shape, rng);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    z = ddim_step(z, velocity(z, ts[i]), ts[i], ts[i + 1], sched);
  }
  return z;
}

Tensor sample_latent(const ParamStore& store, const DenoiserConfig& cfg,
                     const NoiseSchedule& sched, std::size_t steps, std::uint64_t seed) {
  auto velocity = [&](const Tensor& z, std::size_t t) {
    Tape tape;
    ParamBinding p(tape, store);
    return denoise(p, cfg, tape.constant(z), t).value();
  };
  return denormalize_latent(store, sample_latent(velocity, cfg.latent_shape, sched, steps, seed));
}

}  // namespace d3seg
