#pragma once

#include "d3seg/attention.hpp"
#include "d3seg/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace d3seg {

/// Variance-preserving cosine schedule: alpha[t] = cos(t/T * pi/2), sigma[t] = sin(t/T * pi/2),
/// with exact endpoints alpha[T] = 0, sigma[T] = 1.
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> alpha;
  std::vector<double> sigma;

  std::size_t size() const { return steps; }
};

inline constexpr std::size_t kMinDiffusionSteps = 8;
inline constexpr std::size_t kMaxDiffusionSteps = 1024;

NoiseSchedule make_schedule(std::size_t steps);

/// z_t = alpha_t z0 + sigma_t eps
Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s);
/// v = alpha_t eps - sigma_t z0
Tensor v_target(const Tensor& z0, const Tensor& eps, std::size_t t, const NoiseSchedule& s);
/// (z0_hat, eps_hat) = (alpha_t z_t - sigma_t v, sigma_t z_t + alpha_t v)
std::pair<Tensor, Tensor> recover(const Tensor& z_t, const Tensor& v_hat, std::size_t t,
                                  const NoiseSchedule& s);
/// Deterministic DDIM update from t to t_prev < t.
Tensor ddim_step(const Tensor& z_t, const Tensor& v_hat, std::size_t t, std::size_t t_prev,
                 const NoiseSchedule& s);
/// Evenly spaced decreasing timesteps T = t_0 > ... > t_n = 0 (n + 1 entries).
std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t n);

/// Sinusoidal embedding [dim]: sin(t f_i) for the first half, cos(t f_i) for the second,
/// f_i = 10000^(-i / (dim/2)).
Tensor timestep_embedding(std::size_t t, std::size_t dim);

inline constexpr std::size_t kDenoiserBlocks = 3;

struct DenoiserConfig {
  Shape latent_shape;  // [C, s, s, s]
  std::size_t heads = 4;

  std::size_t channels() const { return latent_shape.at(0); }
  std::size_t tokens() const { return numel(latent_shape) / channels(); }
  void validate() const;
};

/// den.in.{w,b}, den.pos [N, C], den.b<i>.* (3 attention blocks), den.out.{w,b},
/// plus the latent normalisation den.latent_shift and den.latent_scale [1].
void add_denoiser_params(ParamStore& store, const DenoiserConfig& cfg, CounterRng& rng);

/// Parameters the diffusion phase optimises (normalisation constants excluded).
bool is_denoiser_trainable(std::string_view name);

/// Velocity prediction v_hat(z_t, t), same shape as z_t.
Var denoise(ParamBinding& p, const DenoiserConfig& cfg, Var z_t, std::size_t t);

/// Feature-space latent <-> the unit-scale space the denoiser works in.
Tensor normalize_latent(const ParamStore& store, const Tensor& latent);
Tensor denormalize_latent(const ParamStore& store, const Tensor& z);
/// Sets den.latent_shift / den.latent_scale to the mean and std of all entries.
void fit_latent_normalization(ParamStore& store, std::span<const Tensor> latents);

using DenoiserGraph = std::function<Var(ParamBinding&, Var z_t, std::size_t t)>;

/// MSE between the denoiser output on forward_diffuse(z0, t, eps) and v_target.
/// `graph` replaces the learned denoiser when given.
Var diffusion_loss(ParamBinding& p, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                   const Tensor& z0, std::size_t t, const Tensor& eps,
                   const DenoiserGraph& graph = {});

Tensor standard_normal(const Shape& shape, CounterRng& rng);

/// One stochastic objective evaluation over a batch of normalised latents:
/// t ~ U{1..T} and eps ~ N(0, I) per sample, drawn from `seed`. Gradients are
/// left in store.grad for the denoiser's trainable parameters.
double train_diffusion_step(std::span<const Tensor> z0_batch, ParamStore& store,
                            const DenoiserConfig& cfg, const NoiseSchedule& sched,
                            std::uint64_t seed);

using VelocityFn = std::function<Tensor(const Tensor& z_t, std::size_t t)>;

/// DDIM from z_T ~ N(0, I) (seeded) over `steps` evenly spaced timesteps.
Tensor sample_latent(const VelocityFn& velocity, const Shape& shape, const NoiseSchedule& sched,
                     std::size_t steps, std::uint64_t seed);
/// Same with the learned denoiser; the result is mapped back to feature space.
Tensor sample_latent(const ParamStore& store, const DenoiserConfig& cfg,
                     const NoiseSchedule& sched, std::size_t steps, std::uint64_t seed);

}  // namespace d3seg
