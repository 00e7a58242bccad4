#pragma once

#include "d3seg/diffusion.hpp"
#include "d3seg/network.hpp"

#include <cstdint>
#include <optional>
#include <string_view>

namespace d3seg {

enum class Phase { Segmentation, Diffusion, Refinement };

/// "seg", "diffusion", "refine".
std::string_view phase_name(Phase phase);
Phase parse_phase(std::string_view name);

/// Which parameters a phase updates: segmentation network (enc, mmgf, mix, dec),
/// denoiser (den, minus normalisation constants), or refinement (egdr).
bool phase_trains(Phase phase, std::string_view param_name);
ParamBinding::Filter phase_filter(Phase phase);

/// Segmentation network, latent denoiser and refinement head in one store.
struct Model {
  NetworkConfig net;
  DenoiserConfig den;
  ParamStore params;
};

Model make_model(const NetworkConfig& net, std::uint64_t seed);

/// Bottleneck of the T1ce encoder for one sample, in feature space.
Tensor t1ce_latent(const Model& model, const Tensor& modalities);

struct RefinedOutput {
  Var logits;   // initial segmentation logits (gradient stopped)
  Var probs;    // softmax of logits
  Var error;    // predicted error likelihood [S, S, S]
  Var refined;  // redistributed probabilities
};

/// Network forward, then the refinement head on the stopped-gradient logits.
RefinedOutput refine_forward(ParamBinding& p, const Model& model, const Tensor& modalities,
                             const ModalityMask& mask, const ForwardOptions& options = {});

/// Per-phase objective and its parts.
struct LossTerms {
  Var total;
  double dice_ce = 0.0;
  double bce = 0.0;
  double mse = 0.0;
};

struct DiffusionDraw {
  std::size_t t = 1;
  Tensor eps;
};

inline constexpr double kDefaultLambdaE = 0.5;

/// seg: dice_ce(initial logits). diffusion: latent MSE of the normalised T1ce
/// latent at (draw.t, draw.eps). refine: dice_ce(refined) + lambda_e * BCE(e, error_target).
LossTerms total_loss(ParamBinding& p, const Model& model, const PhantomSample& sample,
                     const ModalityMask& mask, Phase phase, const NoiseSchedule& sched,
                     const std::optional<DiffusionDraw>& draw = std::nullopt,
                     double lambda_e = kDefaultLambdaE, const ForwardOptions& options = {});

struct InferenceOptions {
  bool use_mmgf = true;
  bool use_egdr = true;
  bool use_imputation = true;
  std::size_t diffusion_steps = 64;
  std::size_t sampling_steps = 16;
  /// Seed of the DDIM noise for this sample.
  std::uint64_t imputation_seed = 0;
};

struct Prediction {
  Tensor probs;   // [4, S, S, S], refined when EGDR is on
  Tensor labels;  // [S, S, S]
  bool imputed = false;
};

Prediction predict(const Model& model, const Tensor& modalities, const ModalityMask& mask,
                   const InferenceOptions& options);

}  // namespace d3seg
