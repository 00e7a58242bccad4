#include "d3seg/model.hpp"

#include "d3seg/egdr.hpp"
#include "d3seg/losses.hpp"
#include "d3seg/ops.hpp"

#include <stdexcept>

namespace d3seg {

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::Segmentation: return "seg";
    case Phase::Diffusion: return "diffusion";
    case Phase::Refinement: return "refine";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  for (Phase p : {Phase::Segmentation, Phase::Diffusion, Phase::Refinement}) {
    if (phase_name(p) == name) return p;
  }
  throw std::invalid_argument("unknown phase '" + std::string(name) +
                              "' (expected seg, diffusion or refine)");
}

bool phase_trains(Phase phase, std::string_view name) {
  switch (phase) {
    case Phase::Segmentation:
      return name.starts_with("enc") || name.starts_with("mmgf.") || name.starts_with("mix.") ||
             name.starts_with("dec.");
    case Phase::Diffusion: return is_denoiser_trainable(name);
    case Phase::Refinement: return name.starts_with("egdr.");
  }
  return false;
}

ParamBinding::Filter phase_filter(Phase phase) {
  return [phase](std::string_view name) { return phase_trains(phase, name); };
}

Model make_model(const NetworkConfig& net, std::uint64_t seed) {
  net.validate();
  Model model{net, DenoiserConfig{net.latent_shape(), net.heads}, {}};
  CounterRng rng(seed);
  CounterRng net_rng = rng.fork(1);
  add_network_params(model.params, net, net_rng);
  CounterRng den_rng = rng.fork(2);
  add_denoiser_params(model.params, model.den, den_rng);
  CounterRng egdr_rng = rng.fork(3);
  add_egdr_params(model.params, net.class_count, egdr_rng);
  return model;
}

Tensor t1ce_latent(const Model& model, const Tensor& modalities) {
  const std::size_t s = model.net.input_size;
  const std::size_t volume = s * s * s;
  if (modalities.size() != kModalityCount * volume) {
    throw ShapeError("t1ce_latent: modalities " + to_string(modalities.shape()) +
                     " do not match input size " + std::to_string(s));
  }
  constexpr auto t1ce = static_cast<std::size_t>(Modality::T1ce);
  const auto src = modalities.data().subspan(t1ce * volume, volume);
  Tape tape;
  ParamBinding p(tape, model.params);
  Var input = tape.constant(Tensor({1, s, s, s}, std::vector<double>(src.begin(), src.end())));
  return encode(p, model.net, input, t1ce).bottleneck().value();
}

RefinedOutput refine_forward(ParamBinding& p, const Model& model, const Tensor& modalities,
                             const ModalityMask& mask, const ForwardOptions& options) {
  RefinedOutput out;
  out.logits = stop_gradient(forward(p, model.net, modalities, mask, options).logits);
  out.probs = channel_softmax(out.logits);
  out.error = predict_error(p, out.logits);
  out.refined = redistribute(out.probs, out.error, transfer_weight_et(p), transfer_weight_ed(p));
  return out;
}

LossTerms total_loss(ParamBinding& p, const Model& model, const PhantomSample& sample,
                     const ModalityMask& mask, Phase phase, const NoiseSchedule& sched,
                     const std::optional<DiffusionDraw>& draw, double lambda_e,
                     const ForwardOptions& options) {
  LossTerms terms;
  switch (phase) {
    case Phase::Segmentation: {
      terms.total = dice_ce_loss(forward(p, model.net, sample.modalities, mask, options).logits,
                                 sample.labels);
      terms.dice_ce = terms.total.value()[0];
      break;
    }
    case Phase::Diffusion: {
      if (!draw) throw std::invalid_argument("total_loss: diffusion phase needs a (t, eps) draw");
      const Tensor z0 = normalize_latent(model.params, t1ce_latent(model, sample.modalities));
      terms.total = diffusion_loss(p, model.den, sched, z0, draw->t, draw->eps);
      terms.mse = terms.total.value()[0];
      break;
    }
    case Phase::Refinement: {
      const RefinedOutput r = refine_forward(p, model, sample.modalities, mask, options);
      Var seg = dice_ce_from_probs(r.refined, sample.labels);
      Var bce = bce_loss(r.error, error_target(r.logits.value(), sample.labels));
      terms.dice_ce = seg.value()[0];
      terms.bce = bce.value()[0];
      const std::array<Var, 2> parts{seg, bce};
      const std::array<double, 2> weights{1.0, lambda_e};
      terms.total = weighted_sum(parts, weights);
      break;
    }
  }
  return terms;
}

Prediction predict(const Model& model, const Tensor& modalities, const ModalityMask& mask,
                   const InferenceOptions& options) {
  Prediction out;
  ForwardOptions forward_options;
  forward_options.use_mmgf = options.use_mmgf;
  if (options.use_imputation && !mask.has(Modality::T1ce)) {
    const NoiseSchedule sched = make_schedule(options.diffusion_steps);
    forward_options.imputed_t1ce = sample_latent(model.params, model.den, sched,
                                                 options.sampling_steps, options.imputation_seed);
    out.imputed = true;
  }
  Tape tape;
  ParamBinding p(tape, model.params);
  if (options.use_egdr) {
    out.probs = refine_forward(p, model, modalities, mask, forward_options).refined.value();
  } else {
    out.probs = channel_softmax(forward(p, model.net, modalities, mask, forward_options).logits.value());
  }
  out.labels = argmax_labels(out.probs);
  return out;
}

}  // namespace d3seg
