#include "d3seg/training.hpp"

#include "d3seg/ops.hpp"
#include "d3seg/volume_io.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace d3seg {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& store, const ParamBinding::Filter& trainable) {
  if (m_.size() < store.size()) {
    m_.resize(store.size());
    v_.resize(store.size());
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    if (trainable && !trainable(e.name)) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.empty()) {
      m.assign(e.value.size(), 0.0);
      v.assign(e.value.size(), 0.0);
    }
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double g = e.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      e.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

double learning_rate(const RunConfig& c, Phase phase) {
  switch (phase) {
    case Phase::Segmentation: return c.learning_rate;
    case Phase::Diffusion: return c.lr_diffusion;
    case Phase::Refinement: return c.lr_refine;
  }
  return c.learning_rate;
}

std::size_t epochs(const RunConfig& c, Phase phase) {
  switch (phase) {
    case Phase::Segmentation: return c.epochs_seg;
    case Phase::Diffusion: return c.epochs_diffusion;
    case Phase::Refinement: return c.epochs_refine;
  }
  return 0;
}

void log_epoch(std::ostream* log, Phase phase, std::size_t epoch, std::size_t total, double loss,
               std::chrono::steady_clock::time_point start) {
  if (!log) return;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  *log << phase_name(phase) << " epoch " << epoch + 1 << "/" << total << " loss " << loss << " ("
       << secs << " s)\n";
  log->flush();
}

PhaseReport train_diffusion(Model& model, const RunConfig& config,
                            std::span<const PhantomSample> samples, std::ostream* log) {
  PhaseReport report{Phase::Diffusion, {}};
  std::vector<Tensor> latents;
  for (const auto& s : samples) latents.push_back(t1ce_latent(model, s.modalities));
  fit_latent_normalization(model.params, latents);
  for (auto& z : latents) z = normalize_latent(model.params, z);

  const NoiseSchedule sched = make_schedule(config.diffusion_steps);
  CounterRng rng = CounterRng(config.seed).fork(static_cast<std::uint64_t>(Phase::Diffusion) + 1);
  Adam adam(config.lr_diffusion);
  const auto filter = phase_filter(Phase::Diffusion);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t total = config.epochs_diffusion;
  for (std::size_t epoch = 0; epoch < total; ++epoch) {
    const auto order = shuffled(latents.size(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<Tensor> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(latents[order[i]]);
      }
      sum += train_diffusion_step(batch, model.params, model.den, sched, rng.next_u64());
      adam.step(model.params, filter);
      ++batches;
    }
    report.epoch_loss.push_back(sum / static_cast<double>(batches));
    log_epoch(log, Phase::Diffusion, epoch, total, report.epoch_loss.back(), start);
  }
  return report;
}

}  // namespace

PhaseReport train_phase(Model& model, const RunConfig& config, Phase phase,
                        std::span<const PhantomSample> samples, std::ostream* log,
                        const EpochHook& on_epoch) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("train_phase: no training samples");
  if (phase == Phase::Diffusion) return train_diffusion(model, config, samples, log);

  PhaseReport report{phase, {}};
  const auto masks = enumerate_masks();
  const NoiseSchedule sched = make_schedule(config.diffusion_steps);
  CounterRng rng = CounterRng(config.seed).fork(static_cast<std::uint64_t>(phase) + 1);
  Adam adam(learning_rate(config, phase));
  const auto filter = phase_filter(phase);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t total = epochs(config, phase);

  for (std::size_t epoch = 0; epoch < total; ++epoch) {
    const auto order = shuffled(samples.size(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - b);
      const ModalityMask mask = config.mask_curriculum == "full"
                                    ? ModalityMask::full()
                                    : masks[rng.below(masks.size())];
      model.params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        const std::uint64_t augment_seed = rng.next_u64();
        const std::uint64_t impute_seed = rng.next_u64();
        const PhantomSample sample =
            config.augment ? augment(samples[order[i]], augment_seed) : samples[order[i]];
        ForwardOptions options;
        if (phase == Phase::Refinement && !mask.has(Modality::T1ce)) {
          options.imputed_t1ce =
              sample_latent(model.params, model.den, sched, config.sampling_steps, impute_seed);
        }
        Tape tape;
        ParamBinding p(tape, model.params, filter);
        const LossTerms terms = total_loss(p, model, sample, mask, phase, sched, std::nullopt,
                                           config.lambda_e, options);
        tape.backward(scale(terms.total, weight));
        batch_loss += weight * terms.total.value()[0];
      }
      adam.step(model.params, filter);
      sum += batch_loss;
      ++batches;
    }
    report.epoch_loss.push_back(sum / static_cast<double>(batches));
    log_epoch(log, phase, epoch, total, report.epoch_loss.back(), start);
    if (on_epoch) on_epoch(epoch, model);
  }
  return report;
}

void write_loss_csv(const std::filesystem::path& path, const PhaseReport& report) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot write " + path.string());
  out << "phase,epoch,loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    out << phase_name(report.phase) << "," << e << "," << report.epoch_loss[e] << "\n";
  }
  if (!out) throw FormatError(FormatErrorKind::Io, "write failed: " + path.string());
}

std::vector<PhantomSample> generate_corpus(std::uint64_t first_seed, std::size_t count,
                                           std::size_t size) {
  std::vector<PhantomSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_phantom(first_seed + i, size));
  return out;
}

}  // namespace d3seg
