#pragma once

#include "d3seg/config.hpp"
#include "d3seg/model.hpp"

#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

namespace d3seg {

/// Adam with bias correction. Moment buffers are indexed by store position.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Updates the parameters accepted by `trainable` from their accumulated grads.
  void step(ParamStore& store, const ParamBinding::Filter& trainable);
  std::size_t steps() const noexcept { return steps_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct PhaseReport {
  Phase phase = Phase::Segmentation;
  /// Mean batch loss per epoch.
  std::vector<double> epoch_loss;
};

/// Runs one training phase in place. Fully determined by (model state, config, samples).
/// seg and refine draw one of the 15 modality masks per batch ("uniform"
/// curriculum); refine imputes the T1ce latent whenever the mask lacks T1ce.
/// The diffusion phase first fits the latent normalisation to the training set.
/// Called after every segmentation or refinement epoch with the updated model.
using EpochHook = std::function<void(std::size_t epoch, const Model& model)>;

PhaseReport train_phase(Model& model, const RunConfig& config, Phase phase,
                        std::span<const PhantomSample> samples, std::ostream* log = nullptr,
                        const EpochHook& on_epoch = {});

void write_loss_csv(const std::filesystem::path& path, const PhaseReport& report);

/// gen_phantom(first_seed + i, size) for i in [0, count).
std::vector<PhantomSample> generate_corpus(std::uint64_t first_seed, std::size_t count,
                                           std::size_t size);

}  // namespace d3seg
