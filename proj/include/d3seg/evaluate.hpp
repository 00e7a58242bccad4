#pragma once

#include "d3seg/losses.hpp"
#include "d3seg/model.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace d3seg {

using RegionScores = std::array<double, kRegions.size()>;

struct EvalOptions {
  bool use_mmgf = true;
  bool use_imputation = true;
  bool use_egdr = true;
  std::size_t diffusion_steps = 64;
  std::size_t sampling_steps = 16;
  /// Sample i draws its imputation noise from CounterRng(seed).fork(i).
  std::uint64_t seed = 0;
};

/// Mean WT/TC/ET Dice over the test set under one mask.
RegionScores evaluate_mask(const Model& model, std::span<const PhantomSample> test,
                           const ModalityMask& mask, const EvalOptions& options);

struct DiceTable {
  std::vector<ModalityMask> masks;
  std::vector<RegionScores> dice;
};

/// All 15 masks in enumerate_masks() order.
DiceTable evaluate_all(const Model& model, std::span<const PhantomSample> test,
                       const EvalOptions& options);

struct AblationRow {
  std::string name;
  RegionScores dice;
};

/// Cumulative mechanisms under one mask: baseline fusion, +MMGF, +diffusion
/// imputation, +EGDR.
std::vector<AblationRow> evaluate_ablation(const Model& model, std::span<const PhantomSample> test,
                                           const ModalityMask& mask, const EvalOptions& options);

/// "config,WT,TC,ET" then one row per mask.
std::string table_csv(const DiceTable& table);
std::string table_text(const DiceTable& table);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows, const ModalityMask& mask);

}  // namespace d3seg
