#pragma once

#include "d3seg/autodiff.hpp"

#include <array>
#include <string_view>

namespace d3seg {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kBceClamp = 1e-7;

/// Throws std::invalid_argument unless every entry is one of 0, 1, 2, 3.
void validate_labels(const Tensor& labels);

/// 0.5 * mean soft Dice loss over classes 1..3 + 0.5 * voxel-mean cross-entropy.
/// probs [4, ...] must already be a distribution per voxel; labels [...].
Var dice_ce_from_probs(Var probs, const Tensor& labels);
/// dice_ce_from_probs(channel_softmax(logits), labels).
Var dice_ce_loss(Var logits, const Tensor& labels);

/// Voxel-mean binary cross-entropy with e clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Var error, const Tensor& target);

enum class Region { WT, TC, ET };
inline constexpr std::array<Region, 3> kRegions{Region::WT, Region::TC, Region::ET};

std::string_view region_name(Region r);
/// WT = {1, 2, 3}, TC = {1, 3}, ET = {3}.
bool in_region(int label, Region r);

/// 2|A n B| / (|A| + |B|) of the region masks; 1 when both are empty.
double region_dice(const Tensor& predicted, const Tensor& truth, Region r);

/// Index of the largest entry along the leading axis, first one on ties.
Tensor argmax_labels(const Tensor& scores);

}  // namespace d3seg
