#pragma once

#include "d3seg/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace d3seg {

enum class Modality : std::size_t { Flair = 0, T1 = 1, T1ce = 2, T2 = 3 };
inline constexpr std::size_t kModalityCount = 4;
inline constexpr std::size_t kClassCount = 4;

// Label ids.
inline constexpr int kBackground = 0;
inline constexpr int kNecrotic = 1;
inline constexpr int kEdema = 2;
inline constexpr int kEnhancing = 3;

/// Availability flags for (FLAIR, T1, T1ce, T2). At least one must be set.
class ModalityMask {
 public:
  ModalityMask(bool flair, bool t1, bool t1ce, bool t2);
  explicit ModalityMask(std::array<bool, kModalityCount> flags);
  static ModalityMask full() { return ModalityMask(true, true, true, true); }

  bool has(Modality m) const { return flags_[static_cast<std::size_t>(m)]; }
  bool operator[](std::size_t i) const { return flags_[i]; }
  std::size_t count() const;
  std::span<const bool> flags() const { return flags_; }
  ModalityMask without(Modality m) const;
  /// Table-style label, e.g. "F+T1c+T2".
  std::string label() const;

  friend bool operator==(const ModalityMask&, const ModalityMask&) = default;

 private:
  std::array<bool, kModalityCount> flags_;
};

std::string_view modality_name(Modality m);

/// All 15 non-empty subsets: singletons, pairs, triples, then the full set,
/// each group in lexicographic (FLAIR, T1, T1ce, T2) order.
std::vector<ModalityMask> enumerate_masks();

/// Parse a label produced by ModalityMask::label().
ModalityMask parse_mask(std::string_view label);

struct PhantomSample {
  Tensor modalities;  // [4, S, S, S], intensities in [0, 1]
  Tensor labels;      // [S, S, S], class ids 0..3 stored as reals
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.dim(0); }
  /// Single-channel volume [1, S, S, S] of one modality.
  Tensor modality(Modality m) const;
};

/// Mean intensity per (modality, class) before bias field and noise.
inline constexpr std::array<std::array<double, kClassCount>, kModalityCount> kContrastTable{{
    //  BG    NCR   ED    ET
    {{0.20, 0.50, 0.80, 0.60}},  // FLAIR
    {{0.50, 0.25, 0.45, 0.55}},  // T1
    {{0.45, 0.30, 0.50, 0.90}},  // T1ce
    {{0.30, 0.60, 0.75, 0.65}},  // T2
}};

inline constexpr double kPhantomNoiseSigma = 0.03;
inline constexpr double kPhantomMaxBias = 0.1;

/// Nested-ellipsoid tumour phantom. Whole tumour covers 5-25% of the volume and
/// enhancing tumour 10-40% of the tumour core. Pure function of (seed, size).
PhantomSample gen_phantom(std::uint64_t seed, std::size_t size);

// Spatial transforms on [C, S, S, S] volumes (cubic).
Tensor flip_axis(const Tensor& volume, std::size_t axis);
/// k quarter turns in the plane of spatial axes (a, b).
Tensor rotate90(const Tensor& volume, std::size_t a, std::size_t b, int k);

struct AugmentParams {
  std::array<bool, 3> flip{};
  std::size_t rotation_plane = 0;  // 0: (0,1), 1: (0,2), 2: (1,2)
  int quarter_turns = 0;
  std::array<double, kModalityCount> scale{1.0, 1.0, 1.0, 1.0};
  std::array<double, kModalityCount> shift{};
};

AugmentParams draw_augment_params(std::uint64_t seed);
PhantomSample apply_augment(const PhantomSample& sample, const AugmentParams& params);
/// Random flips (p = 0.5 per axis), a quarter-turn rotation, and per-modality
/// intensity scale in [0.9, 1.1] and shift in [-0.05, 0.05], clamped to [0, 1].
PhantomSample augment(const PhantomSample& sample, std::uint64_t seed);

/// Voxel count per class id.
std::array<std::size_t, kClassCount> label_histogram(const Tensor& labels);

}  // namespace d3seg
