#pragma once

#include "d3seg/autodiff.hpp"
#include "d3seg/phantom.hpp"
#include "d3seg/rng.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>

namespace d3seg {

// Multi-hop modality graph fusion.
//
// Modality embeddings h_m = GAP(feature map m) give a cosine adjacency A over the
// available modalities. Hop logits sum_k alpha_k A^k (k = 1..3, matrix powers)
// are normalised row-wise over available columns into mixing weights A_hat.
// Each available modality i then receives phi(sum_j A_hat[i,j] F_j) at every
// voxel, and the fused map is the mean of those streams.

inline constexpr std::size_t kHopCount = 3;
inline constexpr std::array<double, kHopCount> kInitialHopWeights{1.0, 0.5, 0.25};

using Availability = std::array<bool, kModalityCount>;

/// <prefix>.alpha [3], <prefix>.phi1.{w [C,C], b [C]}, <prefix>.phi2.{w, b}.
/// Both phi layers start at the identity; phi2 gets U(-phi_noise, phi_noise) on top.
void add_mmgf_params(ParamStore& store, const std::string& prefix, std::size_t channels,
                     CounterRng& rng, double phi_noise = 0.01);

/// Cosine adjacency [4, 4] of embeddings H [4, C]. Rows and columns of
/// unavailable modalities are 0; available diagonals are exactly 1. An available
/// modality with a zero-norm embedding gets an all-zero row/column and a warning.
Tensor build_adjacency(const Tensor& embeddings, std::span<const bool> available);
Var build_adjacency(Var embeddings, std::span<const bool> available);

/// softmax_rows(sum_k alpha_k A^k) restricted to available columns.
Tensor multi_hop_mix(const Tensor& adjacency, const Tensor& alpha, std::span<const bool> available);
Var multi_hop_mix(Var adjacency, Var alpha, std::span<const bool> available);

/// maps: 4 tensors [C, ...]; returns the mean over available i of phi(sum_j A_hat[i,j] maps[j]).
Var fuse_maps(ParamBinding& p, const std::string& prefix, std::span<const Var> maps, Var mixing,
              std::span<const bool> available);

struct MmgfOutput {
  Var fused;
  Var adjacency;
  Var mixing;
};

/// Full fusion at one level. When `imputed_t1ce` is given and T1ce is absent
/// from the mask, it stands in for the T1ce map and T1ce counts as available.
MmgfOutput mmgf_forward(ParamBinding& p, const std::string& prefix, std::span<const Var> maps,
                        const ModalityMask& mask, std::optional<Var> imputed_t1ce = std::nullopt);

/// Mean over available modalities; the fallback used when graph fusion is off.
Var masked_mean(std::span<const Var> maps, std::span<const bool> available);

}  // namespace d3seg
