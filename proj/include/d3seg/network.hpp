#pragma once

#include "d3seg/attention.hpp"
#include "d3seg/mmgf.hpp"
#include "d3seg/phantom.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace d3seg {

struct NetworkConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::size_t class_count = kClassCount;
  std::size_t input_size = 32;
  std::size_t heads = 4;

  /// Throws std::invalid_argument on an inconsistent ladder.
  void validate() const;
  std::size_t channels(std::size_t level) const { return base_channels << level; }
  std::size_t extent(std::size_t level) const { return input_size >> level; }
  /// Bottleneck feature shape [C_L, s, s, s].
  Shape latent_shape() const;
};

/// Feature maps of one modality, levels[0..L]; levels[L] is the bottleneck.
struct EncoderFeatures {
  std::vector<Var> levels;
  Var bottleneck() const { return levels.back(); }
};

using ModalityFeatures = std::array<EncoderFeatures, kModalityCount>;

/// Conv kernel [out, in, k, k, k] ~ U(+-sqrt(6 / fan_in)) and zero bias [out].
void add_conv_params(ParamStore& store, const std::string& prefix, std::size_t in,
                     std::size_t out, std::size_t kernel, CounterRng& rng);

/// Encoders enc<m>.*, fusion mmgf.l<L-1>.* / mmgf.l<L>.*, bottleneck mixer mix.*, decoder dec.*.
void add_network_params(ParamStore& store, const NetworkConfig& cfg, CounterRng& rng);

/// conv3d + bias with "same" padding.
Var conv_layer(ParamBinding& p, const std::string& prefix, Var x, int stride = 1,
               int dilation = 1);

/// volume [1, S, S, S] -> L+1 levels; level l has C_l channels at S / 2^l.
EncoderFeatures encode(ParamBinding& p, const NetworkConfig& cfg, Var volume,
                       std::size_t modality);

/// Zero every level of masked modalities. A supplied imputed latent replaces the
/// T1ce bottleneck when T1ce is masked; its other levels stay zero.
ModalityFeatures apply_modality_mask(const ModalityFeatures& features, const ModalityMask& mask,
                                     std::optional<Var> imputed_t1ce = std::nullopt);

/// One 4-head self-attention block over the s^3 bottleneck tokens.
AttentionOutput bottleneck_mix(ParamBinding& p, const NetworkConfig& cfg, Var bottleneck);

/// skips: fused maps for levels 0..L-1; bottleneck: [C_L, s, s, s]. Returns logits [4, S, S, S].
Var decode(ParamBinding& p, const NetworkConfig& cfg, std::span<const Var> skips, Var bottleneck);

struct ForwardOptions {
  bool use_mmgf = true;
  /// T1ce bottleneck substitute, used only when the mask lacks T1ce.
  std::optional<Tensor> imputed_t1ce;
};

struct ForwardResult {
  Var logits;
  /// Fused maps per level, 0..L (level L before the attention mixer).
  std::vector<Var> fused;
  /// MMGF mixing weights at levels L-1 and L (empty without MMGF).
  std::vector<Tensor> mixing;
};

/// modalities [4, S, S, S]. Masked modalities are never encoded; their features
/// are zero constants, which is what masking would produce.
ForwardResult forward(ParamBinding& p, const NetworkConfig& cfg, const Tensor& modalities,
                      const ModalityMask& mask, const ForwardOptions& options = {});

}  // namespace d3seg
