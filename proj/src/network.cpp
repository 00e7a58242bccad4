#include "d3seg/network.hpp"

#include "d3seg/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace d3seg {

namespace {

std::string encoder_prefix(std::size_t modality, std::size_t level) {
  return "enc" + std::to_string(modality) + ".l" + std::to_string(level);
}

std::string mmgf_prefix(std::size_t level) { return "mmgf.l" + std::to_string(level); }

Var zeros_like(Tape& tape, const Shape& shape) { return tape.constant(Tensor(shape, 0.0)); }

}  // namespace

void NetworkConfig::validate() const {
  if (levels < 1 || levels > 5) {
    throw std::invalid_argument("network: levels must be in [1, 5], got " + std::to_string(levels));
  }
  if (base_channels < 1) throw std::invalid_argument("network: base_channels must be >= 1");
  if (class_count != kClassCount) {
    throw std::invalid_argument("network: class_count must be 4, got " + std::to_string(class_count));
  }
  if (input_size == 0 || input_size % (std::size_t{1} << levels) != 0) {
    throw std::invalid_argument("network: input size " + std::to_string(input_size) +
                                " is not divisible by 2^" + std::to_string(levels));
  }
  if (heads == 0 || channels(levels) % heads != 0) {
    throw std::invalid_argument("network: bottleneck width " + std::to_string(channels(levels)) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
}

Shape NetworkConfig::latent_shape() const {
  const std::size_t s = extent(levels);
  return {channels(levels), s, s, s};
}

void add_conv_params(ParamStore& store, const std::string& prefix, std::size_t in,
                     std::size_t out, std::size_t kernel, CounterRng& rng) {
  const std::size_t fan_in = in * kernel * kernel * kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w({out, in, kernel, kernel, kernel});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", Tensor({out}, 0.0));
}

void add_network_params(ParamStore& store, const NetworkConfig& cfg, CounterRng& rng) {
  cfg.validate();
  const std::size_t top = cfg.levels;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    CounterRng enc_rng = rng.fork(100 + m);
    for (std::size_t l = 0; l <= top; ++l) {
      const std::size_t in = l == 0 ? 1 : cfg.channels(l - 1);
      add_conv_params(store, encoder_prefix(m, l) + ".c1", in, cfg.channels(l), 3, enc_rng);
      add_conv_params(store, encoder_prefix(m, l) + ".c2", cfg.channels(l), cfg.channels(l), 3,
                      enc_rng);
    }
  }
  CounterRng fusion_rng = rng.fork(200);
  add_mmgf_params(store, mmgf_prefix(top - 1), cfg.channels(top - 1), fusion_rng);
  add_mmgf_params(store, mmgf_prefix(top), cfg.channels(top), fusion_rng);

  CounterRng mix_rng = rng.fork(300);
  add_attention_params(store, "mix", cfg.channels(top), mix_rng);

  CounterRng dec_rng = rng.fork(400);
  for (std::size_t l = top; l-- > 0;) {
    const std::string prefix = "dec.l" + std::to_string(l);
    add_conv_params(store, prefix + ".c1", cfg.channels(l + 1) + cfg.channels(l), cfg.channels(l),
                    3, dec_rng);
    add_conv_params(store, prefix + ".c2", cfg.channels(l), cfg.channels(l), 3, dec_rng);
  }
  add_conv_params(store, "dec.out", cfg.channels(0), cfg.class_count, 1, dec_rng);
}

Var conv_layer(ParamBinding& p, const std::string& prefix, Var x, int stride, int dilation) {
  Var w = p(prefix + ".w");
  const ConvGeometry g = ConvGeometry::same(w.shape().at(2), stride, dilation);
  return add_channel_bias(conv3d(x, w, g), p(prefix + ".b"));
}

EncoderFeatures encode(ParamBinding& p, const NetworkConfig& cfg, Var volume,
                       std::size_t modality) {
  cfg.validate();
  const Shape expected{1, cfg.input_size, cfg.input_size, cfg.input_size};
  if (volume.shape() != expected) {
    throw ShapeError("encode: expected volume " + to_string(expected) + ", got " +
                     to_string(volume.shape()));
  }
  if (modality >= kModalityCount) throw std::invalid_argument("encode: bad modality index");
  EncoderFeatures out;
  Var x = volume;
  for (std::size_t l = 0; l <= cfg.levels; ++l) {
    const std::string prefix = encoder_prefix(modality, l);
    x = leaky_relu(conv_layer(p, prefix + ".c1", x, l == 0 ? 1 : 2));
    x = leaky_relu(conv_layer(p, prefix + ".c2", x));
    out.levels.push_back(x);
  }
  return out;
}

ModalityFeatures apply_modality_mask(const ModalityFeatures& features, const ModalityMask& mask,
                                     std::optional<Var> imputed_t1ce) {
  ModalityFeatures out = features;
  constexpr auto t1ce = static_cast<std::size_t>(Modality::T1ce);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (mask[m]) continue;
    for (auto& level : out[m].levels) level = zeros_like(level.tape(), level.shape());
  }
  if (imputed_t1ce && !mask[t1ce]) {
    const Var current = out[t1ce].bottleneck();
    if (imputed_t1ce->shape() != current.shape()) {
      throw ShapeError("apply_modality_mask: imputed T1ce latent " +
                       to_string(imputed_t1ce->shape()) + " does not match bottleneck " +
                       to_string(current.shape()));
    }
    out[t1ce].levels.back() = *imputed_t1ce;
  }
  return out;
}

AttentionOutput bottleneck_mix(ParamBinding& p, const NetworkConfig& cfg, Var bottleneck) {
  const Shape shape = bottleneck.shape();
  if (shape.empty() || shape[0] % cfg.heads != 0) {
    throw std::invalid_argument("bottleneck_mix: width not divisible by " +
                                std::to_string(cfg.heads) + " heads");
  }
  const std::size_t channels = shape[0];
  const std::size_t tokens = numel(shape) / channels;
  Var seq = transpose(reshape(bottleneck, {channels, tokens}));
  AttentionOutput mixed = attention_block(p, "mix", seq, cfg.heads);
  mixed.out = reshape(transpose(mixed.out), shape);
  return mixed;
}

Var decode(ParamBinding& p, const NetworkConfig& cfg, std::span<const Var> skips, Var bottleneck) {
  if (skips.size() != cfg.levels) {
    throw ShapeError("decode: expected " + std::to_string(cfg.levels) + " skip tensors, got " +
                     std::to_string(skips.size()));
  }
  Var x = bottleneck;
  for (std::size_t l = cfg.levels; l-- > 0;) {
    Var up = upsample_nearest2(x);
    const Shape& skip_shape = skips[l].shape();
    const std::size_t s = cfg.extent(l);
    const Shape expected{cfg.channels(l), s, s, s};
    if (skip_shape != expected || up.shape()[1] != s) {
      throw ShapeError("decode: level " + std::to_string(l) + " skip " + to_string(skip_shape) +
                       " does not match " + to_string(expected) + " (upsampled " +
                       to_string(up.shape()) + ")");
    }
    const std::array<Var, 2> parts{up, skips[l]};
    const std::string prefix = "dec.l" + std::to_string(l);
    x = leaky_relu(conv_layer(p, prefix + ".c1", concat(parts)));
    x = leaky_relu(conv_layer(p, prefix + ".c2", x));
  }
  return conv_layer(p, "dec.out", x);
}

ForwardResult forward(ParamBinding& p, const NetworkConfig& cfg, const Tensor& modalities,
                      const ModalityMask& mask, const ForwardOptions& options) {
  cfg.validate();
  const std::size_t s = cfg.input_size;
  const Shape expected{kModalityCount, s, s, s};
  if (modalities.shape() != expected) {
    throw ShapeError("forward: expected modalities " + to_string(expected) + ", got " +
                     to_string(modalities.shape()));
  }
  Tape& tape = p.tape();
  const std::size_t top = cfg.levels;
  const std::size_t volume = s * s * s;

  ModalityFeatures features;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (mask[m]) {
      const auto src = modalities.data().subspan(m * volume, volume);
      Var input = tape.constant(Tensor({1, s, s, s}, std::vector<double>(src.begin(), src.end())));
      features[m] = encode(p, cfg, input, m);
    } else {
      for (std::size_t l = 0; l <= top; ++l) {
        features[m].levels.push_back(zeros_like(tape, {cfg.channels(l), cfg.extent(l),
                                                       cfg.extent(l), cfg.extent(l)}));
      }
    }
  }
  std::optional<Var> imputed;
  if (options.imputed_t1ce && !mask.has(Modality::T1ce)) {
    imputed = tape.constant(*options.imputed_t1ce);
  }
  features = apply_modality_mask(features, mask, imputed);

  auto level_maps = [&](std::size_t l) {
    std::vector<Var> maps;
    for (const auto& f : features) maps.push_back(f.levels[l]);
    return maps;
  };

  ForwardResult result;
  for (std::size_t l = 0; l <= top; ++l) {
    const std::vector<Var> maps = level_maps(l);
    const bool graph_level = options.use_mmgf && l + 1 >= top;
    if (graph_level) {
      // Only the bottleneck sees the imputed T1ce stream.
      MmgfOutput fused = mmgf_forward(p, mmgf_prefix(l), maps, mask,
                                      l == top ? imputed : std::nullopt);
      result.fused.push_back(fused.fused);
      result.mixing.push_back(fused.mixing.value());
    } else {
      Availability available{};
      for (std::size_t m = 0; m < kModalityCount; ++m) available[m] = mask[m];
      if (l == top && imputed) available[static_cast<std::size_t>(Modality::T1ce)] = true;
      result.fused.push_back(masked_mean(maps, available));
    }
  }
  const Var mixed = bottleneck_mix(p, cfg, result.fused.back()).out;
  result.logits = decode(p, cfg, std::span(result.fused).first(top), mixed);
  return result;
}

}  // namespace d3seg
