#include "d3seg/phantom.hpp"

#include "d3seg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace d3seg {

ModalityMask::ModalityMask(bool flair, bool t1, bool t1ce, bool t2)
    : ModalityMask(std::array<bool, kModalityCount>{flair, t1, t1ce, t2}) {}

ModalityMask::ModalityMask(std::array<bool, kModalityCount> flags) : flags_(flags) {
  if (count() == 0) throw std::invalid_argument("modality mask needs at least one modality");
}

std::size_t ModalityMask::count() const {
  return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), true));
}

ModalityMask ModalityMask::without(Modality m) const {
  auto f = flags_;
  f[static_cast<std::size_t>(m)] = false;
  return ModalityMask(f);
}

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Flair: return "F";
    case Modality::T1: return "T1";
    case Modality::T1ce: return "T1c";
    case Modality::T2: return "T2";
  }
  return "?";
}

std::string ModalityMask::label() const {
  std::string out;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    if (!flags_[i]) continue;
    if (!out.empty()) out += '+';
    out += modality_name(static_cast<Modality>(i));
  }
  return out;
}

std::vector<ModalityMask> enumerate_masks() {
  std::vector<ModalityMask> out;
  for (std::size_t size = 1; size <= kModalityCount; ++size) {
    // Lexicographic combinations of `size` indices out of 4.
    std::array<bool, kModalityCount> pick{};
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
    do {
      out.emplace_back(pick);
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return out;
}

ModalityMask parse_mask(std::string_view label) {
  std::array<bool, kModalityCount> flags{};
  std::size_t start = 0;
  while (start <= label.size()) {
    const std::size_t end = std::min(label.find('+', start), label.size());
    const std::string_view token = label.substr(start, end - start);
    bool known = false;
    for (std::size_t i = 0; i < kModalityCount; ++i) {
      if (token == modality_name(static_cast<Modality>(i))) {
        flags[i] = true;
        known = true;
      }
    }
    if (!known) throw std::invalid_argument("unknown modality '" + std::string(token) + "'");
    start = end + 1;
  }
  return ModalityMask(flags);
}

Tensor PhantomSample::modality(Modality m) const {
  const std::size_t s = size();
  const std::size_t n = s * s * s;
  const auto off = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(m) * n);
  return Tensor({1, s, s, s}, std::vector<double>(modalities.data().begin() + off,
                                                  modalities.data().begin() + off +
                                                      static_cast<std::ptrdiff_t>(n)));
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  bool contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dz = (z - center[2]) / radii[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct BiasField {
  double amplitude;
  std::array<std::array<double, 3>, 2> waves;
  std::array<double, 2> phases;

  double at(double x, double y, double z, double size) const {
    double b = 0.0;
    for (std::size_t w = 0; w < 2; ++w) {
      const double arg =
          2.0 * std::numbers::pi * (waves[w][0] * x + waves[w][1] * y + waves[w][2] * z) / size +
          phases[w];
      b += 0.5 * std::sin(arg);
    }
    return 1.0 + amplitude * b;
  }
};

Tensor label_volume(std::size_t s, const Ellipsoid& wt, const Ellipsoid& tc,
                    const Ellipsoid& ncr) {
  Tensor labels({s, s, s}, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      for (std::size_t k = 0; k < s; ++k) {
        const double x = static_cast<double>(i), y = static_cast<double>(j),
                     z = static_cast<double>(k);
        int label = kBackground;
        if (wt.contains(x, y, z)) {
          label = kEdema;
          if (tc.contains(x, y, z)) label = ncr.contains(x, y, z) ? kNecrotic : kEnhancing;
        }
        labels.at(i, j, k) = label;
      }
    }
  }
  return labels;
}

}  // namespace

std::array<std::size_t, kClassCount> label_histogram(const Tensor& labels) {
  std::array<std::size_t, kClassCount> h{};
  for (double v : labels.data()) {
    const auto c = static_cast<std::size_t>(v);
    if (c >= kClassCount || static_cast<double>(c) != v) {
      throw std::invalid_argument("label value outside {0,1,2,3}: " + std::to_string(v));
    }
    ++h[c];
  }
  return h;
}

PhantomSample gen_phantom(std::uint64_t seed, std::size_t size) {
  if (size < 16 || size > 64) {
    throw std::invalid_argument("phantom size must lie in [16, 64], got " + std::to_string(size));
  }
  CounterRng rng(seed);
  const double s = static_cast<double>(size);
  const double total = s * s * s;

  for (int attempt = 0; attempt < 256; ++attempt) {
    Ellipsoid wt{};
    const double fraction = rng.uniform(0.07, 0.20);
    const double radius = std::cbrt(3.0 * fraction * total / (4.0 * std::numbers::pi));
    std::array<double, 3> aspect{};
    for (auto& a : aspect) a = rng.uniform(0.8, 1.25);
    const double norm = std::cbrt(aspect[0] * aspect[1] * aspect[2]);
    for (std::size_t d = 0; d < 3; ++d) {
      wt.center[d] = s * rng.uniform(0.38, 0.62);
      wt.radii[d] = radius * aspect[d] / norm;
    }

    Ellipsoid tc{};
    const double core_scale = rng.uniform(0.6, 0.8);
    const double min_radius = *std::min_element(wt.radii.begin(), wt.radii.end());
    const double max_offset = 0.5 * (1.0 - core_scale) * min_radius;
    for (std::size_t d = 0; d < 3; ++d) {
      tc.center[d] = wt.center[d] + rng.uniform(-max_offset, max_offset);
      tc.radii[d] = wt.radii[d] * core_scale;
    }

    // Enhancing rim: target fraction q of the core means a necrotic radius ratio of cbrt(1 - q).
    Ellipsoid ncr = tc;
    const double rim = rng.uniform(0.18, 0.38);
    const double ratio = std::cbrt(1.0 - rim);
    for (auto& r : ncr.radii) r *= ratio;

    Tensor labels = label_volume(size, wt, tc, ncr);
    const auto h = label_histogram(labels);
    const double wt_frac = static_cast<double>(h[1] + h[2] + h[3]) / total;
    const double core = static_cast<double>(h[1] + h[3]);
    if (wt_frac < 0.05 || wt_frac > 0.25 || core == 0.0) continue;
    const double et_frac = static_cast<double>(h[3]) / core;
    if (et_frac < 0.10 || et_frac > 0.40) continue;

    PhantomSample sample;
    sample.seed = seed;
    sample.modalities = Tensor({kModalityCount, size, size, size});
    const std::size_t n = size * size * size;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      BiasField bias{};
      bias.amplitude = rng.uniform(0.0, kPhantomMaxBias);
      for (auto& w : bias.waves) {
        for (auto& c : w) c = rng.uniform(-1.0, 1.0);
      }
      for (auto& p : bias.phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t v = 0; v < n; ++v) {
        const std::size_t i = v / (size * size), j = (v / size) % size, k = v % size;
        const auto label = static_cast<std::size_t>(labels[v]);
        const double b = bias.at(static_cast<double>(i), static_cast<double>(j),
                                 static_cast<double>(k), s);
        const double value = kContrastTable[m][label] * b + kPhantomNoiseSigma * rng.normal();
        sample.modalities[m * n + v] = std::clamp(value, 0.0, 1.0);
      }
    }
    sample.labels = std::move(labels);
    return sample;
  }
  throw std::runtime_error("gen_phantom: no admissible geometry for seed " +
                           std::to_string(seed));
}

namespace {

// Shape [C, S, S, S] of a volume, accepting [S, S, S] label volumes as one channel.
std::array<std::size_t, 4> cube_dims(const Tensor& v) {
  if (v.rank() == 3) return {1, v.dim(0), v.dim(1), v.dim(2)};
  if (v.rank() == 4) return {v.dim(0), v.dim(1), v.dim(2), v.dim(3)};
  throw ShapeError("expected [C,S,S,S] or [S,S,S], got " + to_string(v.shape()));
}

template <typename Map>
Tensor remap(const Tensor& v, Map&& source_of) {
  const auto d = cube_dims(v);
  if (d[1] != d[2] || d[2] != d[3]) throw ShapeError("volume must be cubic: " + to_string(v.shape()));
  const std::size_t s = d[1];
  Tensor out(v.shape());
  for (std::size_t c = 0; c < d[0]; ++c) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        for (std::size_t k = 0; k < s; ++k) {
          const auto src = source_of(std::array<std::size_t, 3>{i, j, k}, s);
          out[((c * s + i) * s + j) * s + k] = v[((c * s + src[0]) * s + src[1]) * s + src[2]];
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor flip_axis(const Tensor& volume, std::size_t axis) {
  if (axis > 2) throw std::invalid_argument("flip axis must be 0, 1 or 2");
  return remap(volume, [axis](std::array<std::size_t, 3> p, std::size_t s) {
    p[axis] = s - 1 - p[axis];
    return p;
  });
}

Tensor rotate90(const Tensor& volume, std::size_t a, std::size_t b, int k) {
  if (a > 2 || b > 2 || a == b) throw std::invalid_argument("rotation plane needs two axes");
  k = ((k % 4) + 4) % 4;
  Tensor out = volume;
  for (int r = 0; r < k; ++r) {
    out = remap(out, [a, b](std::array<std::size_t, 3> p, std::size_t s) {
      std::array<std::size_t, 3> src = p;
      src[a] = s - 1 - p[b];
      src[b] = p[a];
      return src;
    });
  }
  return out;
}

AugmentParams draw_augment_params(std::uint64_t seed) {
  CounterRng rng(seed);
  AugmentParams p;
  for (auto& f : p.flip) f = rng.bernoulli(0.5);
  p.rotation_plane = static_cast<std::size_t>(rng.below(3));
  p.quarter_turns = static_cast<int>(rng.below(4));
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    p.scale[m] = rng.uniform(0.9, 1.1);
    p.shift[m] = rng.uniform(-0.05, 0.05);
  }
  return p;
}

PhantomSample apply_augment(const PhantomSample& sample, const AugmentParams& params) {
  static constexpr std::array<std::array<std::size_t, 2>, 3> kPlanes{{{0, 1}, {0, 2}, {1, 2}}};
  PhantomSample out = sample;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (!params.flip[axis]) continue;
    out.modalities = flip_axis(out.modalities, axis);
    out.labels = flip_axis(out.labels, axis);
  }
  if (params.quarter_turns != 0) {
    const auto plane = kPlanes.at(params.rotation_plane);
    out.modalities = rotate90(out.modalities, plane[0], plane[1], params.quarter_turns);
    out.labels = rotate90(out.labels, plane[0], plane[1], params.quarter_turns);
  }
  const std::size_t n = out.modalities.inner_size();
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    for (std::size_t v = 0; v < n; ++v) {
      double& x = out.modalities[m * n + v];
      x = std::clamp(x * params.scale[m] + params.shift[m], 0.0, 1.0);
    }
  }
  return out;
}

PhantomSample augment(const PhantomSample& sample, std::uint64_t seed) {
  return apply_augment(sample, draw_augment_params(seed));
}

}  // namespace d3seg
