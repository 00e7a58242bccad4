#include "d3seg/mmgf.hpp"

#include "d3seg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace d3seg {

namespace {

constexpr double kMinNorm = 1e-12;

void require_modalities(std::size_t n, const char* op) {
  if (n != kModalityCount) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(kModalityCount) +
                     " modality entries, got " + std::to_string(n));
  }
}

struct UnitRows {
  Tensor units;                 // [M, C], zero rows where invalid
  std::vector<double> norms;    // [M]
  std::vector<bool> valid;      // available with non-degenerate norm
};

UnitRows unit_rows(const Tensor& h, std::span<const bool> available) {
  if (h.rank() != 2) throw ShapeError("build_adjacency: H must be [M, C], got " + to_string(h.shape()));
  require_modalities(h.dim(0), "build_adjacency");
  require_modalities(available.size(), "build_adjacency");
  const std::size_t m = h.dim(0), c = h.dim(1);
  UnitRows r{Tensor({m, c}, 0.0), std::vector<double>(m, 0.0), std::vector<bool>(m, false)};
  for (std::size_t i = 0; i < m; ++i) {
    if (!available[i]) continue;
    double sq = 0.0;
    for (std::size_t k = 0; k < c; ++k) sq += h[i * c + k] * h[i * c + k];
    const double norm = std::sqrt(sq);
    r.norms[i] = norm;
    if (norm <= kMinNorm) {
      std::clog << "warning: modality " << modality_name(static_cast<Modality>(i))
                << " has a zero-norm embedding; its similarities are set to 0\n";
      continue;
    }
    r.valid[i] = true;
    for (std::size_t k = 0; k < c; ++k) r.units[i * c + k] = h[i * c + k] / norm;
  }
  return r;
}

Tensor adjacency_from_units(const UnitRows& r) {
  const std::size_t m = r.units.dim(0), c = r.units.dim(1);
  Tensor a({m, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!r.valid[i]) continue;
    a[i * m + i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      if (!r.valid[j]) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += r.units[i * c + k] * r.units[j * c + k];
      dot = std::clamp(dot, -1.0, 1.0);
      a[i * m + j] = dot;
      a[j * m + i] = dot;
    }
  }
  return a;
}

}  // namespace

void add_mmgf_params(ParamStore& store, const std::string& prefix, std::size_t channels,
                     CounterRng& rng, double phi_noise) {
  store.add(prefix + ".alpha",
            Tensor({kHopCount}, std::vector<double>(kInitialHopWeights.begin(),
                                                    kInitialHopWeights.end())));
  Tensor identity({channels, channels}, 0.0);
  for (std::size_t i = 0; i < channels; ++i) identity[i * channels + i] = 1.0;
  Tensor second = identity;
  for (auto& v : second.data()) v += phi_noise > 0.0 ? rng.uniform(-phi_noise, phi_noise) : 0.0;
  store.add(prefix + ".phi1.w", identity);
  store.add(prefix + ".phi1.b", Tensor({channels}, 0.0));
  store.add(prefix + ".phi2.w", std::move(second));
  store.add(prefix + ".phi2.b", Tensor({channels}, 0.0));
}

Tensor build_adjacency(const Tensor& embeddings, std::span<const bool> available) {
  return adjacency_from_units(unit_rows(embeddings, available));
}

Var build_adjacency(Var embeddings, std::span<const bool> available) {
  UnitRows rows = unit_rows(embeddings.value(), available);
  Tensor a = adjacency_from_units(rows);
  return embeddings.tape().record(
      std::move(a), {embeddings},
      [embeddings, rows = std::move(rows)](Tape& t, std::span<const double> g, const Tensor&) {
        const std::size_t m = rows.units.dim(0), c = rows.units.dim(1);
        auto dst = t.grad_buffer(embeddings.id());
        std::vector<double> du(c);
        for (std::size_t i = 0; i < m; ++i) {
          if (!rows.valid[i]) continue;
          std::fill(du.begin(), du.end(), 0.0);
          for (std::size_t j = 0; j < m; ++j) {
            if (j == i || !rows.valid[j]) continue;
            const double w = g[i * m + j] + g[j * m + i];
            for (std::size_t k = 0; k < c; ++k) du[k] += w * rows.units[j * c + k];
          }
          double radial = 0.0;
          for (std::size_t k = 0; k < c; ++k) radial += rows.units[i * c + k] * du[k];
          for (std::size_t k = 0; k < c; ++k) {
            dst[i * c + k] += (du[k] - radial * rows.units[i * c + k]) / rows.norms[i];
          }
        }
      });
}

Var multi_hop_mix(Var adjacency, Var alpha, std::span<const bool> available) {
  if (alpha.value().size() != kHopCount) {
    throw ShapeError("multi_hop_mix: alpha must have " + std::to_string(kHopCount) +
                     " entries, got " + to_string(alpha.shape()));
  }
  std::array<Var, kHopCount> powers{adjacency, matmul(adjacency, adjacency), Var{}};
  powers[2] = matmul(powers[1], adjacency);
  Var logits = linear_combination(powers, alpha);
  return masked_row_softmax(logits, available);
}

Tensor multi_hop_mix(const Tensor& adjacency, const Tensor& alpha,
                     std::span<const bool> available) {
  Tape tape;
  return multi_hop_mix(tape.constant(adjacency), tape.constant(alpha), available).value();
}

Var fuse_maps(ParamBinding& p, const std::string& prefix, std::span<const Var> maps, Var mixing,
              std::span<const bool> available) {
  require_modalities(maps.size(), "fuse_maps");
  const Shape map_shape = maps[0].shape();
  const std::size_t channels = map_shape.at(0);
  const std::size_t voxels = numel(map_shape) / channels;
  Var stacked = reshape(stack(maps), {kModalityCount, channels * voxels});
  Var mixed = matmul(mixing, stacked);

  std::vector<Var> streams;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    if (!available[i]) continue;
    Var m = reshape(slice(mixed, i, 1), {channels, voxels});
    Var h = leaky_relu(add_channel_bias(matmul(p(prefix + ".phi1.w"), m), p(prefix + ".phi1.b")));
    streams.push_back(add_channel_bias(matmul(p(prefix + ".phi2.w"), h), p(prefix + ".phi2.b")));
  }
  if (streams.empty()) throw std::invalid_argument("fuse_maps: no modality available");
  const std::vector<double> weights(streams.size(), 1.0 / static_cast<double>(streams.size()));
  return reshape(weighted_sum(streams, weights), map_shape);
}

MmgfOutput mmgf_forward(ParamBinding& p, const std::string& prefix, std::span<const Var> maps,
                        const ModalityMask& mask, std::optional<Var> imputed_t1ce) {
  require_modalities(maps.size(), "mmgf_forward");
  std::vector<Var> inputs(maps.begin(), maps.end());
  Availability available{};
  std::copy(mask.flags().begin(), mask.flags().end(), available.begin());
  constexpr auto t1ce = static_cast<std::size_t>(Modality::T1ce);
  if (imputed_t1ce && !available[t1ce]) {
    if (imputed_t1ce->shape() != maps[t1ce].shape()) {
      throw ShapeError("mmgf_forward: imputed T1ce " + to_string(imputed_t1ce->shape()) +
                       " does not match feature map " + to_string(maps[t1ce].shape()));
    }
    inputs[t1ce] = *imputed_t1ce;
    available[t1ce] = true;
  }

  Tape& tape = p.tape();
  const std::size_t channels = inputs[0].shape().at(0);
  std::vector<Var> embeddings;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    embeddings.push_back(available[i] ? gap(inputs[i]) : tape.constant(Tensor({channels}, 0.0)));
  }
  MmgfOutput out;
  out.adjacency = build_adjacency(stack(embeddings), available);
  out.mixing = multi_hop_mix(out.adjacency, p(prefix + ".alpha"), available);
  out.fused = fuse_maps(p, prefix, inputs, out.mixing, available);
  return out;
}

Var masked_mean(std::span<const Var> maps, std::span<const bool> available) {
  require_modalities(maps.size(), "masked_mean");
  std::vector<Var> present;
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    if (available[i]) present.push_back(maps[i]);
  }
  if (present.empty()) throw std::invalid_argument("masked_mean: no modality available");
  const std::vector<double> weights(present.size(), 1.0 / static_cast<double>(present.size()));
  return weighted_sum(present, weights);
}

}  // namespace d3seg
