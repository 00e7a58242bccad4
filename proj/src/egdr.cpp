#include "d3seg/egdr.hpp"

#include "d3seg/losses.hpp"
#include "d3seg/network.hpp"
#include "d3seg/ops.hpp"
#include "d3seg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace d3seg {

namespace {

std::size_t voxel_count(const Tensor& probs, const Tensor& error) {
  if (probs.rank() < 2 || probs.dim(0) != kClassCount) {
    throw ShapeError("redistribute: probabilities must be [4, ...], got " +
                     to_string(probs.shape()));
  }
  const std::size_t voxels = probs.size() / kClassCount;
  if (error.size() != voxels) {
    throw ShapeError("redistribute: error map " + to_string(error.shape()) +
                     " does not cover probabilities " + to_string(probs.shape()));
  }
  return voxels;
}

void require_simplex(const Tensor& probs, std::size_t voxels) {
  double worst = 0.0;
  std::size_t worst_voxel = 0;
  for (std::size_t v = 0; v < voxels; ++v) {
    double total = 0.0;
    double deviation = 0.0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      const double p = probs[c * voxels + v];
      total += p;
      if (p < 0.0) deviation = std::max(deviation, -p);
    }
    deviation = std::max(deviation, std::abs(total - 1.0));
    if (!(deviation <= worst)) {
      worst = deviation;
      worst_voxel = v;
    }
  }
  if (!(worst <= kSimplexTolerance)) {
    std::ostringstream msg;
    msg << "redistribute: input is not a probability simplex (max deviation " << worst
        << " at voxel " << worst_voxel << ")";
    throw std::invalid_argument(msg.str());
  }
}

struct VoxelTransfer {
  std::array<double, kClassCount> q;  // pre-normalisation
  double total;
  bool clamped;
};

VoxelTransfer transfer(const std::array<double, kClassCount>& p, double e, double w_et,
                       double w_ed) {
  const double delta = e * p[kEdema];
  VoxelTransfer r{p, 0.0, false};
  r.q[kEnhancing] = p[kEnhancing] + w_et * delta;
  const double ed = p[kEdema] - w_ed * delta;
  r.clamped = ed < 0.0;
  r.q[kEdema] = r.clamped ? 0.0 : ed;
  r.total = r.q[0] + r.q[1] + r.q[2] + r.q[3];
  return r;
}

}  // namespace

void add_egdr_params(ParamStore& store, std::size_t classes, CounterRng& rng) {
  add_conv_params(store, "egdr.k3d1", classes, kErrorBranchWidth, 3, rng);
  add_conv_params(store, "egdr.k3d2", classes, kErrorBranchWidth, 3, rng);
  add_conv_params(store, "egdr.k1", classes, kErrorBranchWidth, 1, rng);
  add_conv_params(store, "egdr.fuse", 3 * kErrorBranchWidth, 1, 1, rng);
  store.add("egdr.raw_w_et", Tensor({1}, 0.0));
  store.add("egdr.raw_w_ed", Tensor({1}, 0.0));
}

Var predict_error(ParamBinding& p, Var logits) {
  const Shape& shape = logits.shape();
  if (shape.size() != 4) throw ShapeError("predict_error: logits must be [C, X, Y, Z]");
  const std::array<Var, 3> branches{
      leaky_relu(conv_layer(p, "egdr.k3d1", logits, 1, 1)),
      leaky_relu(conv_layer(p, "egdr.k3d2", logits, 1, 2)),
      leaky_relu(conv_layer(p, "egdr.k1", logits)),
  };
  Var fused = conv_layer(p, "egdr.fuse", concat(branches));
  return reshape(sigmoid(fused), {shape[1], shape[2], shape[3]});
}

Var transfer_weight_et(ParamBinding& p) { return sigmoid(p("egdr.raw_w_et")); }
Var transfer_weight_ed(ParamBinding& p) { return sigmoid(p("egdr.raw_w_ed")); }

Tensor redistribute(const Tensor& probs, const Tensor& error, double w_et, double w_ed) {
  const std::size_t voxels = voxel_count(probs, error);
  require_simplex(probs, voxels);
  Tensor out(probs.shape());
  for (std::size_t v = 0; v < voxels; ++v) {
    std::array<double, kClassCount> p;
    for (std::size_t c = 0; c < kClassCount; ++c) p[c] = probs[c * voxels + v];
    const VoxelTransfer r = transfer(p, error[v], w_et, w_ed);
    // No mass moved: pass the input through bit for bit.
    const bool unchanged = error[v] * p[kEdema] == 0.0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      out[c * voxels + v] = unchanged ? p[c] : r.q[c] / r.total;
    }
  }
  return out;
}

Var redistribute(Var probs, Var error, Var w_et, Var w_ed) {
  if (w_et.value().size() != 1 || w_ed.value().size() != 1) {
    throw ShapeError("redistribute: transfer weights must be one-element tensors");
  }
  const double wet = w_et.value()[0];
  const double wed = w_ed.value()[0];
  Tensor out = redistribute(probs.value(), error.value(), wet, wed);
  return probs.tape().record(
      std::move(out), {probs, error, w_et, w_ed},
      [probs, error, w_et, w_ed, wet, wed](Tape& t, std::span<const double> g, const Tensor& y) {
        const Tensor& pv = probs.value();
        const Tensor& ev = error.value();
        const std::size_t voxels = pv.size() / kClassCount;
        const bool want_p = t.requires_grad(probs);
        const bool want_e = t.requires_grad(error);
        std::span<double> gp = want_p ? t.grad_buffer(probs.id()) : std::span<double>{};
        std::span<double> ge = want_e ? t.grad_buffer(error.id()) : std::span<double>{};
        double g_wet = 0.0, g_wed = 0.0;
        for (std::size_t v = 0; v < voxels; ++v) {
          std::array<double, kClassCount> p;
          for (std::size_t c = 0; c < kClassCount; ++c) p[c] = pv[c * voxels + v];
          const double e = ev[v];
          const VoxelTransfer r = transfer(p, e, wet, wed);
          double dot = 0.0;
          for (std::size_t c = 0; c < kClassCount; ++c) dot += g[c * voxels + v] * y[c * voxels + v];
          std::array<double, kClassCount> gq;
          for (std::size_t c = 0; c < kClassCount; ++c) gq[c] = (g[c * voxels + v] - dot) / r.total;

          const double ped = p[kEdema];
          std::array<double, kClassCount> dp{gq[0], gq[1], 0.0, gq[kEnhancing]};
          double de = gq[kEnhancing] * wet * ped;
          dp[kEdema] += gq[kEnhancing] * wet * e;
          g_wet += gq[kEnhancing] * e * ped;
          if (!r.clamped) {
            dp[kEdema] += gq[kEdema] * (1.0 - wed * e);
            de -= gq[kEdema] * wed * ped;
            g_wed -= gq[kEdema] * e * ped;
          }
          if (want_p) {
            for (std::size_t c = 0; c < kClassCount; ++c) gp[c * voxels + v] += dp[c];
          }
          if (want_e) ge[v] += de;
        }
        if (t.requires_grad(w_et)) t.grad_buffer(w_et.id())[0] += g_wet;
        if (t.requires_grad(w_ed)) t.grad_buffer(w_ed.id())[0] += g_wed;
      });
}

Tensor error_target(const Tensor& initial_logits, const Tensor& labels) {
  const Tensor predicted = argmax_labels(initial_logits);
  if (predicted.shape() != labels.shape()) {
    throw ShapeError("error_target: logits " + to_string(initial_logits.shape()) +
                     " do not match labels " + to_string(labels.shape()));
  }
  Tensor target(labels.shape(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool missed = labels[i] == kEnhancing && predicted[i] != kEnhancing;
    target[i] = missed ? 1.0 : 0.0;
  }
  return target;
}

}  // namespace d3seg
