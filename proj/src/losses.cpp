#include "d3seg/losses.hpp"

#include "d3seg/ops.hpp"
#include "d3seg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace d3seg {

namespace {

std::size_t class_voxels(const Tensor& probs, const Tensor& labels, const char* op) {
  if (probs.rank() < 2 || probs.dim(0) != kClassCount || probs.size() / kClassCount != labels.size()) {
    throw ShapeError(std::string(op) + ": scores " + to_string(probs.shape()) +
                     " do not match labels " + to_string(labels.shape()));
  }
  return labels.size();
}

}  // namespace

void validate_labels(const Tensor& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (!(v == 0.0 || v == 1.0 || v == 2.0 || v == 3.0)) {
      throw std::invalid_argument("invalid label " + std::to_string(v) + " at index " +
                                  std::to_string(i) + " (expected 0..3)");
    }
  }
}

Var dice_ce_from_probs(Var probs, const Tensor& labels) {
  validate_labels(labels);
  const std::size_t voxels = class_voxels(probs.value(), labels, "dice_ce_loss");
  const Tensor& p = probs.value();
  const double inv_voxels = 1.0 / static_cast<double>(voxels);
  constexpr std::size_t kForeground = kClassCount - 1;

  std::array<CompensatedSum, kClassCount> inter_acc{}, pred_acc{};
  std::array<double, kClassCount> inter{}, pred_sum{}, truth_sum{};
  CompensatedSum ce;
  for (std::size_t v = 0; v < voxels; ++v) {
    const auto gt = static_cast<std::size_t>(labels[v]);
    ce -= std::log(std::max(p[gt * voxels + v], kProbFloor));
    truth_sum[gt] += 1.0;
    for (std::size_t c = 1; c < kClassCount; ++c) {
      pred_acc[c] += p[c * voxels + v];
      if (c == gt) inter_acc[c] += p[c * voxels + v];
    }
  }
  for (std::size_t c = 1; c < kClassCount; ++c) {
    inter[c] = inter_acc[c].value();
    pred_sum[c] = pred_acc[c].value();
  }
  double dice = 0.0;
  for (std::size_t c = 1; c < kClassCount; ++c) {
    dice += 1.0 - (2.0 * inter[c] + kDiceSmooth) / (pred_sum[c] + truth_sum[c] + kDiceSmooth);
  }
  const double loss = 0.5 * dice / kForeground + 0.5 * ce.value() * inv_voxels;

  return probs.tape().record(
      Tensor({1}, loss), {probs},
      [probs, labels, inter, pred_sum, truth_sum, voxels, inv_voxels](
          Tape& t, std::span<const double> g, const Tensor&) {
        const Tensor& p = probs.value();
        auto dst = t.grad_buffer(probs.id());
        std::array<double, kClassCount> denom{}, numer{};
        for (std::size_t c = 1; c < kClassCount; ++c) {
          denom[c] = pred_sum[c] + truth_sum[c] + kDiceSmooth;
          numer[c] = 2.0 * inter[c] + kDiceSmooth;
        }
        const double dice_w = g[0] * 0.5 / static_cast<double>(kClassCount - 1);
        const double ce_w = g[0] * 0.5 * inv_voxels;
        for (std::size_t v = 0; v < voxels; ++v) {
          const auto gt = static_cast<std::size_t>(labels[v]);
          for (std::size_t c = 1; c < kClassCount; ++c) {
            const double truth = c == gt ? 1.0 : 0.0;
            dst[c * voxels + v] -=
                dice_w * (2.0 * truth * denom[c] - numer[c]) / (denom[c] * denom[c]);
          }
          const double pg = p[gt * voxels + v];
          if (pg > kProbFloor) dst[gt * voxels + v] -= ce_w / pg;
        }
      });
}

Var dice_ce_loss(Var logits, const Tensor& labels) {
  return dice_ce_from_probs(channel_softmax(logits), labels);
}

Var bce_loss(Var error, const Tensor& target) {
  const Tensor& e = error.value();
  if (e.size() != target.size()) {
    throw ShapeError("bce_loss: error map " + to_string(e.shape()) + " does not match target " +
                     to_string(target.shape()));
  }
  const double inv = 1.0 / static_cast<double>(e.size());
  CompensatedSum total;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double p = std::clamp(e[i], kBceClamp, 1.0 - kBceClamp);
    total -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return error.tape().record(
      Tensor({1}, total.value() * inv), {error},
      [error, target, inv](Tape& t, std::span<const double> g, const Tensor&) {
        const Tensor& e = error.value();
        auto dst = t.grad_buffer(error.id());
        for (std::size_t i = 0; i < e.size(); ++i) {
          if (e[i] < kBceClamp || e[i] > 1.0 - kBceClamp) continue;
          const double y = target[i];
          dst[i] += g[0] * inv * (-y / e[i] + (1.0 - y) / (1.0 - e[i]));
        }
      });
}

std::string_view region_name(Region r) {
  switch (r) {
    case Region::WT: return "WT";
    case Region::TC: return "TC";
    case Region::ET: return "ET";
  }
  return "?";
}

bool in_region(int label, Region r) {
  switch (r) {
    case Region::WT: return label == kNecrotic || label == kEdema || label == kEnhancing;
    case Region::TC: return label == kNecrotic || label == kEnhancing;
    case Region::ET: return label == kEnhancing;
  }
  return false;
}

double region_dice(const Tensor& predicted, const Tensor& truth, Region r) {
  if (predicted.shape() != truth.shape()) {
    throw ShapeError("region_dice: shapes " + to_string(predicted.shape()) + " and " +
                     to_string(truth.shape()) + " differ");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool in_a = in_region(static_cast<int>(predicted[i]), r);
    const bool in_b = in_region(static_cast<int>(truth[i]), r);
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

Tensor argmax_labels(const Tensor& scores) {
  if (scores.rank() < 2) throw ShapeError("argmax_labels: need [C, ...], got " + to_string(scores.shape()));
  const std::size_t classes = scores.dim(0);
  const std::size_t voxels = scores.size() / classes;
  Shape out_shape(scores.shape().begin() + 1, scores.shape().end());
  Tensor out(out_shape, 0.0);
  for (std::size_t v = 0; v < voxels; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (scores[c * voxels + v] > scores[best * voxels + v]) best = c;
    }
    out[v] = static_cast<double>(best);
  }
  return out;
}

}  // namespace d3seg
