#pragma once

#include "d3seg/autodiff.hpp"
#include "d3seg/rng.hpp"

namespace d3seg {

// Error-guided decision refinement. A multi-scale conv predictor maps logits to
// an error likelihood e; probability mass then moves from edema to enhancing
// tumour:
//   delta = e * P_ed,  P'_et = P_et + w_et delta,  P'_ed = max(P_ed - w_ed delta, 0),
// and all four classes are renormalised per voxel.

inline constexpr std::size_t kErrorBranchWidth = 4;
inline constexpr double kSimplexTolerance = 1e-9;

/// egdr.k3d1, egdr.k3d2 (3^3 kernels, dilation 1 and 2), egdr.k1 (1^3), each
/// classes -> 4 channels; egdr.fuse 12 -> 1; egdr.raw_w_et / egdr.raw_w_ed [1] = 0.
void add_egdr_params(ParamStore& store, std::size_t classes, CounterRng& rng);

/// logits [4, S, S, S] -> e [S, S, S] in (0, 1).
Var predict_error(ParamBinding& p, Var logits);

/// sigmoid of the raw transfer weights.
Var transfer_weight_et(ParamBinding& p);
Var transfer_weight_ed(ParamBinding& p);

/// P [4, ...] voxel-wise simplex, e [...]. Throws std::invalid_argument with the
/// largest deviation when P is not a simplex to within 1e-9.
Tensor redistribute(const Tensor& probs, const Tensor& error, double w_et, double w_ed);
/// Differentiable in P, e and the one-element weights.
Var redistribute(Var probs, Var error, Var w_et, Var w_ed);

/// 1 where gt is ET and argmax(initial logits) is not, else 0. Shape of gt.
Tensor error_target(const Tensor& initial_logits, const Tensor& labels);

}  // namespace d3seg
