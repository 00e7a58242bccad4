#include "d3seg/grad_check.hpp"

#include "d3seg/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace d3seg {
namespace {

double evaluate(const ScalarGraph& f, ParamStore& params) {
  Tape tape;
  return f(tape, params).value()[0];
}

constexpr std::array<double, 5> kSweepSteps{1e-7, 1e-6, 1e-5, 1e-4, 1e-3};

// Central difference at one step; nullopt when either side is not finite.
std::optional<double> central(const ScalarGraph& f, ParamStore& params, double& slot, double h) {
  const double saved = slot;
  slot = saved + h;
  const double up = evaluate(f, params);
  slot = saved - h;
  const double down = evaluate(f, params);
  slot = saved;
  if (!std::isfinite(up) || !std::isfinite(down)) return std::nullopt;
  return (up - down) / (2.0 * h);
}

// Walks up from the smallest step while each estimate stays within the roundoff
// noise of the previous one; stops at the first jump (truncation or a kink),
// then extrapolates from the last accepted step.
std::optional<double> swept(const ScalarGraph& f, ParamStore& params, double& slot, double f0) {
  constexpr double kNoise = 16.0 * std::numeric_limits<double>::epsilon();
  auto accepted = central(f, params, slot, kSweepSteps[0]);
  if (!accepted) return std::nullopt;
  double h = kSweepSteps[0];
  for (std::size_t k = 1; k < kSweepSteps.size(); ++k) {
    const auto next = central(f, params, slot, kSweepSteps[k]);
    if (!next) return std::nullopt;
    if (std::abs(*next - *accepted) > kNoise * std::max(std::abs(f0), 1.0) / h) break;
    accepted = next;
    h = kSweepSteps[k];
  }
  // Richardson step against h/2 cancels the h^2 truncation term.
  const auto half = central(f, params, slot, h / 2.0);
  if (!half) return std::nullopt;
  return (4.0 * *half - *accepted) / 3.0;
}

}  // namespace

GradCheckReport grad_check(const ScalarGraph& f, ParamStore& params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  params.zero_grad();
  double f0 = 0.0;
  {
    Tape tape;
    Var root = f(tape, params);
    f0 = root.value()[0];
    tape.backward(root);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& e : params) analytic.push_back(e.grad);

  CounterRng rng(options.seed);
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& entry = params.entry(p);
    const std::size_t n = entry.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && options.max_coords_per_param < n) {
      // Partial Fisher-Yates for a reproducible subset.
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      }
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t i : coords) {
      const auto estimate = options.sweep_steps ? swept(f, params, entry.value[i], f0)
                                                : central(f, params, entry.value[i], options.eps);
      ++report.coordinates_checked;
      if (!estimate) {
        report.non_finite.push_back(entry.name + "[" + std::to_string(i) + "]");
        continue;
      }
      const double numeric = *estimate;
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (report.worst_param.empty() || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = entry.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace d3seg
