#include "d3seg/grad_check.hpp"
#include "d3seg/losses.hpp"
#include "d3seg/ops.hpp"
#include "d3seg/phantom.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace d3seg;
using d3seg::test::random_tensor;

namespace {

Tensor random_labels(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  CounterRng rng(seed);
  for (auto& v : t.data()) v = static_cast<double>(rng.below(4));
  return t;
}

struct DiceCeParts {
  double dice = 0.0;
  double ce = 0.0;
};

// Formula re-implementation: soft Dice per foreground class and voxel-mean CE.
DiceCeParts dice_ce_oracle(const Tensor& probs, const Tensor& labels) {
  const std::size_t n = labels.size();
  DiceCeParts out;
  for (std::size_t c = 1; c < 4; ++c) {
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      const double t = labels[v] == static_cast<double>(c) ? 1.0 : 0.0;
      inter += probs[c * n + v] * t;
      ps += probs[c * n + v];
      ts += t;
    }
    out.dice += (1.0 - (2.0 * inter + 1e-5) / (ps + ts + 1e-5)) / 3.0;
  }
  for (std::size_t v = 0; v < n; ++v) {
    out.ce -= std::log(probs[static_cast<std::size_t>(labels[v]) * n + v]) / static_cast<double>(n);
  }
  return out;
}

double loss_of(const Tensor& logits, const Tensor& labels) {
  Tape tape;
  return dice_ce_loss(tape.constant(logits), labels).value()[0];
}

Tensor region_map(std::initializer_list<std::pair<std::size_t, int>> set, std::size_t n) {
  Tensor t({n});
  for (auto [i, label] : set) t[i] = label;
  return t;
}

}  // namespace

TEST_CASE("dice-CE saturates on confident correct logits") {
  const Tensor labels = random_labels({4, 4, 4}, 1);
  Tensor logits({4, 4, 4, 4});
  for (std::size_t v = 0; v < 64; ++v) logits[static_cast<std::size_t>(labels[v]) * 64 + v] = 20.0;
  CHECK(loss_of(logits, labels) < 1e-3);
}

TEST_CASE("dice-CE cross-entropy of uniform logits is ln 4") {
  Tensor labels({8});
  for (std::size_t v = 0; v < 8; ++v) labels[v] = v < 4 ? 0.0 : 3.0;
  const Tensor logits({4, 8}, 0.7);
  const double total = loss_of(logits, labels);
  const auto parts = dice_ce_oracle(channel_softmax(logits), labels);
  CHECK(std::abs(parts.ce - std::log(4.0)) < 1e-15);
  CHECK(std::abs(total - 0.5 * parts.dice - 0.5 * std::log(4.0)) < 1e-14);
}

TEST_CASE("dice-CE matches the formula oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor logits = random_tensor({4, 4, 4, 4}, 10 + seed, -3, 3);
    const Tensor labels = random_labels({4, 4, 4}, 20 + seed);
    const auto parts = dice_ce_oracle(channel_softmax(logits), labels);
    CHECK(std::abs(loss_of(logits, labels) - 0.5 * parts.dice - 0.5 * parts.ce) < 1e-12);
  }
}

TEST_CASE("dice-CE rejects invalid labels") {
  Tensor labels({4, 4, 4});
  labels[5] = 4.0;
  CHECK_THROWS_AS(loss_of(Tensor({4, 4, 4, 4}), labels), std::invalid_argument);
  labels[5] = 1.5;
  CHECK_THROWS_AS(validate_labels(labels), std::invalid_argument);
  CHECK_THROWS(loss_of(Tensor({4, 4, 4, 4}), Tensor({4, 4, 3})));
}

TEST_CASE("binary cross-entropy") {
  Tape tape;
  const Tensor target = random_labels({16}, 3);
  Tensor binary = target;
  for (auto& v : binary.data()) v = v > 1.5 ? 1.0 : 0.0;
  const double exact = bce_loss(tape.constant(binary), binary).value()[0];
  CHECK(exact > 0.0);
  CHECK(exact < 2e-7);
  CHECK(std::abs(bce_loss(tape.constant(Tensor({16}, 0.5)), binary).value()[0] - std::numbers::ln2) <
        1e-15);

  const Tensor e = random_tensor({16}, 4, 0.01, 0.99);
  double direct = 0.0;
  for (std::size_t i = 0; i < 16; ++i)
    direct -= binary[i] * std::log(e[i]) + (1 - binary[i]) * std::log(1 - e[i]);
  CHECK(std::abs(bce_loss(tape.constant(e), binary).value()[0] - direct / 16) < 1e-14);
}

TEST_CASE("loss gradients") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store;
    store.add("logits", random_tensor({4, 3, 3, 3}, 30 + seed, -2, 2));
    store.add("e", random_tensor({3, 3, 3}, 60 + seed, 0.05, 0.95));
    const Tensor labels = random_labels({3, 3, 3}, 90 + seed);
    Tensor target = labels;
    for (auto& v : target.data()) v = v == 3.0 ? 1.0 : 0.0;
    const auto report = grad_check(
        [&](Tape& tape, ParamStore& s) {
          ParamBinding p(tape, s);
          return add(dice_ce_loss(p("logits"), labels), bce_loss(p("e"), target));
        },
        store, {1e-6, 0, seed, true});
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("region dice examples") {
  const std::size_t n = 20;
  Tensor a({n}), b({n});
  for (std::size_t i = 0; i < 8; ++i) a[i] = kEnhancing;
  for (std::size_t i = 2; i < 10; ++i) b[i] = kEnhancing;
  CHECK(region_dice(a, b, Region::ET) == 0.75);
  CHECK(region_dice(a, a, Region::ET) == 1.0);
  CHECK(region_dice(Tensor({n}), Tensor({n}), Region::WT) == 1.0);
  const Tensor left = region_map({{0, 1}, {1, 2}}, n);
  const Tensor right = region_map({{5, 3}, {6, 2}}, n);
  CHECK(region_dice(left, right, Region::WT) == 0.0);
  CHECK(region_dice(left, right, Region::TC) == 0.0);
}

TEST_CASE("region dice matches a counting oracle and is symmetric") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor p = random_labels({5, 5, 5}, 200 + seed);
    const Tensor t = random_labels({5, 5, 5}, 300 + seed);
    for (Region r : kRegions) {
      std::size_t both = 0, np = 0, nt = 0;
      for (std::size_t v = 0; v < p.size(); ++v) {
        const bool in_p = in_region(static_cast<int>(p[v]), r);
        const bool in_t = in_region(static_cast<int>(t[v]), r);
        both += in_p && in_t;
        np += in_p;
        nt += in_t;
      }
      const double expected = 2.0 * static_cast<double>(both) / static_cast<double>(np + nt);
      CHECK(std::abs(region_dice(p, t, r) - expected) < 1e-15);
      CHECK(region_dice(p, t, r) == region_dice(t, p, r));
    }
    // Relabelling classes outside the ET set leaves ET Dice unchanged.
    Tensor q = p;
    for (auto& v : q.data())
      if (v == 1.0) v = 2.0;
    CHECK(region_dice(q, t, Region::ET) == region_dice(p, t, Region::ET));
  }
}

TEST_CASE("region membership and argmax ties") {
  CHECK(in_region(1, Region::WT));
  CHECK(in_region(2, Region::WT));
  CHECK(!in_region(2, Region::TC));
  CHECK(in_region(1, Region::TC));
  CHECK(in_region(3, Region::ET));
  CHECK(!in_region(0, Region::WT));
  Tensor scores({4, 2});
  scores.at(1, 0) = 1.0, scores.at(3, 0) = 1.0;
  const Tensor labels = argmax_labels(scores);
  CHECK(labels[0] == 1.0);
  CHECK(labels[1] == 0.0);
}
