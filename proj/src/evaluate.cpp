#include "d3seg/evaluate.hpp"

#include <cstdio>

namespace d3seg {

namespace {

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

std::string region_header(const std::string& first) {
  std::string out = first;
  for (Region r : kRegions) out += "," + std::string(region_name(r));
  return out + "\n";
}

}  // namespace

RegionScores evaluate_mask(const Model& model, std::span<const PhantomSample> test,
                           const ModalityMask& mask, const EvalOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  RegionScores total{};
  InferenceOptions inference;
  inference.use_mmgf = options.use_mmgf;
  inference.use_egdr = options.use_egdr;
  inference.use_imputation = options.use_imputation;
  inference.diffusion_steps = options.diffusion_steps;
  inference.sampling_steps = options.sampling_steps;
  const CounterRng root(options.seed);
  for (std::size_t i = 0; i < test.size(); ++i) {
    inference.imputation_seed = root.fork(i).next_u64();
    const Prediction pred = predict(model, test[i].modalities, mask, inference);
    for (std::size_t r = 0; r < kRegions.size(); ++r) {
      total[r] += region_dice(pred.labels, test[i].labels, kRegions[r]);
    }
  }
  for (auto& v : total) v /= static_cast<double>(test.size());
  return total;
}

DiceTable evaluate_all(const Model& model, std::span<const PhantomSample> test,
                       const EvalOptions& options) {
  DiceTable table;
  table.masks = enumerate_masks();
  for (const auto& mask : table.masks) table.dice.push_back(evaluate_mask(model, test, mask, options));
  return table;
}

std::vector<AblationRow> evaluate_ablation(const Model& model, std::span<const PhantomSample> test,
                                           const ModalityMask& mask, const EvalOptions& options) {
  struct Variant {
    const char* name;
    bool mmgf, impute, egdr;
  };
  constexpr std::array<Variant, 4> variants{{
      {"baseline", false, false, false},
      {"+MMGF", true, false, false},
      {"+diffusion", true, true, false},
      {"+EGDR", true, true, true},
  }};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    EvalOptions o = options;
    o.use_mmgf = v.mmgf;
    o.use_imputation = v.impute;
    o.use_egdr = v.egdr;
    rows.push_back({v.name, evaluate_mask(model, test, mask, o)});
  }
  return rows;
}

std::string table_csv(const DiceTable& table) {
  std::string out = region_header("config");
  for (std::size_t i = 0; i < table.masks.size(); ++i) {
    out += table.masks[i].label();
    for (double d : table.dice[i]) out += "," + fixed(d, 6);
    out += "\n";
  }
  return out;
}

std::string table_text(const DiceTable& table) {
  std::string out = pad("config", 12);
  for (Region r : kRegions) out += pad(std::string(region_name(r)), 8);
  out += "\n";
  RegionScores mean{};
  for (std::size_t i = 0; i < table.masks.size(); ++i) {
    out += pad(table.masks[i].label(), 12);
    for (std::size_t r = 0; r < kRegions.size(); ++r) {
      out += pad(fixed(100.0 * table.dice[i][r], 1), 8);
      mean[r] += table.dice[i][r] / static_cast<double>(table.masks.size());
    }
    out += "\n";
  }
  out += pad("mean", 12);
  for (double m : mean) out += pad(fixed(100.0 * m, 1), 8);
  return out + "\n";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = region_header("variant");
  for (const auto& row : rows) {
    out += row.name;
    for (double d : row.dice) out += "," + fixed(d, 6);
    out += "\n";
  }
  return out;
}

std::string ablation_text(const std::vector<AblationRow>& rows, const ModalityMask& mask) {
  std::string out = "available: " + mask.label() + "\n" + pad("variant", 12);
  for (Region r : kRegions) out += pad(std::string(region_name(r)), 8);
  out += "\n";
  for (const auto& row : rows) {
    out += pad(row.name, 12);
    for (double d : row.dice) out += pad(fixed(100.0 * d, 1), 8);
    out += "\n";
  }
  return out;
}

}  // namespace d3seg
