#pragma once

#include "d3seg/network.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace d3seg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Run configuration. File form: one `key = value` per line, `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t size = 32;
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::size_t train_samples = 64;
  std::size_t test_samples = 16;
  std::size_t epochs_seg = 100;
  std::size_t epochs_diffusion = 100;
  std::size_t epochs_refine = 100;
  double learning_rate = 2e-4;
  double lr_diffusion = 2e-4;
  double lr_refine = 2e-4;
  std::size_t batch_size = 2;
  std::size_t diffusion_steps = 64;
  std::size_t sampling_steps = 16;
  double lambda_e = 0.5;
  bool augment = true;
  /// "uniform": one of the 15 configurations per batch; "full": always all four.
  std::string mask_curriculum = "uniform";
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_path = "report.csv";

  /// Throws ConfigError naming the first out-of-range field.
  void validate() const;
  NetworkConfig network() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every field, in declaration order; parse_config(write_config(c)) == c.
std::string write_config(const RunConfig& config);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace d3seg
