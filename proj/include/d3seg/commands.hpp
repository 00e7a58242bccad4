#pragma once

#include "d3seg/config.hpp"
#include "d3seg/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace d3seg {

/// A command needs an artefact an earlier command produces.
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::string modalities_file;
  std::string labels_file;
};

struct Manifest {
  std::size_t size = 0;
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.csv";

/// Writes `count` phantoms with seeds first_seed .. first_seed + count - 1 as
/// sample_NNNN_{modalities,labels}.d3sv plus manifest.csv.
Manifest cmd_gen_data(const std::filesystem::path& out, std::size_t count, std::size_t size,
                      std::uint64_t first_seed);

Manifest read_manifest(const std::filesystem::path& dir);
/// Entries [first, first + count) of a generated data directory.
std::vector<PhantomSample> load_dataset(const std::filesystem::path& dir, std::size_t first,
                                        std::size_t count, std::size_t expected_size);

std::filesystem::path checkpoint_path(const RunConfig& config, Phase phase);
std::filesystem::path loss_csv_path(const RunConfig& config, Phase phase);

/// Trains one phase from the data directory and writes <phase>.d3ck and
/// <phase>_loss.csv into the checkpoint directory. diffusion starts from seg.d3ck,
/// refine from diffusion.d3ck.
void cmd_train(const RunConfig& config, Phase phase, std::ostream* log = nullptr);

/// Loads the named phase checkpoint into a freshly built model for `config`.
Model load_model(const RunConfig& config, Phase phase);

struct EvalFlags {
  bool no_impute = false;
  bool no_egdr = false;
  bool no_mmgf = false;
};

/// Writes the 15 x 3 Dice table to `report` (CSV) and its aligned-text form next
/// to it (.txt). With `ablation_report`, also writes the four cumulative variants
/// under FLAIR + T1.
void cmd_eval(const RunConfig& config, const std::filesystem::path& report, const EvalFlags& flags,
              const std::optional<std::filesystem::path>& ablation_report = std::nullopt);

/// Text companion of a CSV report path.
std::filesystem::path text_report_path(const std::filesystem::path& report);

/// Samples one T1ce latent from a checkpoint holding the denoiser and writes it as D3SV.
/// `diffusion_steps` is the training schedule length T.
Tensor cmd_impute(const std::filesystem::path& checkpoint, std::size_t steps, std::uint64_t seed,
                  const std::filesystem::path& out, std::size_t diffusion_steps = 64);

}  // namespace d3seg
