// d3seg command-line front end: gen-data, train, eval, impute.

#include "d3seg/commands.hpp"
#include "d3seg/volume_io.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kFormat = 3,
  kPrerequisite = 4,
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal phantom segmentation with graph fusion, latent imputation and refinement"};
  app.require_subcommand(1);

  std::string out_dir;
  std::size_t count = 0, size = 32;
  std::uint64_t data_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Write phantom volumes and a manifest");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--count", count, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Volume edge length")->check(CLI::Range(16, 64));
  gen->add_option("--seed", data_seed, "Seed of the first sample");

  std::string config_path, phase_name;
  auto* train = app.add_subcommand("train", "Train one phase");
  train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--phase", phase_name, "seg, diffusion or refine")
      ->required()
      ->check(CLI::IsMember({"seg", "diffusion", "refine"}));

  std::string report_path, ablation_path;
  d3seg::EvalFlags flags;
  auto* eval = app.add_subcommand("eval", "Dice table over the 15 modality configurations");
  eval->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report_path, "CSV report path (defaults to config report_path)");
  eval->add_flag("--no-impute", flags.no_impute, "Zero the missing T1ce bottleneck");
  eval->add_flag("--no-egdr", flags.no_egdr, "Use the initial probabilities");
  eval->add_flag("--no-mmgf", flags.no_mmgf, "Masked-mean fusion at every level");
  eval->add_option("--ablation-report", ablation_path,
                   "Also write cumulative mechanism variants under FLAIR + T1");

  std::string checkpoint, latent_out;
  std::size_t steps = 16;
  std::uint64_t impute_seed = 0;
  auto* impute = app.add_subcommand("impute", "Sample one T1ce latent");
  impute->add_option("--checkpoint", checkpoint, "Checkpoint with denoiser parameters")->required();
  impute->add_option("--steps", steps, "DDIM steps")->check(CLI::PositiveNumber);
  impute->add_option("--seed", impute_seed, "Sampler seed");
  impute->add_option("--out", latent_out, "Output D3SV path")->required();
  impute->add_option("--config", config_path, "Config supplying diffusion_steps")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto manifest = d3seg::cmd_gen_data(out_dir, count, size, data_seed);
      std::cout << "wrote " << manifest.entries.size() << " samples to " << out_dir << "\n";
    } else if (*train) {
      const auto config = d3seg::load_config(config_path);
      d3seg::cmd_train(config, d3seg::parse_phase(phase_name), &std::cout);
    } else if (*eval) {
      const auto config = d3seg::load_config(config_path);
      const std::string report = report_path.empty() ? config.report_path : report_path;
      std::optional<std::filesystem::path> ablation;
      if (!ablation_path.empty()) ablation = ablation_path;
      d3seg::cmd_eval(config, report, flags, ablation);
      std::cout << "wrote " << report << "\n";
    } else if (*impute) {
      const std::size_t total =
          config_path.empty() ? d3seg::RunConfig{}.diffusion_steps
                              : d3seg::load_config(config_path).diffusion_steps;
      const auto latent = d3seg::cmd_impute(checkpoint, steps, impute_seed, latent_out, total);
      std::cout << "wrote latent " << d3seg::to_string(latent.shape()) << " to " << latent_out
                << "\n";
    }
  } catch (const d3seg::ConfigError& e) {
    std::cerr << "error [config]: " << e.what() << "\n";
    return kConfig;
  } catch (const d3seg::FormatError& e) {
    std::cerr << "error [format]: " << e.what() << "\n";
    return kFormat;
  } catch (const d3seg::PrerequisiteError& e) {
    std::cerr << "error [prerequisite]: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
