#include "d3seg/commands.hpp"

#include "d3seg/checkpoint.hpp"
#include "d3seg/evaluate.hpp"
#include "d3seg/losses.hpp"
#include "d3seg/training.hpp"
#include "d3seg/volume_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace d3seg {

namespace {

std::string sample_file(std::size_t index, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sample_%04zu_%s.d3sv", index, kind);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  io_detail::write_file(path, text);
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw PrerequisiteError("missing " + path.string() + " (" + hint + ")");
}

}  // namespace

Manifest cmd_gen_data(const fs::path& out, std::size_t count, std::size_t size,
                      std::uint64_t first_seed) {
  if (count == 0) throw std::invalid_argument("gen-data: count must be >= 1");
  ensure_dir(out);
  Manifest manifest{size, {}};
  std::string text = "d3seg-manifest 1\nsize " + std::to_string(size) +
                     "\nindex,seed,modalities,labels\n";
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + i;
    const PhantomSample sample = gen_phantom(seed, size);
    ManifestEntry entry{i, seed, sample_file(i, "modalities"), sample_file(i, "labels")};
    write_volume(out / entry.modalities_file, sample.modalities);
    write_volume(out / entry.labels_file, sample.labels);
    text += std::to_string(i) + "," + std::to_string(seed) + "," + entry.modalities_file + "," +
            entry.labels_file + "\n";
    manifest.entries.push_back(std::move(entry));
  }
  write_text(out / kManifestName, text);
  return manifest;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("missing " + path.string() + " (run gen-data first)");
  auto bad = [&](const std::string& why) {
    return FormatError(FormatErrorKind::BadMagic, path.string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != "d3seg-manifest 1") throw bad("not a d3seg manifest");
  Manifest manifest;
  if (!std::getline(in, line) || line.rfind("size ", 0) != 0) throw bad("missing size line");
  manifest.size = std::stoul(line.substr(5));
  if (!std::getline(in, line) || line != "index,seed,modalities,labels") throw bad("missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string index, seed;
    ManifestEntry e;
    if (!std::getline(row, index, ',') || !std::getline(row, seed, ',') ||
        !std::getline(row, e.modalities_file, ',') || !std::getline(row, e.labels_file)) {
      throw bad("malformed row '" + line + "'");
    }
    e.index = std::stoul(index);
    e.seed = std::stoull(seed);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<PhantomSample> load_dataset(const fs::path& dir, std::size_t first, std::size_t count,
                                        std::size_t expected_size) {
  const Manifest manifest = read_manifest(dir);
  if (manifest.size != expected_size) {
    throw ConfigError(dir.string() + " holds size-" + std::to_string(manifest.size) +
                      " phantoms, config expects " + std::to_string(expected_size));
  }
  if (first + count > manifest.entries.size()) {
    throw PrerequisiteError(dir.string() + " has " + std::to_string(manifest.entries.size()) +
                            " samples, need " + std::to_string(first + count));
  }
  const std::size_t s = expected_size;
  std::vector<PhantomSample> out;
  for (std::size_t i = first; i < first + count; ++i) {
    const auto& e = manifest.entries[i];
    PhantomSample sample{read_volume(dir / e.modalities_file), read_volume(dir / e.labels_file),
                         e.seed};
    if (sample.modalities.shape() != Shape{kModalityCount, s, s, s} ||
        sample.labels.shape() != Shape{s, s, s}) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        "sample " + std::to_string(i) + " in " + dir.string() +
                            " has unexpected shapes " + to_string(sample.modalities.shape()) +
                            " / " + to_string(sample.labels.shape()));
    }
    validate_labels(sample.labels);
    out.push_back(std::move(sample));
  }
  return out;
}

fs::path checkpoint_path(const RunConfig& config, Phase phase) {
  return fs::path(config.checkpoint_dir) / (std::string(phase_name(phase)) + ".d3ck");
}

fs::path loss_csv_path(const RunConfig& config, Phase phase) {
  return fs::path(config.checkpoint_dir) / (std::string(phase_name(phase)) + "_loss.csv");
}

Model load_model(const RunConfig& config, Phase phase) {
  const fs::path path = checkpoint_path(config, phase);
  require_file(path, "train the " + std::string(phase_name(phase)) + " phase first");
  Model model = make_model(config.network(), config.seed);
  load_checkpoint_into(model.params, path);
  return model;
}

void cmd_train(const RunConfig& config, Phase phase, std::ostream* log) {
  config.validate();
  Model model = make_model(config.network(), config.seed);
  switch (phase) {
    case Phase::Segmentation: break;
    case Phase::Diffusion:
      model = load_model(config, Phase::Segmentation);
      break;
    case Phase::Refinement:
      require_file(checkpoint_path(config, Phase::Segmentation), "train the seg phase first");
      model = load_model(config, Phase::Diffusion);
      break;
  }
  const auto samples = load_dataset(config.data_dir, 0, config.train_samples, config.size);
  const PhaseReport report = train_phase(model, config, phase, samples, log);
  ensure_dir(config.checkpoint_dir);
  save_checkpoint(model.params, checkpoint_path(config, phase));
  write_loss_csv(loss_csv_path(config, phase), report);
}

fs::path text_report_path(const fs::path& report) {
  fs::path text = report;
  return text.extension() == ".txt" ? text.replace_extension(".table.txt")
                                    : text.replace_extension(".txt");
}

void cmd_eval(const RunConfig& config, const fs::path& report, const EvalFlags& flags,
              const std::optional<fs::path>& ablation_report) {
  config.validate();
  const Model model = load_model(config, Phase::Refinement);
  const auto test =
      load_dataset(config.data_dir, config.train_samples, config.test_samples, config.size);
  EvalOptions options;
  options.use_mmgf = !flags.no_mmgf;
  options.use_imputation = !flags.no_impute;
  options.use_egdr = !flags.no_egdr;
  options.diffusion_steps = config.diffusion_steps;
  options.sampling_steps = config.sampling_steps;
  options.seed = config.seed;

  if (report.has_parent_path()) ensure_dir(report.parent_path());
  const DiceTable table = evaluate_all(model, test, options);
  write_text(report, table_csv(table));
  write_text(text_report_path(report), table_text(table));

  if (ablation_report) {
    if (ablation_report->has_parent_path()) ensure_dir(ablation_report->parent_path());
    const ModalityMask mask(true, true, false, false);
    const auto rows = evaluate_ablation(model, test, mask, options);
    write_text(*ablation_report, ablation_csv(rows));
    write_text(text_report_path(*ablation_report), ablation_text(rows, mask));
  }
}

Tensor cmd_impute(const fs::path& checkpoint, std::size_t steps, std::uint64_t seed,
                  const fs::path& out, std::size_t diffusion_steps) {
  require_file(checkpoint, "train the diffusion phase first");
  const ParamStore store = load_checkpoint(checkpoint);
  if (!store.contains("den.pos")) {
    throw FormatError(FormatErrorKind::ShapeMismatch,
                      checkpoint.string() + " holds no denoiser parameters");
  }
  const Shape& pos = store.value("den.pos").shape();
  const auto side = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(pos.at(0)))));
  if (side * side * side != pos.at(0)) {
    throw FormatError(FormatErrorKind::ShapeMismatch,
                      checkpoint.string() + ": den.pos token count " + std::to_string(pos[0]) +
                          " is not a cube");
  }
  const DenoiserConfig den{{pos.at(1), side, side, side}, 4};
  den.validate();
  const NoiseSchedule sched = make_schedule(diffusion_steps);
  Tensor latent = sample_latent(store, den, sched, steps, seed);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_volume(out, latent);
  return latent;
}

}  // namespace d3seg
