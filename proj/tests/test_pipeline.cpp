#include "d3seg/checkpoint.hpp"
#include "d3seg/commands.hpp"
#include "d3seg/egdr.hpp"
#include "d3seg/evaluate.hpp"
#include "d3seg/losses.hpp"
#include "d3seg/training.hpp"
#include "d3seg/volume_io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace d3seg;
using d3seg::test::random_tensor;
using d3seg::test::TempDir;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const fs::path& root) {
  RunConfig c;
  c.size = 16;
  c.levels = 2;
  c.base_channels = 4;
  c.train_samples = 4;
  c.test_samples = 2;
  c.epochs_seg = 2;
  c.epochs_diffusion = 2;
  c.epochs_refine = 1;
  c.learning_rate = 1e-3;
  c.lr_diffusion = 1e-3;
  c.lr_refine = 1e-3;
  c.diffusion_steps = 16;
  c.sampling_steps = 4;
  c.data_dir = (root / "data").string();
  c.checkpoint_dir = (root / "ck").string();
  c.report_path = (root / "report.csv").string();
  return c;
}

std::string slurp(const fs::path& p) { return io_detail::read_file(p); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(D3SEG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config round trip and diagnostics") {
  RunConfig c;
  c.seed = 17;
  c.learning_rate = 0.1 + 0.2;
  c.lambda_e = 1.0 / 3.0;
  c.augment = false;
  c.mask_curriculum = "full";
  CHECK(parse_config(write_config(c)) == c);
  CHECK(parse_config("# comment\n\nseed = 5   # trailing\n").seed == 5);

  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("seed = 1\nbogus = 2\n").find("line 2") != std::string::npos);
  CHECK(message("seed = 1\nbogus = 2\n").find("bogus") != std::string::npos);
  CHECK(message("epochs_seg = ten\n").find("epochs_seg") != std::string::npos);
  CHECK(message("size = 36\n").find("divisible") != std::string::npos);
  CHECK(!message("mask_curriculum = random\n").empty());
  CHECK(!message("no equals sign\n").empty());
}

TEST_CASE("checkpoint round trip, size arithmetic and error categories") {
  TempDir dir("checkpoint");
  ParamStore store;
  store.add("a.w", random_tensor({2, 3}, 1));
  store.add("b", random_tensor({4}, 2));
  const fs::path path = dir.path / "x.d3ck";
  save_checkpoint(store, path);
  const std::size_t expected = 12 + (2 + 3 + 4 + 8 + 8 * 6) + (2 + 1 + 4 + 4 + 8 * 4);
  CHECK(checkpoint_file_size(store) == expected);
  CHECK(fs::file_size(path) == expected);

  const ParamStore back = load_checkpoint(path);
  CHECK(back.names() == store.names());
  for (const auto& name : store.names()) CHECK(bitwise_equal(back.value(name), store.value(name)));

  ParamStore target;
  target.add("a.w", Tensor({2, 3}));
  target.add("b", Tensor({4}));
  load_checkpoint_into(target, path);
  CHECK(bitwise_equal(target.value("b"), store.value("b")));

  const std::string bytes = slurp(path);
  auto kind_of = [&](const std::string& image) {
    io_detail::write_file(dir.path / "bad.d3ck", image);
    try {
      load_checkpoint(dir.path / "bad.d3ck");
    } catch (const FormatError& e) {
      return e.kind();
    }
    return FormatErrorKind::Io;
  };
  std::string version = bytes;
  version[4] = 2;
  CHECK(kind_of(version) == FormatErrorKind::UnsupportedVersion);
  std::string magic = bytes;
  magic[1] = 'Z';
  CHECK(kind_of(magic) == FormatErrorKind::BadMagic);
  CHECK(kind_of(bytes.substr(0, bytes.size() - 1)) == FormatErrorKind::Truncated);

  ParamStore smaller;
  smaller.add("a.w", Tensor({2, 3}));
  try {
    load_checkpoint_into(smaller, path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::UnknownParameter);
  }
  ParamStore reshaped;
  reshaped.add("a.w", Tensor({3, 2}, 7.0));
  reshaped.add("b", Tensor({4}, 7.0));
  try {
    load_checkpoint_into(reshaped, path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::ShapeMismatch);
  }
  CHECK(reshaped.value("b")[0] == 7.0);

  ParamStore bad;
  bad.add("nan", Tensor({1}, std::nan("")));
  CHECK_THROWS(save_checkpoint(bad, dir.path / "nan.d3ck"));
}

TEST_CASE("phase filters partition the parameters") {
  NetworkConfig net;
  net.levels = 2;
  net.base_channels = 4;
  net.input_size = 16;
  const Model model = make_model(net, 3);
  for (const auto& e : model.params) {
    const int owners = phase_trains(Phase::Segmentation, e.name) + phase_trains(Phase::Diffusion, e.name) +
                       phase_trains(Phase::Refinement, e.name);
    const bool normalisation = e.name == "den.latent_shift" || e.name == "den.latent_scale";
    CHECK_MESSAGE(owners == (normalisation ? 0 : 1), e.name);
  }
  CHECK(parse_phase("refine") == Phase::Refinement);
  CHECK_THROWS(parse_phase("finetune"));
}

TEST_CASE("phase objectives equal the sum of their parts") {
  NetworkConfig net;
  net.levels = 2;
  net.base_channels = 4;
  net.input_size = 16;
  Model model = make_model(net, 4);
  const auto sample = gen_phantom(9, 16);
  const auto sched = make_schedule(16);
  const ModalityMask mask(true, true, false, true);

  Tape tape;
  ParamBinding p(tape, model.params);
  const auto seg = total_loss(p, model, sample, mask, Phase::Segmentation, sched);
  CHECK(seg.total.value()[0] == seg.dice_ce);

  const auto refine = total_loss(p, model, sample, mask, Phase::Refinement, sched, std::nullopt, 0.7);
  CHECK(std::abs(refine.total.value()[0] - (refine.dice_ce + 0.7 * refine.bce)) < 1e-14);
  const RefinedOutput out = refine_forward(p, model, sample.modalities, mask);
  const Tensor target = error_target(out.logits.value(), sample.labels);
  Tape t2;
  CHECK(std::abs(refine.bce - bce_loss(t2.constant(out.error.value()), target).value()[0]) < 1e-14);

  CounterRng rng(1);
  const DiffusionDraw draw{5, standard_normal(model.den.latent_shape, rng)};
  const auto diff = total_loss(p, model, sample, mask, Phase::Diffusion, sched, draw);
  CHECK(diff.total.value()[0] == diff.mse);
  CHECK(diff.mse > 0.0);
}

TEST_CASE("prediction ignores imputation when T1ce is present") {
  NetworkConfig net;
  net.levels = 2;
  net.base_channels = 4;
  net.input_size = 16;
  const Model model = make_model(net, 5);
  const auto sample = gen_phantom(10, 16);
  InferenceOptions with, without;
  without.use_imputation = false;
  with.diffusion_steps = without.diffusion_steps = 16;
  with.sampling_steps = without.sampling_steps = 4;
  const auto a = predict(model, sample.modalities, ModalityMask::full(), with);
  const auto b = predict(model, sample.modalities, ModalityMask::full(), without);
  CHECK(!a.imputed);
  CHECK(bitwise_equal(a.probs, b.probs));
  const auto c = predict(model, sample.modalities, ModalityMask(true, true, false, false), with);
  CHECK(c.imputed);
  for (std::size_t v = 0; v < 16 * 16 * 16; ++v) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += c.probs[k * 4096 + v];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("seg training loss decreases on small phantoms") {
  TempDir dir("seg_decrease");
  RunConfig c = tiny_config(dir.path);
  c.train_samples = 16;
  c.epochs_seg = 8;
  c.learning_rate = 2e-3;
  const auto corpus = generate_corpus(100, 16, 16);
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    c.seed = seed;
    Model model = make_model(c.network(), seed);
    const PhaseReport report = train_phase(model, c, Phase::Segmentation, corpus);
    REQUIRE(report.epoch_loss.size() == 8);
    decreased += report.epoch_loss.back() < report.epoch_loss.front();
  }
  CHECK(decreased == 3);
}

TEST_CASE("commands are deterministic end to end") {
  TempDir dir("commands");
  const RunConfig c = tiny_config(dir.path);
  const Manifest m = cmd_gen_data(c.data_dir, 6, 16, 40);
  REQUIRE(m.entries.size() == 6);
  std::size_t volumes = 0;
  for (const auto& entry : fs::directory_iterator(c.data_dir)) volumes += entry.path().extension() == ".d3sv";
  CHECK(volumes == 12);
  const Manifest read = read_manifest(c.data_dir);
  for (std::size_t i = 0; i < 6; ++i) CHECK(read.entries[i].seed == 40 + i);
  const std::string first = slurp(fs::path(c.data_dir) / "sample_0003_modalities.d3sv");
  cmd_gen_data(c.data_dir, 6, 16, 40);
  CHECK(slurp(fs::path(c.data_dir) / "sample_0003_modalities.d3sv") == first);

  CHECK_THROWS_AS(cmd_train(c, Phase::Refinement), PrerequisiteError);
  CHECK_THROWS_AS(cmd_eval(c, c.report_path, {}), PrerequisiteError);

  std::vector<std::string> hashes;
  for (int run = 0; run < 2; ++run) {
    for (Phase phase : {Phase::Segmentation, Phase::Diffusion, Phase::Refinement}) cmd_train(c, phase);
    std::string all;
    for (const char* name : {"seg.d3ck", "diffusion.d3ck", "refine.d3ck", "seg_loss.csv"})
      all += slurp(fs::path(c.checkpoint_dir) / name);
    hashes.push_back(all);
  }
  CHECK(hashes[0] == hashes[1]);

  cmd_eval(c, c.report_path, {});
  const std::string report = slurp(c.report_path);
  cmd_eval(c, c.report_path, {});
  CHECK(slurp(c.report_path) == report);
  CHECK(report.rfind("config,WT,TC,ET\n", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 16);
  CHECK(fs::exists(text_report_path(c.report_path)));

  const fs::path no_impute = dir.path / "no_impute.csv";
  cmd_eval(c, no_impute, {true, false, false});
  const std::string full_row = report.substr(report.rfind("F+T1+T1c+T2"));
  const std::string other = slurp(no_impute);
  CHECK(other.substr(other.rfind("F+T1+T1c+T2")) == full_row);

  const fs::path z1 = dir.path / "z1.d3sv", z2 = dir.path / "z2.d3sv";
  const Tensor latent = cmd_impute(checkpoint_path(c, Phase::Diffusion), 4, 7, z1, 16);
  cmd_impute(checkpoint_path(c, Phase::Diffusion), 4, 7, z2, 16);
  CHECK(slurp(z1) == slurp(z2));
  CHECK(latent.shape() == c.network().latent_shape());
}

TEST_CASE("command-line exit codes") {
  TempDir dir("cli");
  const RunConfig c = tiny_config(dir.path);
  const fs::path config = dir.path / "run.cfg";
  save_config(config, c);
  CHECK(run_cli("gen-data --out " + c.data_dir + " --count 3 --size 16 --seed 2") == 0);
  CHECK(run_cli("train --config " + config.string() + " --phase refine") == 4);
  CHECK(run_cli("eval --config " + config.string()) == 4);

  const fs::path broken = dir.path / "broken.cfg";
  io_detail::write_file(broken, "seed = 1\nunknown_key = 3\n");
  CHECK(run_cli("train --config " + broken.string() + " --phase seg") == 2);

  const fs::path garbage = dir.path / "garbage.d3ck";
  io_detail::write_file(garbage, "not a checkpoint");
  CHECK(run_cli("impute --checkpoint " + garbage.string() + " --out " + (dir.path / "z.d3sv").string()) == 3);
  CHECK(run_cli("train --config " + config.string() + " --phase polish") != 0);
}
