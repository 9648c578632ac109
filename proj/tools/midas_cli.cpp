// SPDX-License-Identifier: Apache-2.0
//
// midas: experiment runner.
//
//   midas synth-gen  --config cfg.ini --out runs/data
//   midas train      --config cfg.ini --mode midas --out runs/midas
//   midas diagnose   --config cfg.ini --checkpoint runs/midas/model.ckpt --out runs/diag
//   midas grad-check --config cfg.ini

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "midas/runner.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::optional<double> eta;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> warmup_epochs;
  bool no_warmup = false;
  bool no_wm = false;
  bool no_hs = false;
  bool alpha_reset = false;
  std::optional<std::string> out;
  std::optional<std::string> data;
};

midas::ExperimentConfig resolve(const Overrides& o) {
  midas::ExperimentConfig cfg = o.config.empty() ? midas::ExperimentConfig{} : midas::load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.mode) cfg.train.mode = midas::parse_mode(*o.mode);
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.eta) cfg.train.eta = *o.eta;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.warmup_epochs) {
    cfg.train.warmup_epochs = *o.warmup_epochs;
    cfg.warmup_epochs_set = true;
  }
  if (o.no_warmup) cfg.train.warmup = false;
  if (o.no_wm) cfg.train.weak_modality = false;
  if (o.no_hs) cfg.train.hard_sample = false;
  if (o.alpha_reset) cfg.train.alpha_reset_per_epoch = true;
  if (o.out) cfg.out_dir = *o.out;
  if (o.data) {
    cfg.data_source = "file";
    cfg.data_path = *o.data;
  }
  cfg.finalize();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Misaligned-sample training for imbalanced multimodal classification"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "run seed");
  app.add_option("--mode", o.mode, "training mode")->check(CLI::IsMember({"midas", "joint"}));
  app.add_option("--lambda", o.lambda, "misaligned loss weight");
  app.add_option("--eta", o.eta, "weak-modality weight step size");
  app.add_option("--epochs", o.epochs, "total epochs");
  app.add_option("--warmup-epochs", o.warmup_epochs, "unimodal warm-up epochs");
  app.add_flag("--no-warmup", o.no_warmup, "skip the unimodal warm-up phase");
  app.add_flag("--no-wm", o.no_wm, "freeze weak-modality weights at 1");
  app.add_flag("--no-hs", o.no_hs, "disable hard-sample weighting");
  app.add_flag("--alpha-reset-per-epoch", o.alpha_reset, "reset weak-modality weights every epoch");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--data", o.data, "feature file to use instead of the synthetic generator");

  auto* synth = app.add_subcommand("synth-gen", "write the configured synthetic dataset as a feature file");
  auto* train = app.add_subcommand("train", "train, evaluate, and write checkpoint/trace/report");
  auto* diagnose = app.add_subcommand("diagnose", "evaluate a checkpoint and write imbalance diagnostics");
  std::string checkpoint;
  diagnose->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  auto* gradcheck = app.add_subcommand("grad-check", "finite-difference check of every loss term");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? midas::kExitOk : midas::kExitConfig;
  }

  try {
    const midas::ExperimentConfig cfg = resolve(o);
    if (*synth) {
      std::cout << midas::run_synth_gen(cfg).string() << '\n';
    } else if (*train) {
      const auto art = midas::run_train(cfg);
      midas::write_report_csv(std::cout, art.report);
    } else if (*diagnose) {
      midas::write_report_csv(std::cout, midas::run_diagnose(cfg, checkpoint));
    } else if (*gradcheck) {
      return midas::exit_code(midas::run_gradcheck(cfg));
    }
  } catch (const midas::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return midas::kExitConfig;
  } catch (const midas::DimensionError& e) {
    std::cerr << "load error: " << e.what() << '\n';
    return midas::kExitConfig;
  } catch (const midas::ContractError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return midas::kExitConfig;
  } catch (const midas::FormatError& e) {
    std::cerr << "format error (" << midas::to_string(e.kind()) << "): " << e.what() << '\n';
    return midas::kExitIo;
  } catch (const midas::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return midas::kExitIo;
  }
  return midas::kExitOk;
}
