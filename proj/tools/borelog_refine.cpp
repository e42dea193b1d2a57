#include <CLI11.hpp>

#include <iostream>

#include "borelog/pipeline.hpp"

using namespace borelog;

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised borehole-image segmentation: stage runner"};
  std::string command, config_path, methods, epochs_override, out;
  std::optional<std::uint64_t> seed;
  bool force = false, quiet = false;
  app.add_option("command", command, "extract | denoise | pseudolabel | train | evaluate | ablate | synth | report | all")
      ->required()
      ->check(CLI::IsMember({"extract", "denoise", "pseudolabel", "train", "evaluate", "ablate", "synth", "report", "all"}));
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--epochs-override", epochs_override, "training epochs: N for every model, or AE/REFINERS");
  app.add_option("--methods", methods, "comma-separated method list");
  app.add_option("--out", out, "output directory");
  app.add_flag("--force", force, "recompute finished stages; let report combine differing config hashes");
  app.add_flag("-q,--quiet", quiet, "no progress output");
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? parse_config_string("") : load_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (!epochs_override.empty()) apply_setting(cfg, "epochs_override", epochs_override, "--epochs-override");
    if (!methods.empty()) apply_setting(cfg, "methods", methods, "--methods");
    if (!out.empty()) cfg.out = out;
    pipeline::Context ctx(std::move(cfg), force);
    if (quiet) ctx.log = nullptr;
    if (command == "all") {
      for (const char* stage : {"extract", "denoise", "pseudolabel", "train", "evaluate", "ablate", "report"})
        pipeline::run_stage(ctx, stage);
    } else {
      pipeline::run_stage(ctx, command);
    }
  } catch (const std::exception& e) {
    std::cerr << "borelog-refine " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
