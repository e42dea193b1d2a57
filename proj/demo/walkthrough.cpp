// Builds a small synthetic well, runs every stage through the pipeline API
// and prints the agreement of each method with the pseudo-labels and with the
// generator's ground truth.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

#include "borelog/pipeline.hpp"

using namespace borelog;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "borelog_demo";
  try {
    RunConfig cfg = parse_config_string(
        "seed = 42\n"
        "synth.regime = banded\n"
        "synth.rows = 320\n"
        "synth.cols = 64\n"
        "slice_height = 320\n"
        "broad_step = 320\n"
        "min_valid_height = 300\n"
        "epochs_override = 15/80\n"
        "methods = raw_otsu,ae_otsu,ae_kmeans,image_only,concat,cgdca\n");
    cfg.data_root = (root / "data").string();
    cfg.out = (root / "out").string();

    RunConfig synth = cfg;
    synth.out = cfg.data_root;
    pipeline::cmd_synth(pipeline::Context(synth));

    const pipeline::Context ctx(cfg);
    for (const char* stage : {"extract", "denoise", "pseudolabel", "train", "evaluate", "report"}) pipeline::run_stage(ctx, stage);

    std::map<std::string, std::map<std::string, double>> table;
    for (const auto& row : pipeline::read_long(ctx.out / "evaluation.csv"))
      if (row.metric == "acc_pseudo" || row.metric == "acc_truth") table[row.method][row.metric] = std::stod(row.value);

    std::cout << "\n" << std::left << std::setw(12) << "method" << std::right << std::setw(12) << "vs pseudo" << std::setw(12)
              << "vs truth" << "\n";
    for (const auto& m : cfg.methods)
      std::cout << std::left << std::setw(12) << m << std::right << std::fixed << std::setprecision(4) << std::setw(12)
                << table[m]["acc_pseudo"] << std::setw(12) << table[m]["acc_truth"] << "\n";
    std::cout << "\nartifacts in " << ctx.out.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "demo: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
