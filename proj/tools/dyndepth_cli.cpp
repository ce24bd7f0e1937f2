#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "dyndepth/dyndepth.h"

namespace {

constexpr int kExitInput = 2;

int report(dd_status status) {
  if (status == DD_OK) return 0;
  std::cerr << "dyndepth: " << dd_last_error() << "\n";
  return status == DD_ERR_DIVERGED ? 3 : kExitInput;
}

int gen_cube(const std::string& spec_path, const std::string& out,
             std::optional<std::uint64_t> seed) {
  nlohmann::json spec = nlohmann::json::object();
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) {
      std::cerr << "dyndepth: cannot read spec file " << spec_path << "\n";
      return kExitInput;
    }
    try {
      spec = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "dyndepth: invalid spec JSON: " << e.what() << "\n";
      return kExitInput;
    }
    if (!spec.is_object()) {
      std::cerr << "dyndepth: cube spec must be a JSON object\n";
      return kExitInput;
    }
  }
  if (seed) spec["seed"] = *seed;
  return report(dd_generate_cube(spec.dump().c_str(), out.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // training allocates and frees large tape buffers every step; keep them on
  // the heap instead of mapping fresh pages each time
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Depth estimation for dynamic monocular video"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dd_version()));

  std::string spec_path, out, dataset, run, gt, region = "all", kind;
  std::optional<std::uint64_t> cube_seed;
  int index = 0;

  auto* gen = app.add_subcommand("gen-cube", "Write the synthetic cube dataset");
  gen->add_option("--spec", spec_path, "Scene spec JSON (defaults if omitted)")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--seed", cube_seed, "Noise seed (overrides the spec)");

  dd_train_options opts;
  dd_train_options_init(&opts);
  std::string mode = opts.mode;
  bool unnormalized = false, resume = false, quiet = false;
  auto* train = app.add_subcommand("train", "Optimize depth and scene flow");
  train->add_option("--dataset", dataset, "Dataset directory")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--mode", mode, "full | analytic_baseline | no_prior | static_mask")
      ->capture_default_str();
  train->add_option("--epochs", opts.epochs, "Total epochs, warm-up included")
      ->capture_default_str();
  train->add_option("--warmup-epochs", opts.warmup_epochs)->capture_default_str();
  train->add_option("--alpha", opts.alpha, "Disparity loss weight")->capture_default_str();
  train->add_option("--beta", opts.beta, "Scene-flow prior weight")->capture_default_str();
  train->add_option("--gamma", opts.gamma, "Static-region weight")->capture_default_str();
  train->add_option("--lr-depth", opts.lr_depth)->capture_default_str();
  train->add_option("--lr-sceneflow", opts.lr_sceneflow)->capture_default_str();
  train->add_option("--seed", opts.seed)->capture_default_str();
  train->add_flag("--unnormalized-losses", unnormalized,
                  "Sum loss terms instead of averaging them");
  train->add_option("--bands", opts.bands, "Positional encoding bands")
      ->capture_default_str();
  train->add_option("--hidden-layers", opts.hidden_layers)->capture_default_str();
  train->add_option("--hidden-width", opts.hidden_width)->capture_default_str();
  train->add_flag("--resume", resume, "Continue an interrupted run");
  train->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* eval = app.add_subcommand("eval", "Depth metrics against ground truth");
  eval->add_option("--run", run, "Run directory")->required();
  eval->add_option("--dataset", gt, "Dataset with ground-truth depth")->required();
  eval->add_option("--region", region, "all | static | dynamic")
      ->capture_default_str();
  eval->add_option("--out", out, "Write the JSON here instead of stdout");

  auto* exp = app.add_subcommand("export", "Export a visualization");
  exp->add_option("--run", run, "Run directory")->required();
  exp->add_option("--kind", kind, "pointcloud | xt_slice | sceneflow")->required();
  exp->add_option("--frame,--row", index, "Frame index (row for xt_slice)")
      ->capture_default_str();
  exp->add_option("--out", out, "Output file (.ply, .pfm or .pgm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  if (*gen) return gen_cube(spec_path, out, cube_seed);
  if (*train) {
    opts.mode = mode.c_str();
    opts.unnormalized_losses = unnormalized;
    opts.resume = resume;
    opts.verbose = !quiet;
    return report(dd_train(dataset.c_str(), out.c_str(), &opts));
  }
  if (*eval) {
    char* json = nullptr;
    const dd_status s = dd_evaluate(run.c_str(), gt.c_str(), region.c_str(), &json);
    if (s != DD_OK) return report(s);
    int code = 0;
    if (out.empty()) {
      std::fputs(json, stdout);
    } else {
      std::ofstream f(out, std::ios::binary);
      f << json;
      if (!f) {
        std::cerr << "dyndepth: cannot write " << out << "\n";
        code = kExitInput;
      }
    }
    dd_free(json);
    return code;
  }
  return report(dd_export(run.c_str(), kind.c_str(), index, out.c_str()));
}
