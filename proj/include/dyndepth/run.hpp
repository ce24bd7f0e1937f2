#pragma once

// Run directory layout:
//
//   manifest.json               config, seed, dataset, epoch cursor, artifacts
//   loss.csv                    step,epoch,l2d,ldisp,lprior,lstatic,total
//   state.bin                   full parameter + optimizer state (resume)
//   checkpoints/eNNNN/          per-epoch sceneflow.bin and depth/NNNN.pfm
//   depth/NNNN.pfm, sceneflow.bin   latest parameters
//   .lock                       held while a process writes the run

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "dyndepth/evaluation.hpp"
#include "dyndepth/trainer.hpp"

namespace dyndepth {

namespace fs = std::filesystem;

/// Exclusive advisory lock on <dir>/.lock; io error when already held.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

struct RunOptions {
  fs::path dataset;
  fs::path out;
  TrainConfig config;
  bool resume = false;
  std::ostream* log = nullptr;  // one line per epoch when set
  /// Called after each epoch has been persisted.
  std::function<void(const TrainState&)> on_epoch_end;
};

struct RunSummary {
  int epochs = 0;
  std::uint64_t steps = 0;
  double last_epoch_mean = 0.0;
  double scale = 1.0;
  TrainStats stats;
};

/// Trains on the dataset and writes the run directory. Errors propagate as
/// dyndepth::Error (divergence, config, io, ...).
RunSummary run_training(const RunOptions& options);

/// Scale applied to camera translations: the sparse-depth alignment when the
/// dataset has sparse depth, 1 otherwise.
double sequence_scale(const Sequence& seq);

/// Loads the state saved in state.bin (parameters, Adam moments, cursor).
TrainState load_state(const fs::path& run_dir);

struct LoadedRun {
  nlohmann::json manifest;
  Sequence seq;  // translations already scaled
  TrainState state;
};

/// Reads a finished or interrupted run together with its dataset.
LoadedRun load_run(const fs::path& run_dir);

/// Metrics of the run's latest depth against `gt_dataset` ground truth.
nlohmann::json evaluate_run(const fs::path& run_dir,
                            const fs::path& gt_dataset, Region region,
                            double cutoff = 80.0);

enum class ExportKind { pointcloud, xt_slice, sceneflow };

ExportKind parse_export_kind(const std::string& name);

/// pointcloud: ASCII PLY of frame `index`; xt_slice: row `index` of the
/// depth maps; sceneflow: projected scene-flow magnitude of frame `index`.
/// Rasters are written as PFM, or as normalized PGM when `out` ends in .pgm.
void export_run(const fs::path& run_dir, ExportKind kind, int index,
                const fs::path& out);

/// ASCII PLY with one vertex per pixel with positive finite depth.
std::string pointcloud_ply(const Camera& camera, const Raster<double>& depth);

}  // namespace dyndepth
