#pragma once

// Two-phase schedule: scene-flow warm-up against frozen depth (beta = 0),
// then joint optimization; plus the analytic-scene-flow baseline that
// optimizes depth alone.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/dataset.hpp"
#include "dyndepth/depth_model.hpp"
#include "dyndepth/losses.hpp"
#include "dyndepth/scene_flow_net.hpp"

namespace dyndepth {

enum class TrainMode { full, analytic_baseline, no_prior, static_mask };

TrainMode parse_mode(const std::string& name);
const char* to_string(TrainMode mode) noexcept;

struct TrainConfig {
  int warmup_epochs = 5;
  int total_epochs = 20;  // includes the warm-up epochs
  double lr_depth = 1e-4;
  double lr_sceneflow = 1e-3;
  LossWeights weights{0.1, 1.0, kStaticWeight};  // gamma used by static_mask
  TrainMode mode = TrainMode::full;
  std::uint64_t seed = 0;
  bool normalized = true;
  int bands = 16;
  NetShape net_shape;
  double divergence_factor = 1e3;
  double divergence_floor = 1e-3;  // lower bound on the guard's reference loss

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

void validate(const TrainConfig& cfg);

/// Loss weights actually applied in a phase of the given mode.
LossWeights effective_weights(const TrainConfig& cfg, bool warmup);

struct StepRecord {
  std::uint64_t step = 0;
  int epoch = 0;  // 1-based
  FramePair pair;
  LossBreakdown loss;
  bool skipped = false;
};

struct TrainStats {
  std::uint64_t skipped_steps = 0;
  std::uint64_t nonfinite_events = 0;
  std::vector<std::size_t> pairs_per_epoch;
};

struct TrainState {
  ad::ParamStore params;
  std::vector<DepthField> depth;
  std::optional<SceneFlowNet> net;  // absent in analytic_baseline mode
  int epoch = 0;                    // completed epochs
  std::uint64_t step = 0;
  double last_epoch_mean = 0.0;
  TrainStats stats;

  std::vector<ad::BlockId> depth_ids() const { return depth_blocks(depth); }
  std::uint64_t depth_checksum() const;
};

/// Depth from the sequence's initial maps; a fresh network unless the mode
/// is analytic_baseline.
TrainState init_state(const Sequence& seq, const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch_end;
};

/// Pair visiting order of an epoch (1-based), seeded.
std::vector<FramePair> epoch_order(const Sequence& seq, std::uint64_t seed,
                                   int epoch);

/// Runs warm-up epochs (depth frozen, beta = 0) until
/// state.epoch == cfg.warmup_epochs.
void warmup(TrainState& state, const Sequence& seq, const TrainConfig& cfg,
            const TrainHooks& hooks = {});

/// Runs joint epochs until state.epoch == cfg.total_epochs.
void joint_train(TrainState& state, const Sequence& seq,
                 const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Depth-only optimization with analytic scene flow for every remaining
/// epoch. Non-finite steps are counted and skipped.
void train_analytic_baseline(TrainState& state, const Sequence& seq,
                             const TrainConfig& cfg,
                             const TrainHooks& hooks = {});

/// Resumes from state.epoch and runs the schedule of cfg.mode to the end.
/// Divergence is reported as an Error of kind `divergence`.
void train(TrainState& state, const Sequence& seq, const TrainConfig& cfg,
           const TrainHooks& hooks = {});

/// Current depth rasters.
std::vector<Raster<double>> depth_maps(const TrainState& state);

}  // namespace dyndepth
