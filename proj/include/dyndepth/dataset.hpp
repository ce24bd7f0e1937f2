#pragma once

// In-memory sequence and its on-disk layout:
//
//   cameras.json
//   init_depth/NNNN.pfm      initial depth per frame
//   gt_depth/NNNN.pfm        optional ground truth
//   sparse_depth/NNNN.pfm    optional sparse depth (0 = no sample)
//   flow/NNNN_MMMM.flo       v_{NNNN -> MMMM} for every scheduled pair
//   masks/NNNN.pgm           optional motion mask (255 = static)
//   spec.json                optional generator spec echo

#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "dyndepth/flow.hpp"
#include "dyndepth/geometry.hpp"
#include "dyndepth/raster.hpp"

namespace dyndepth {

struct Sequence {
  std::vector<Camera> cameras;
  std::vector<Raster<double>> init_depth;
  std::vector<Raster<double>> gt_depth;
  std::vector<Raster<double>> sparse_depth;
  std::vector<MotionMask> motion_masks;
  std::map<FramePair, FlowField> flows;
  std::map<FramePair, OcclusionMask> occlusion;
  nlohmann::json spec;

  int frame_count() const { return static_cast<int>(cameras.size()); }
  int width() const { return cameras.empty() ? 0 : cameras.front().width; }
  int height() const { return cameras.empty() ? 0 : cameras.front().height; }
  bool has_motion_masks() const { return !motion_masks.empty(); }
  bool has_gt() const { return !gt_depth.empty(); }

  /// Structural error when the pair has no flow or mask.
  const FlowField& flow(FramePair pair) const;
  const OcclusionMask& occlusion_of(FramePair pair) const;
};

/// Fills `occlusion` for every pair whose reverse flow is also present.
void compute_occlusion_masks(Sequence& seq);

/// Checks sizes, frame indices and pair coverage of the schedule.
void validate(const Sequence& seq);

/// Reads a dataset directory; occlusion masks are derived on load.
Sequence load_sequence(const std::filesystem::path& dir);

/// Writes every present component of the layout.
void save_sequence(const std::filesystem::path& dir, const Sequence& seq);

std::string frame_file(int frame, const char* extension);
std::string pair_file(FramePair pair, const char* extension);

}  // namespace dyndepth
