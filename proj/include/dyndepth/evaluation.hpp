#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/depth_model.hpp"
#include "dyndepth/flow.hpp"
#include "dyndepth/scene_flow_net.hpp"

namespace dyndepth {

enum class Region { all, static_region, dynamic };

Region parse_region(const std::string& name);  // "all" | "static" | "dynamic"
const char* to_string(Region r) noexcept;

enum class CutoffSide { gt, pred, both };

struct EvalConfig {
  double cutoff = 80.0;
  CutoffSide cutoff_side = CutoffSide::gt;
  Region region = Region::all;
  double scale = 1.0;  // predictions are divided by this once
};

struct DepthMetrics {
  double l1_rel = 0.0;
  double log_rmse = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// Pooled over every valid pixel of every frame. `static_masks` (1 = static)
/// are required unless the region is `all`. Domain error on zero valid
/// pixels.
DepthMetrics metrics(std::span<const Raster<double>> pred,
                     std::span<const Raster<double>> gt,
                     std::span<const Mask> static_masks,
                     const EvalConfig& cfg);

/// Metrics for all three regions (regions without pixels are omitted).
nlohmann::json metrics_report(std::span<const Raster<double>> pred,
                              std::span<const Raster<double>> gt,
                              std::span<const Mask> static_masks,
                              EvalConfig cfg);

struct ProjectedSceneFlow {
  Raster<Eigen::Vector2d> flow;
  Mask valid;  // 0 where either projection falls behind camera i+1
};

/// M_{i+1}(X_i(x) + S_{i->i+1}(x)) - M_{i+1}(X_i(x)) at every pixel of i.
ProjectedSceneFlow project_scene_flow(const ad::ParamStore& params,
                                      const SceneFlowNet& net,
                                      std::span<const DepthField> depth,
                                      std::span<const Camera> cameras,
                                      int frame);

/// Median of |flow| over valid pixels where `region` (if given) is nonzero.
double median_magnitude(const ProjectedSceneFlow& f, const Mask* region,
                        bool region_value);

/// Row `row` of every raster stacked top to bottom.
Raster<double> xt_slice(std::span<const Raster<double>> rasters, int row);

/// Linear map of [lo, hi] to [0, 255] (lo == hi maps to 0).
Raster<std::uint8_t> to_bytes(const Raster<double>& r, double lo, double hi);

}  // namespace dyndepth
