#include "dyndepth/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace dyndepth {

Region parse_region(const std::string& name) {
  if (name == "all") return Region::all;
  if (name == "static") return Region::static_region;
  if (name == "dynamic") return Region::dynamic;
  fail(ErrorKind::config, "unknown region '" + name +
                              "' (expected all, static or dynamic)");
}

const char* to_string(Region r) noexcept {
  switch (r) {
    case Region::all: return "all";
    case Region::static_region: return "static";
    case Region::dynamic: return "dynamic";
  }
  return "unknown";
}

DepthMetrics metrics(std::span<const Raster<double>> pred,
                     std::span<const Raster<double>> gt,
                     std::span<const Mask> static_masks,
                     const EvalConfig& cfg) {
  require(cfg.cutoff > 0.0, ErrorKind::config, "depth cutoff must be positive");
  require(cfg.scale > 0.0 && std::isfinite(cfg.scale), ErrorKind::config,
          "sequence scale must be positive");
  require(pred.size() == gt.size(), ErrorKind::structural,
          "metrics: prediction and ground truth frame counts differ");
  const bool masked = cfg.region != Region::all;
  if (masked)
    require(static_masks.size() == gt.size(), ErrorKind::config,
            "region metrics need one motion mask per frame");
  double abs_rel = 0.0, sq_log = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    require(pred[f].same_shape(gt[f]) &&
                (!masked || (static_masks[f].width == gt[f].width &&
                                 static_masks[f].height == gt[f].height)),
            ErrorKind::structural,
            "metrics: raster size mismatch in frame " + std::to_string(f));
    for (std::size_t k = 0; k < gt[f].size(); ++k) {
      const double g = gt[f].data[k];
      const double p = pred[f].data[k] / cfg.scale;
      if (!(g > 0.0)) continue;
      const bool gt_far = g > cfg.cutoff;
      const bool pred_far = p > cfg.cutoff;
      if ((cfg.cutoff_side != CutoffSide::pred && gt_far) ||
          (cfg.cutoff_side != CutoffSide::gt && pred_far))
        continue;
      if (masked) {
        const bool is_static = static_masks[f].data[k] != 0;
        if (is_static != (cfg.region == Region::static_region)) continue;
      }
      require(p > 0.0, ErrorKind::domain,
              "metrics: non-positive predicted depth in frame " +
                  std::to_string(f));
      abs_rel += std::abs(p - g) / g;
      const double dl = std::log(p) - std::log(g);
      sq_log += dl * dl;
      sq += (p - g) * (p - g);
      ++n;
    }
  }
  require(n > 0, ErrorKind::domain, "metrics: no valid pixels");
  const double c = static_cast<double>(n);
  return {abs_rel / c, std::sqrt(sq_log / c), std::sqrt(sq / c), n};
}

nlohmann::json metrics_report(std::span<const Raster<double>> pred,
                              std::span<const Raster<double>> gt,
                              std::span<const Mask> static_masks,
                              EvalConfig cfg) {
  nlohmann::json out = nlohmann::json::object();
  out["scale"] = cfg.scale;
  out["cutoff"] = cfg.cutoff;
  nlohmann::json regions = nlohmann::json::object();
  for (Region r : {Region::all, Region::static_region, Region::dynamic}) {
    if (r != Region::all && static_masks.empty()) continue;
    cfg.region = r;
    try {
      const DepthMetrics m = metrics(pred, gt, static_masks, cfg);
      regions[to_string(r)] = {{"l1_rel", m.l1_rel},
                               {"log_rmse", m.log_rmse},
                               {"rmse", m.rmse},
                               {"pixels", m.count}};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::domain) throw;
    }
  }
  out["regions"] = std::move(regions);
  return out;
}

ProjectedSceneFlow project_scene_flow(const ad::ParamStore& params,
                                      const SceneFlowNet& net,
                                      std::span<const DepthField> depth,
                                      std::span<const Camera> cameras,
                                      int frame) {
  require(frame >= 0 && frame + 1 < static_cast<int>(cameras.size()),
          ErrorKind::domain, "project_scene_flow needs frame i + 1");
  const Camera& ci = cameras[frame];
  const Camera& cj = cameras[frame + 1];
  const Raster<double> d = depth_raster(params, depth[frame]);
  std::vector<Eigen::Vector3d> X(d.size());
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      X[d.index(x, y)] = unproject(ci, Pixel(x, y), d.at(x, y));
  const std::vector<Eigen::Vector3d> S = evaluate_batch(params, net, X, frame);
  ProjectedSceneFlow out{Raster<Eigen::Vector2d>(d.width, d.height),
                         Mask(d.width, d.height, 0)};
  for (std::size_t k = 0; k < X.size(); ++k) {
    const auto a = project(cj, X[k]);
    const auto b = project(cj, X[k] + S[k]);
    if (!a || !b) continue;
    out.flow.data[k] = *b - *a;
    out.valid.data[k] = 1;
  }
  return out;
}

double median_magnitude(const ProjectedSceneFlow& f, const Mask* region,
                        bool region_value) {
  std::vector<double> mags;
  for (std::size_t k = 0; k < f.flow.size(); ++k) {
    if (!f.valid.data[k]) continue;
    if (region && (region->data[k] != 0) != region_value) continue;
    mags.push_back(f.flow.data[k].norm());
  }
  return median(std::move(mags));
}

Raster<double> xt_slice(std::span<const Raster<double>> rasters, int row) {
  require(!rasters.empty(), ErrorKind::domain, "xt_slice of an empty sequence");
  const int w = rasters.front().width;
  require(row >= 0 && row < rasters.front().height, ErrorKind::domain,
          "xt_slice: row " + std::to_string(row) + " is outside the image");
  Raster<double> out(w, static_cast<int>(rasters.size()));
  for (std::size_t k = 0; k < rasters.size(); ++k) {
    require(rasters[k].width == w && row < rasters[k].height,
            ErrorKind::structural, "xt_slice: rasters differ in size");
    for (int x = 0; x < w; ++x)
      out.at(x, static_cast<int>(k)) = rasters[k].at(x, row);
  }
  return out;
}

Raster<std::uint8_t> to_bytes(const Raster<double>& r, double lo, double hi) {
  Raster<std::uint8_t> out(r.width, r.height, 0);
  if (!(hi > lo)) return out;
  for (std::size_t k = 0; k < r.size(); ++k) {
    const double u = std::clamp((r.data[k] - lo) / (hi - lo), 0.0, 1.0);
    out.data[k] = static_cast<std::uint8_t>(std::lround(255.0 * u));
  }
  return out;
}

}  // namespace dyndepth
