#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/dataset.hpp"
#include "dyndepth/depth_model.hpp"
#include "dyndepth/losses.hpp"
#include "dyndepth/scene_flow_net.hpp"
#include "dyndepth/synthetic_cube.hpp"

namespace testing {

using namespace dyndepth;

/// Uniform doubles in [lo, hi) from a fixed seed.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  int integer(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng_);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline Raster<double> random_raster(int w, int h, Uniform& u, double lo,
                                    double hi) {
  Raster<double> r(w, h);
  for (double& v : r.data) v = u(lo, hi);
  return r;
}

/// Keeps frames [0, keep) of a sequence and the flows between them.
inline Sequence truncate(const Sequence& seq, int keep) {
  Sequence out;
  out.cameras.assign(seq.cameras.begin(), seq.cameras.begin() + keep);
  out.init_depth.assign(seq.init_depth.begin(), seq.init_depth.begin() + keep);
  if (seq.has_gt())
    out.gt_depth.assign(seq.gt_depth.begin(), seq.gt_depth.begin() + keep);
  if (seq.has_motion_masks())
    out.motion_masks.assign(seq.motion_masks.begin(),
                            seq.motion_masks.begin() + keep);
  for (const auto& [pair, flow] : seq.flows)
    if (pair.i < keep && pair.j < keep) out.flows.emplace(pair, flow);
  compute_occlusion_masks(out);
  return out;
}

/// Small cube scene: `frames` frames of w x h pixels.
inline CubeSceneSpec small_cube_spec(int frames, int w, int h) {
  CubeSceneSpec s;
  s.frame_count = frames;
  s.width = w;
  s.height = h;
  s.focal = w;
  s.principal = {(w - 1) / 2.0, (h - 1) / 2.0};
  s.cube_edge = 1.2;
  s.camera_amplitude = 0.3;
  return s;
}

inline Sequence small_cube(int frames, int w, int h, int keep) {
  return truncate(generate(small_cube_spec(std::max(frames, 4), w, h)).seq,
                  keep);
}

/// Fills every block of the network (output layer included) with uniform
/// values in +-amplitude.
inline void randomize_net(ad::ParamStore& params, const SceneFlowNet& net,
                          std::uint64_t seed, double amplitude) {
  Uniform u(seed);
  for (ad::BlockId id : net.blocks())
    for (double& v : params.values(id)) v = u(-amplitude, amplitude);
}

/// Background plane alone, seen by the cube camera path: constant depth,
/// geometric flow for every scheduled pair, everything static.
inline Sequence plane_sequence(int frames, int w, int h, double z = 4.0) {
  CubeSceneSpec spec = small_cube_spec(std::max(frames, 4), w, h);
  spec.frame_count = frames;
  Sequence seq;
  for (int f = 0; f < frames; ++f) {
    seq.cameras.push_back(cube_camera(spec, f));
    seq.gt_depth.emplace_back(w, h, z);
    seq.init_depth.emplace_back(w, h, z);
    seq.motion_masks.push_back({f, Mask(w, h, 1)});
  }
  for (FramePair pair : pair_schedule(frames)) {
    FlowField f{pair.i, pair.j, Raster<Eigen::Vector2d>(w, h)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector3d X = unproject(seq.cameras[pair.i], Pixel(x, y), z);
        f.vectors.at(x, y) = *project(seq.cameras[pair.j], X) - Pixel(x, y);
      }
    seq.flows.emplace(pair, std::move(f));
  }
  compute_occlusion_masks(seq);
  return seq;
}

/// Depth fields (and optionally a network) bound to a sequence.
struct Model {
  ad::ParamStore params;
  std::vector<DepthField> depth;
  std::optional<SceneFlowNet> net;

  Model(const Sequence& seq, const std::vector<Raster<double>>& maps,
        std::optional<NetShape> shape = NetShape{2, 8}, int bands = 2,
        std::uint64_t seed = 1) {
    depth = init_from_maps(params, maps);
    if (shape)
      net = create_scene_flow_net(
          params, encoding_from_depths(seq.cameras, maps, bands), *shape, seed);
  }
  LossContext ctx(const Sequence& seq) const {
    return {params, seq, depth, net ? &*net : nullptr};
  }
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences (step h) over every touched parameter whose
/// reverse-mode gradient exceeds `min_grad` in magnitude.
inline GradCheck check_gradients(ad::Tape& tape, ad::ParamStore& params,
                                 double h = 1e-6, double min_grad = 1e-8) {
  tape.forward(params);
  const ad::Gradients g = tape.backward();
  GradCheck out;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!g.touched[b]) continue;
    const auto id = static_cast<ad::BlockId>(b);
    auto values = params.values(id);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double analytic = g.blocks[b][k];
      if (std::abs(analytic) <= min_grad) continue;
      const double saved = values[k];
      values[k] = saved + h;
      const double up = tape.forward(params);
      values[k] = saved - h;
      const double down = tape.forward(params);
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic), std::abs(numeric));
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  }
  tape.forward(params);
  return out;
}

}  // namespace testing
