#pragma once

// Scene-flow field G(X, i): a coordinate MLP over positionally encoded
// (x, y, z, t) that predicts the world-space displacement of X from frame i
// to frame i + 1.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/geometry.hpp"
#include "dyndepth/flow.hpp"
#include "dyndepth/raster.hpp"

namespace dyndepth {

struct EncodingConfig {
  int bands = 16;
  Eigen::Vector3d box_lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d box_hi = Eigen::Vector3d::Constant(1.0);
  int frame_count = 2;

  int feature_count() const { return 8 * bands; }
  /// Affine gain mapping box_lo -> -1 and box_hi -> 1 (after subtracting 1).
  Eigen::Vector3d gain() const;
  /// Frame index mapped to [0, 1].
  double time_coord(int frame) const;
};

void validate(const EncodingConfig& cfg);

/// Bounding box of all unprojected depth pixels, padded by `padding` of its
/// extent on each side.
EncodingConfig encoding_from_depths(std::span<const Camera> cameras,
                                    std::span<const Raster<double>> depths,
                                    int bands, double padding = 0.1);

/// Direct per-band evaluation of the encoding of one point.
Eigen::VectorXd encode(const EncodingConfig& cfg, const Eigen::Vector3d& X,
                       int frame);

struct NetShape {
  int hidden_layers = 4;
  int hidden_width = 256;
};

struct SceneFlowNet {
  EncodingConfig encoding;
  NetShape shape;
  struct Layer {
    ad::BlockId weight;
    ad::BlockId bias;
  };
  std::vector<Layer> layers;  // hidden layers followed by the output layer

  std::vector<ad::BlockId> blocks() const;
  nlohmann::json describe() const;
};

/// Registers the network's blocks ("sceneflow/W<k>", "sceneflow/b<k>").
/// Hidden layers: uniform(+-sqrt(6 / fan_in)); output layer all zeros.
SceneFlowNet create_scene_flow_net(ad::ParamStore& params,
                                   const EncodingConfig& encoding,
                                   const NetShape& shape, std::uint64_t seed);

/// Rebinds a network described by describe() to blocks already in `params`.
SceneFlowNet bind_scene_flow_net(const ad::ParamStore& params,
                                 const nlohmann::json& description);

// --- on a tape --------------------------------------------------------------

/// G(points, frame) for n x 3 points; frame must be in [0, T-1].
ad::NodeId query(ad::Tape& tape, const ad::ParamStore& params,
                 const SceneFlowNet& net, ad::NodeId points, int frame,
                 bool trainable = true);

struct Unrolled {
  std::vector<ad::NodeId> displacement;  // S_{i -> i+1}, ..., S_{i -> j}
  std::vector<ad::NodeId> position;      // X_i + S_{i -> k}
};

/// Unrolls G from frame i to frame j (i < j) for n x 3 points X_i.
Unrolled unroll_on_tape(ad::Tape& tape, const ad::ParamStore& params,
                        const SceneFlowNet& net, ad::NodeId points, int i,
                        int j, bool trainable = true);

// --- direct evaluation ------------------------------------------------------

/// S_{i -> i+1}(X) = G(X, i), i in [0, T-2].
Eigen::Vector3d scene_flow_step(const ad::ParamStore& params,
                                const SceneFlowNet& net,
                                const Eigen::Vector3d& X, int i);

/// S_{i -> j}(X) by unrolling G from i to j; requires 0 <= i < j <= T-1.
Eigen::Vector3d unroll(const ad::ParamStore& params, const SceneFlowNet& net,
                       const Eigen::Vector3d& X, int i, int j);

/// Batched G(X_r, frame) for many points.
std::vector<Eigen::Vector3d> evaluate_batch(const ad::ParamStore& params,
                                            const SceneFlowNet& net,
                                            std::span<const Eigen::Vector3d> X,
                                            int frame);

/// S^_{i->j}(x) = X_j(x + v_ij(x)) - X_i(x), with D_j sampled bilinearly in
/// log space (the same sampling depth_at uses). nullopt when the
/// correspondence leaves frame j.
std::optional<Eigen::Vector3d> analytic_scene_flow(
    const Raster<double>& depth_i, const Raster<double>& depth_j,
    const Camera& camera_i, const Camera& camera_j, const FlowField& flow_ij,
    int x, int y);

}  // namespace dyndepth
