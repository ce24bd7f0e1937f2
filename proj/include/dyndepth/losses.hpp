#pragma once

// Reprojection (L2D), disparity (Ldisp), constant-velocity (Lprior) and
// static-region (Lstatic) losses, built on a tape per frame pair.

#include <optional>
#include <span>
#include <vector>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/dataset.hpp"
#include "dyndepth/depth_model.hpp"
#include "dyndepth/scene_flow_net.hpp"

namespace dyndepth {

struct LossWeights {
  double alpha = 0.1;
  double beta = 1.0;
  double gamma = 0.0;
};

inline constexpr double kStaticWeight = 100.0;

void validate(const LossWeights& w);

struct LossBreakdown {
  double l2d = 0.0;
  double ldisp = 0.0;
  double lprior = 0.0;
  double lstatic = 0.0;
  double total = 0.0;
  double count_2d = 0.0;
  double count_disp = 0.0;
  double count_prior = 0.0;
  double count_static = 0.0;
};

/// ((l2d + alpha ldisp) + beta lprior) + gamma lstatic.
double combine(const LossBreakdown& terms, const LossWeights& w);

/// Where the scene flow in the losses comes from.
enum class FlowSource { network, analytic };

struct LossOptions {
  LossWeights weights;
  bool normalized = true;  // divide each term by its contributing-pixel count
  FlowSource source = FlowSource::network;
  bool depth_trainable = true;
  bool net_trainable = true;
};

struct LossContext {
  const ad::ParamStore& params;
  const Sequence& seq;
  std::span<const DepthField> depth;
  const SceneFlowNet* net = nullptr;  // required for FlowSource::network
};

/// Raw (unnormalized) reduction nodes on a tape; terms that do not apply
/// (no contributing rows, zero weight, frame out of range) are absent.
struct TermNodes {
  std::optional<ad::NodeId> l2d, ldisp, lprior, lstatic;
};

/// L2D and Ldisp of one pair, plus Lprior / Lstatic of the pair's earlier
/// frame when beta / gamma are nonzero.
TermNodes build_pair_terms(ad::Tape& tape, const LossContext& ctx,
                           FramePair pair, const LossOptions& options);

/// Lprior and Lstatic of frame i alone.
TermNodes build_frame_terms(ad::Tape& tape, const LossContext& ctx, int frame,
                            const LossOptions& options);

/// Total-loss node over the raw terms (normalized per term if requested).
ad::NodeId build_total(ad::Tape& tape, const TermNodes& terms,
                       const LossOptions& options);

/// Reads raw sums and counts after forward(), then applies normalization.
LossBreakdown read_breakdown(const ad::Tape& tape, const TermNodes& terms,
                             const LossOptions& options);

struct StepResult {
  LossBreakdown loss;
  ad::Gradients grads;
};

/// One optimization step's loss for a pair, with gradients.
StepResult pair_step(const LossContext& ctx, FramePair pair,
                     const LossOptions& options);

/// Forward-only version of pair_step.
LossBreakdown pair_loss(const LossContext& ctx, FramePair pair,
                        const LossOptions& options);

struct TermValue {
  double sum = 0.0;
  double count = 0.0;
};

TermValue loss_2d(const LossContext& ctx, FramePair pair,
                  FlowSource source = FlowSource::network);
TermValue loss_disp(const LossContext& ctx, FramePair pair,
                    FlowSource source = FlowSource::network);
/// Zero with zero count for frames past T-3.
TermValue loss_prior(const LossContext& ctx, int frame,
                     FlowSource source = FlowSource::network);
/// Config error without motion masks.
TermValue loss_static(const LossContext& ctx, int frame,
                      FlowSource source = FlowSource::network);

/// Aggregate over pairs: L2D and Ldisp summed over every pair, Lprior and
/// Lstatic over every distinct earlier frame of the pairs, each divided by
/// its total count when normalized.
LossBreakdown total_loss(const LossContext& ctx,
                         std::span<const FramePair> pairs,
                         const LossOptions& options);

}  // namespace dyndepth
