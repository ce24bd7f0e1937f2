#pragma once

// Per-frame optimizable log-depth rasters D_i = exp(theta_i).

#include <span>
#include <vector>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/raster.hpp"

namespace dyndepth {

struct DepthField {
  int frame = 0;
  int width = 0;
  int height = 0;
  ad::BlockId block = 0;  // "depth/NNNN", height x width log-depths
};

/// Registers one log-depth block per raster. Throws domain error naming the
/// frame and pixel of the first non-positive or non-finite depth.
std::vector<DepthField> init_from_maps(ad::ParamStore& params,
                                       std::span<const Raster<double>> maps);

/// Rebinds fields to "depth/NNNN" blocks already present in `params`.
std::vector<DepthField> bind_depth_fields(const ad::ParamStore& params,
                                          int frame_count);

/// exp of the bilinear log-depth at p; nullopt outside the raster.
std::optional<double> depth_at(const ad::ParamStore& params,
                               const DepthField& field, const Pixel& p);

/// exp(theta) at every pixel.
Raster<double> depth_raster(const ad::ParamStore& params,
                            const DepthField& field);

std::vector<ad::BlockId> depth_blocks(std::span<const DepthField> fields);

/// Depths sampled by fixed taps on a tape: exp(gather(theta, taps)), n x 1.
ad::NodeId sample_depth(ad::Tape& tape, const ad::ParamStore& params,
                        const DepthField& field, std::vector<ad::Tap> taps,
                        bool trainable);

}  // namespace dyndepth
