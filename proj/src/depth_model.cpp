#include "dyndepth/depth_model.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace dyndepth {

namespace {

std::string block_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "depth/%04d", frame);
  return buf;
}

}  // namespace

std::vector<DepthField> init_from_maps(ad::ParamStore& params,
                                       std::span<const Raster<double>> maps) {
  std::vector<DepthField> fields;
  for (std::size_t f = 0; f < maps.size(); ++f) {
    const Raster<double>& m = maps[f];
    require(m.width > 0 && m.height > 0, ErrorKind::structural,
            "depth map of frame " + std::to_string(f) + " is empty");
    std::vector<double> theta(m.size());
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const double d = m.at(x, y);
        if (!(d > 0.0) || !std::isfinite(d))
          fail(ErrorKind::domain, "initial depth of frame " + std::to_string(f) +
                                      " at pixel (" + std::to_string(x) + ", " +
                                      std::to_string(y) +
                                      ") is not a positive finite number");
        theta[m.index(x, y)] = std::log(d);
      }
    const int frame = static_cast<int>(f);
    const ad::BlockId id =
        params.add(block_name(frame), m.height, m.width, std::move(theta));
    fields.push_back({frame, m.width, m.height, id});
  }
  return fields;
}

std::vector<DepthField> bind_depth_fields(const ad::ParamStore& params,
                                          int frame_count) {
  std::vector<DepthField> fields;
  for (int f = 0; f < frame_count; ++f) {
    const ad::BlockId id = params.id(block_name(f));
    const ad::Block& b = params.block(id);
    fields.push_back({f, b.cols, b.rows, id});
  }
  return fields;
}

std::optional<double> depth_at(const ad::ParamStore& params,
                               const DepthField& field, const Pixel& p) {
  auto tap = bilinear_taps(field.width, field.height, p);
  if (!tap) return std::nullopt;
  const auto theta = params.values(field.block);
  double acc = 0.0;
  for (int k = 0; k < 4; ++k)
    if (tap->weight[k] != 0.0) acc += tap->weight[k] * theta[tap->index[k]];
  return std::exp(acc);
}

Raster<double> depth_raster(const ad::ParamStore& params,
                            const DepthField& field) {
  Raster<double> out(field.width, field.height);
  const auto theta = params.values(field.block);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = std::exp(theta[k]);
  return out;
}

std::vector<ad::BlockId> depth_blocks(std::span<const DepthField> fields) {
  std::vector<ad::BlockId> ids;
  for (const DepthField& f : fields) ids.push_back(f.block);
  return ids;
}

ad::NodeId sample_depth(ad::Tape& tape, const ad::ParamStore& params,
                        const DepthField& field, std::vector<ad::Tap> taps,
                        bool trainable) {
  const ad::NodeId theta = tape.param(params, field.block, trainable);
  return tape.exp(tape.gather(theta, std::move(taps)));
}

}  // namespace dyndepth
