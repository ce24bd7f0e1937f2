#include "dyndepth/scene_flow_net.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

namespace dyndepth {

Eigen::Vector3d EncodingConfig::gain() const {
  return (2.0 / (box_hi - box_lo).array()).matrix();
}

double EncodingConfig::time_coord(int frame) const {
  if (frame_count <= 1) return 0.0;
  return static_cast<double>(frame) / static_cast<double>(frame_count - 1);
}

void validate(const EncodingConfig& cfg) {
  require(cfg.bands >= 1, ErrorKind::config,
          "encoding needs at least one frequency band");
  require(cfg.frame_count >= 2, ErrorKind::config,
          "encoding needs at least two frames");
  for (int c = 0; c < 3; ++c)
    require(std::isfinite(cfg.box_lo[c]) && std::isfinite(cfg.box_hi[c]) &&
                cfg.box_hi[c] > cfg.box_lo[c],
            ErrorKind::config,
            "encoding box has no positive extent on axis " + std::to_string(c));
}

EncodingConfig encoding_from_depths(std::span<const Camera> cameras,
                                    std::span<const Raster<double>> depths,
                                    int bands, double padding) {
  require(cameras.size() == depths.size() && !cameras.empty(),
          ErrorKind::structural,
          "encoding_from_depths: need one depth raster per camera");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(
      std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (std::size_t f = 0; f < cameras.size(); ++f) {
    const Raster<double>& d = depths[f];
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) {
        const Eigen::Vector3d X = unproject(cameras[f], Pixel(x, y), d.at(x, y));
        lo = lo.cwiseMin(X);
        hi = hi.cwiseMax(X);
      }
  }
  EncodingConfig cfg;
  cfg.bands = bands;
  cfg.frame_count = static_cast<int>(cameras.size());
  Eigen::Vector3d extent = hi - lo;
  for (int c = 0; c < 3; ++c)
    if (!(extent[c] > 0.0)) extent[c] = std::max(1.0, std::abs(hi[c]));
  cfg.box_lo = lo - padding * extent;
  cfg.box_hi = hi + padding * extent;
  validate(cfg);
  return cfg;
}

Eigen::VectorXd encode(const EncodingConfig& cfg, const Eigen::Vector3d& X,
                       int frame) {
  const Eigen::Vector3d g = cfg.gain();
  Eigen::VectorXd out(cfg.feature_count());
  for (int c = 0; c < 4; ++c) {
    const double u =
        c < 3 ? (X[c] - cfg.box_lo[c]) * g[c] - 1.0 : cfg.time_coord(frame);
    for (int k = 0; k < cfg.bands; ++k) {
      const double a = (k + 1) * std::numbers::pi * u;
      out[2 * cfg.bands * c + 2 * k] = std::sin(a);
      out[2 * cfg.bands * c + 2 * k + 1] = std::cos(a);
    }
  }
  return out;
}

std::vector<ad::BlockId> SceneFlowNet::blocks() const {
  std::vector<ad::BlockId> ids;
  for (const Layer& l : layers) {
    ids.push_back(l.weight);
    ids.push_back(l.bias);
  }
  return ids;
}

nlohmann::json SceneFlowNet::describe() const {
  return {
      {"bands", encoding.bands},
      {"box_lo", {encoding.box_lo[0], encoding.box_lo[1], encoding.box_lo[2]}},
      {"box_hi", {encoding.box_hi[0], encoding.box_hi[1], encoding.box_hi[2]}},
      {"frame_count", encoding.frame_count},
      {"hidden_layers", shape.hidden_layers},
      {"hidden_width", shape.hidden_width},
  };
}

namespace {

std::string weight_name(int k) { return "sceneflow/W" + std::to_string(k); }
std::string bias_name(int k) { return "sceneflow/b" + std::to_string(k); }

}  // namespace

SceneFlowNet create_scene_flow_net(ad::ParamStore& params,
                                   const EncodingConfig& encoding,
                                   const NetShape& shape, std::uint64_t seed) {
  validate(encoding);
  require(shape.hidden_layers >= 1 && shape.hidden_width >= 1,
          ErrorKind::config, "scene-flow network needs a hidden layer");
  SceneFlowNet net{encoding, shape, {}};
  std::mt19937_64 rng(seed);
  // 53 uniform bits mapped to [-1, 1).
  auto uniform = [&rng] {
    return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
  };
  int fan_in = encoding.feature_count();
  for (int k = 0; k <= shape.hidden_layers; ++k) {
    const bool output = k == shape.hidden_layers;
    const int fan_out = output ? 3 : shape.hidden_width;
    std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out, 0.0);
    if (!output) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (double& v : w) v = bound * uniform();
    }
    const ad::BlockId wid = params.add(weight_name(k), fan_in, fan_out, w);
    const ad::BlockId bid =
        params.add(bias_name(k), 1, fan_out, std::vector<double>(fan_out, 0.0));
    net.layers.push_back({wid, bid});
    fan_in = fan_out;
  }
  return net;
}

SceneFlowNet bind_scene_flow_net(const ad::ParamStore& params,
                                 const nlohmann::json& d) {
  SceneFlowNet net;
  try {
    net.encoding.bands = d.at("bands").get<int>();
    net.encoding.frame_count = d.at("frame_count").get<int>();
    for (int c = 0; c < 3; ++c) {
      net.encoding.box_lo[c] = d.at("box_lo").at(c).get<double>();
      net.encoding.box_hi[c] = d.at("box_hi").at(c).get<double>();
    }
    net.shape.hidden_layers = d.at("hidden_layers").get<int>();
    net.shape.hidden_width = d.at("hidden_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::structural,
         std::string("malformed scene-flow description: ") + e.what());
  }
  validate(net.encoding);
  int fan_in = net.encoding.feature_count();
  for (int k = 0; k <= net.shape.hidden_layers; ++k) {
    const int fan_out =
        k == net.shape.hidden_layers ? 3 : net.shape.hidden_width;
    const ad::BlockId wid = params.id(weight_name(k));
    const ad::BlockId bid = params.id(bias_name(k));
    require(params.block(wid).rows == fan_in &&
                params.block(wid).cols == fan_out &&
                params.block(bid).size() == static_cast<std::size_t>(fan_out),
            ErrorKind::structural,
            "scene-flow layer " + std::to_string(k) +
                " does not match the described shape");
    net.layers.push_back({wid, bid});
    fan_in = fan_out;
  }
  return net;
}

ad::NodeId query(ad::Tape& tape, const ad::ParamStore& params,
                 const SceneFlowNet& net, ad::NodeId points, int frame,
                 bool trainable) {
  require(frame >= 0 && frame < net.encoding.frame_count, ErrorKind::domain,
          "scene-flow query at frame " + std::to_string(frame) +
              " outside the sequence");
  ad::NodeId h = tape.pos_encode(points, net.encoding.bands,
                                 net.encoding.box_lo, net.encoding.gain(),
                                 net.encoding.time_coord(frame));
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const bool output = k + 1 == net.layers.size();
    h = tape.dense(h, tape.param(params, net.layers[k].weight, trainable),
                   tape.param(params, net.layers[k].bias, trainable),
                   output ? ad::Activation::identity : ad::Activation::relu);
  }
  return h;
}

Unrolled unroll_on_tape(ad::Tape& tape, const ad::ParamStore& params,
                        const SceneFlowNet& net, ad::NodeId points, int i,
                        int j, bool trainable) {
  require(i < j, ErrorKind::domain,
          "scene flow unrolls forward in time only (from " + std::to_string(i) +
              " to " + std::to_string(j) + ")");
  require(i >= 0 && j < net.encoding.frame_count, ErrorKind::domain,
          "unroll range outside the sequence");
  Unrolled out;
  ad::NodeId position = points;
  for (int k = i; k < j; ++k) {
    const ad::NodeId g = query(tape, params, net, position, k, trainable);
    const ad::NodeId s =
        out.displacement.empty() ? g : tape.add(out.displacement.back(), g);
    position = tape.add(points, s);
    out.displacement.push_back(s);
    out.position.push_back(position);
  }
  return out;
}

namespace {

Eigen::Vector3d single_point(ad::Tape& tape, const ad::ParamStore& params,
                             ad::NodeId node) {
  tape.evaluate(params);
  const auto v = tape.value(node);
  return {v[0], v[1], v[2]};
}

}  // namespace

Eigen::Vector3d scene_flow_step(const ad::ParamStore& params,
                                const SceneFlowNet& net,
                                const Eigen::Vector3d& X, int i) {
  require(i >= 0 && i <= net.encoding.frame_count - 2, ErrorKind::domain,
          "scene_flow_step: frame " + std::to_string(i) + " has no successor");
  ad::Tape tape;
  const ad::NodeId p = tape.constant(1, 3, std::span(X.data(), 3));
  return single_point(tape, params, query(tape, params, net, p, i, false));
}

Eigen::Vector3d unroll(const ad::ParamStore& params, const SceneFlowNet& net,
                       const Eigen::Vector3d& X, int i, int j) {
  ad::Tape tape;
  const ad::NodeId p = tape.constant(1, 3, std::span(X.data(), 3));
  const Unrolled u = unroll_on_tape(tape, params, net, p, i, j, false);
  return single_point(tape, params, u.displacement.back());
}

std::vector<Eigen::Vector3d> evaluate_batch(const ad::ParamStore& params,
                                            const SceneFlowNet& net,
                                            std::span<const Eigen::Vector3d> X,
                                            int frame) {
  if (X.empty()) return {};
  std::vector<double> flat;
  flat.reserve(3 * X.size());
  for (const auto& x : X) flat.insert(flat.end(), x.data(), x.data() + 3);
  ad::Tape tape;
  const ad::NodeId p = tape.constant(static_cast<int>(X.size()), 3, flat);
  const ad::NodeId g = query(tape, params, net, p, frame, false);
  tape.evaluate(params);
  const auto v = tape.value(g);
  std::vector<Eigen::Vector3d> out(X.size());
  for (std::size_t r = 0; r < X.size(); ++r)
    out[r] = Eigen::Vector3d(v[3 * r], v[3 * r + 1], v[3 * r + 2]);
  return out;
}

std::optional<Eigen::Vector3d> analytic_scene_flow(
    const Raster<double>& depth_i, const Raster<double>& depth_j,
    const Camera& camera_i, const Camera& camera_j, const FlowField& flow_ij,
    int x, int y) {
  const Pixel p = corresponding_pixel(flow_ij, x, y);
  const auto dj = log_bilinear_sample(depth_j, p);
  if (!dj) return std::nullopt;
  return unproject(camera_j, p, *dj) -
         unproject(camera_i, Pixel(x, y), depth_i.at(x, y));
}

}  // namespace dyndepth
