#include "dyndepth/synthetic_cube.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/SVD>

namespace dyndepth {

namespace {

nlohmann::json vec(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> read_vec(const nlohmann::json& doc,
                                     const char* key,
                                     const Eigen::Matrix<double, N, 1>& dflt) {
  if (!doc.contains(key)) return dflt;
  const auto& a = doc.at(key);
  if (!a.is_array() || a.size() != N)
    fail(ErrorKind::config, std::string("spec field '") + key + "' must be an array of " +
                                std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int k = 0; k < N; ++k) v[k] = a.at(k).get<double>();
  return v;
}

}  // namespace

nlohmann::json CubeSceneSpec::to_json() const {
  return {
      {"frame_count", frame_count},
      {"width", width},
      {"height", height},
      {"focal", focal},
      {"principal", vec(principal)},
      {"cube_edge", cube_edge},
      {"cube_start", vec(cube_start)},
      {"cube_velocity", vec(cube_velocity)},
      {"background_z", background_z},
      {"camera_base", vec(camera_base)},
      {"camera_axis", vec(camera_axis)},
      {"camera_amplitude", camera_amplitude},
      {"camera_periods", camera_periods},
      {"init_noise", init_noise},
      {"noise_grid", noise_grid},
      {"seed", seed},
  };
}

CubeSceneSpec CubeSceneSpec::from_json(const nlohmann::json& doc) {
  require(doc.is_object(), ErrorKind::config, "cube spec must be a JSON object");
  static const char* known[] = {
      "frame_count", "width",         "height",         "focal",
      "principal",   "cube_edge",     "cube_start",     "cube_velocity",
      "background_z", "camera_base",  "camera_axis",    "camera_amplitude",
      "camera_periods", "init_noise", "noise_grid",     "seed"};
  for (const auto& [key, value] : doc.items())
    require(std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return key == k; }) !=
                std::end(known),
            ErrorKind::config, "unknown cube spec field '" + key + "'");
  CubeSceneSpec s;
  try {
    s.frame_count = doc.value("frame_count", s.frame_count);
    s.width = doc.value("width", s.width);
    s.height = doc.value("height", s.height);
    s.focal = doc.value("focal", s.focal);
    s.principal = read_vec<2>(doc, "principal", s.principal);
    s.cube_edge = doc.value("cube_edge", s.cube_edge);
    s.cube_start = read_vec<3>(doc, "cube_start", s.cube_start);
    s.cube_velocity = read_vec<3>(doc, "cube_velocity", s.cube_velocity);
    s.background_z = doc.value("background_z", s.background_z);
    s.camera_base = read_vec<3>(doc, "camera_base", s.camera_base);
    s.camera_axis = read_vec<3>(doc, "camera_axis", s.camera_axis);
    s.camera_amplitude = doc.value("camera_amplitude", s.camera_amplitude);
    s.camera_periods = doc.value("camera_periods", s.camera_periods);
    s.init_noise = doc.value("init_noise", s.init_noise);
    s.noise_grid = doc.value("noise_grid", s.noise_grid);
    s.seed = doc.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed cube spec: ") + e.what());
  }
  validate(s);
  return s;
}

void validate(const CubeSceneSpec& s) {
  require(s.frame_count >= 4, ErrorKind::config,
          "the cube scene needs at least 4 frames");
  require(s.width >= 2 && s.height >= 2, ErrorKind::config,
          "raster must be at least 2 x 2");
  require(s.focal > 0.0 && std::isfinite(s.focal), ErrorKind::config,
          "focal length must be positive");
  require(s.cube_edge > 0.0, ErrorKind::config, "cube edge must be positive");
  require(s.background_z > s.camera_base.z(), ErrorKind::config,
          "background plane must lie in front of the camera");
  require(s.init_noise >= 0.0 && s.init_noise < 1.0, ErrorKind::config,
          "init_noise must be in [0, 1)");
  require(s.noise_grid >= 2, ErrorKind::config, "noise_grid must be at least 2");
  require(s.camera_axis.allFinite() && s.cube_start.allFinite() &&
              s.cube_velocity.allFinite() && s.camera_base.allFinite() &&
              std::isfinite(s.camera_amplitude) &&
              std::isfinite(s.camera_periods),
          ErrorKind::config, "cube spec contains non-finite values");
}

Camera cube_camera(const CubeSceneSpec& s, int frame) {
  Camera c;
  c.K << s.focal, 0.0, s.principal.x(), 0.0, s.focal, s.principal.y(), 0.0,
      0.0, 1.0;
  const double phase = 2.0 * std::numbers::pi * s.camera_periods * frame /
                       static_cast<double>(s.frame_count - 1);
  c.t = s.camera_base + s.camera_amplitude * std::sin(phase) * s.camera_axis;
  c.width = s.width;
  c.height = s.height;
  c.index = frame;
  return c;
}

Eigen::Vector3d cube_center(const CubeSceneSpec& s, int frame) {
  return s.cube_start + static_cast<double>(frame) * s.cube_velocity;
}

SurfaceHit trace(const CubeSceneSpec& s, int frame, const Pixel& p) {
  const Camera cam = cube_camera(s, frame);
  const Eigen::Vector3d o = cam.center();
  const Eigen::Vector3d d = cam.ray(p);
  SurfaceHit best;
  double best_t = std::numeric_limits<double>::infinity();
  if (d.z() > 0.0) {
    const double t = (s.background_z - o.z()) / d.z();
    if (t > 0.0) {
      best_t = t;
      best.surface = Surface::background;
    }
  }
  const Eigen::Vector3d c = cube_center(s, frame);
  const double h = 0.5 * s.cube_edge;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  bool miss = false;
  for (int a = 0; a < 3 && !miss; ++a) {
    const double lo = c[a] - h, hi = c[a] + h;
    if (d[a] == 0.0) {
      if (o[a] < lo || o[a] > hi) miss = true;
      continue;
    }
    double ta = (lo - o[a]) / d[a];
    double tb = (hi - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!miss && t0 <= t1 && t0 > 0.0 && t0 < best_t) {
    best_t = t0;
    best.surface = Surface::cube;
  }
  if (best.surface == Surface::none) return best;
  best.point = o + best_t * d;
  best.depth = cam.depth_of(best.point);
  return best;
}

Eigen::Vector3d move_point(const CubeSceneSpec& s, const SurfaceHit& hit,
                           int from, int to) {
  if (hit.surface != Surface::cube) return hit.point;
  return hit.point + static_cast<double>(to - from) * s.cube_velocity;
}

bool visible_in(const CubeSceneSpec& s, int i, int j, int x, int y,
                Pixel* target) {
  const SurfaceHit hit = trace(s, i, Pixel(x, y));
  if (hit.surface == Surface::none) return false;
  const Camera cj = cube_camera(s, j);
  const Eigen::Vector3d moved = move_point(s, hit, i, j);
  const auto p = project(cj, moved);
  if (!p) return false;
  if (target) *target = *p;
  if (!(p->x() >= 0.0 && p->y() >= 0.0 && p->x() <= s.width - 1.0 &&
        p->y() <= s.height - 1.0))
    return false;
  const SurfaceHit there = trace(s, j, *p);
  const double z = cj.depth_of(moved);
  return there.surface == hit.surface &&
         std::abs(there.depth - z) <= 1e-9 * (1.0 + z);
}

namespace {

bool same_camera(const Camera& a, const Camera& b) {
  return a.K == b.K && a.R == b.R && a.t == b.t;
}

FlowField cube_flow(const CubeSceneSpec& s, const std::vector<SurfaceHit>& hits,
                    int i, int j) {
  const Camera ci = cube_camera(s, i);
  const Camera cj = cube_camera(s, j);
  const bool still_camera = same_camera(ci, cj);
  FlowField f{i, j, Raster<Eigen::Vector2d>(s.width, s.height)};
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const SurfaceHit& hit = hits[f.vectors.index(x, y)];
      Eigen::Vector2d& v = f.vectors.at(x, y);
      const Eigen::Vector3d moved = move_point(s, hit, i, j);
      if (still_camera && moved == hit.point) {
        v.setZero();
        continue;
      }
      Pixel p;
      const bool vis = visible_in(s, i, j, x, y, &p);
      const auto proj = project(cj, moved);
      if (!proj) {
        v.setConstant(kUnknownFlow);
        continue;
      }
      const bool inside = proj->x() >= 0.0 && proj->y() >= 0.0 &&
                          proj->x() <= s.width - 1.0 &&
                          proj->y() <= s.height - 1.0;
      if (inside && !vis)
        v.setConstant(kUnknownFlow);
      else
        v = *proj - Pixel(x, y);
    }
  return f;
}

double uniform_pm1(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace

CubeScene generate(const CubeSceneSpec& s) {
  validate(s);
  CubeScene scene;
  scene.spec = s;
  Sequence& seq = scene.seq;
  const int T = s.frame_count;
  std::vector<std::vector<SurfaceHit>> hits(T);
  std::mt19937_64 rng(s.seed);
  for (int f = 0; f < T; ++f) {
    seq.cameras.push_back(cube_camera(s, f));
    Raster<double> gt(s.width, s.height);
    Raster<std::uint8_t> surf(s.width, s.height);
    Mask stat(s.width, s.height);
    bool cube_seen = false;
    hits[f].resize(gt.size());
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const SurfaceHit h = trace(s, f, Pixel(x, y));
        if (h.surface == Surface::none)
          fail(ErrorKind::domain, "pixel (" + std::to_string(x) + ", " +
                                      std::to_string(y) + ") of frame " +
                                      std::to_string(f) + " sees no surface");
        hits[f][gt.index(x, y)] = h;
        gt.at(x, y) = h.depth;
        surf.at(x, y) = static_cast<std::uint8_t>(h.surface);
        stat.at(x, y) = h.surface == Surface::background ? 1 : 0;
        cube_seen = cube_seen || h.surface == Surface::cube;
      }
    if (!cube_seen)
      fail(ErrorKind::domain,
           "the cube leaves the view entirely in frame " + std::to_string(f));
    const int G = s.noise_grid;
    std::vector<double> grid(static_cast<std::size_t>(G) * G);
    for (double& g : grid) g = uniform_pm1(rng);
    Raster<double> init(s.width, s.height);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const double gx = x * (G - 1.0) / (s.width - 1.0);
        const double gy = y * (G - 1.0) / (s.height - 1.0);
        const int x0 = std::min(static_cast<int>(gx), G - 2);
        const int y0 = std::min(static_cast<int>(gy), G - 2);
        const double fx = gx - x0, fy = gy - y0;
        auto at = [&](int a, int b) { return grid[b * G + a]; };
        const double n = (1 - fx) * (1 - fy) * at(x0, y0) +
                         fx * (1 - fy) * at(x0 + 1, y0) +
                         (1 - fx) * fy * at(x0, y0 + 1) +
                         fx * fy * at(x0 + 1, y0 + 1);
        init.at(x, y) = gt.at(x, y) * (1.0 + s.init_noise * n);
      }
    seq.gt_depth.push_back(std::move(gt));
    seq.init_depth.push_back(std::move(init));
    seq.motion_masks.push_back({f, std::move(stat)});
    scene.surface.push_back(std::move(surf));
  }
  for (FramePair pair : pair_schedule(T))
    seq.flows.emplace(pair, cube_flow(s, hits[pair.i], pair.i, pair.j));
  seq.spec = s.to_json();
  validate(seq);
  compute_occlusion_masks(seq);
  return scene;
}

// --- conditioning -------------------------------------------------------------

double ConditioningReport::max_condition() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.condition);
  return m;
}

std::size_t ConditioningReport::ill_count() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const auto& e) { return e.ill; }));
}

std::size_t ConditioningReport::ill_with_small_flow(double max_flow) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
        return e.ill && e.flow_magnitude < max_flow;
      }));
}

ConditioningEntry ray_conditioning(const Eigen::Vector3d& r0,
                                   const Eigen::Vector3d& r1,
                                   const Eigen::Vector3d& r2,
                                   double threshold) {
  Eigen::Matrix3d R;
  R << r0, r1, r2;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(R);
  const Eigen::Vector3d sv = svd.singularValues();
  ConditioningEntry e;
  e.valid = true;
  e.min_singular = sv[2];
  const bool deficient =
      !(sv[2] > sv[0] * std::numeric_limits<double>::epsilon() * 3.0);
  e.condition =
      deficient ? std::numeric_limits<double>::infinity() : sv[0] / sv[2];
  e.ill = e.condition > threshold;
  return e;
}

ConditioningEntry conditioning_analysis(const Sequence& seq, int frame, int x,
                                        int y, double threshold) {
  require(frame >= 0 && frame + 2 < seq.frame_count(), ErrorKind::domain,
          "conditioning needs frames i, i+1 and i+2");
  ConditioningEntry invalid;
  invalid.frame = frame;
  invalid.x = x;
  invalid.y = y;
  const FlowField& f01 = seq.flow({frame, frame + 1});
  const FlowField& f12 = seq.flow({frame + 1, frame + 2});
  const Eigen::Vector2d v01 = f01.vectors.at(x, y);
  if (!(v01.cwiseAbs().maxCoeff() < 1e9)) return invalid;
  const Pixel x1 = Pixel(x, y) + v01;
  const auto v12 = bilinear_sample(f12.vectors, x1);
  if (!v12 || !(v12->cwiseAbs().maxCoeff() < 1e9)) return invalid;
  const Pixel x2 = x1 + *v12;
  if (!bilinear_taps(seq.width(), seq.height(), x2)) return invalid;
  ConditioningEntry e = ray_conditioning(
      ray_direction(seq.cameras[frame], Pixel(x, y)),
      ray_direction(seq.cameras[frame + 1], x1),
      ray_direction(seq.cameras[frame + 2], x2), threshold);
  e.frame = frame;
  e.x = x;
  e.y = y;
  e.flow_magnitude = v01.norm();
  return e;
}

ConditioningReport conditioning_scan(const Sequence& seq, double threshold) {
  ConditioningReport report;
  report.threshold = threshold;
  for (int f = 0; f + 2 < seq.frame_count(); ++f)
    for (int y = 0; y < seq.height(); ++y)
      for (int x = 0; x < seq.width(); ++x) {
        ConditioningEntry e = conditioning_analysis(seq, f, x, y, threshold);
        if (e.valid) report.entries.push_back(e);
      }
  return report;
}

}  // namespace dyndepth
