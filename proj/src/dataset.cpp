#include "dyndepth/dataset.hpp"

#include <cstdio>

#include "dyndepth/io.hpp"

namespace dyndepth {

namespace fs = std::filesystem;

std::string frame_file(int frame, const char* extension) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d.%s", frame, extension);
  return buf;
}

std::string pair_file(FramePair pair, const char* extension) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d_%04d.%s", pair.i, pair.j, extension);
  return buf;
}

namespace {

std::string pair_text(FramePair pair) {
  return "(" + std::to_string(pair.i) + ", " + std::to_string(pair.j) + ")";
}

}  // namespace

const FlowField& Sequence::flow(FramePair pair) const {
  auto it = flows.find(pair);
  if (it == flows.end())
    fail(ErrorKind::structural, "no optical flow for pair " + pair_text(pair));
  return it->second;
}

const OcclusionMask& Sequence::occlusion_of(FramePair pair) const {
  auto it = occlusion.find(pair);
  if (it == occlusion.end())
    fail(ErrorKind::structural, "no occlusion mask for pair " + pair_text(pair));
  return it->second;
}

void compute_occlusion_masks(Sequence& seq) {
  seq.occlusion.clear();
  for (const auto& [pair, fwd] : seq.flows) {
    auto back = seq.flows.find(FramePair{pair.j, pair.i});
    if (back == seq.flows.end()) continue;
    seq.occlusion.emplace(pair, occlusion_mask(fwd, back->second));
  }
}

void validate(const Sequence& seq) {
  const int T = seq.frame_count();
  require(T >= 2, ErrorKind::io, "a sequence needs at least two frames");
  const int w = seq.width(), h = seq.height();
  for (const Camera& c : seq.cameras) {
    validate(c);
    require(c.width == w && c.height == h, ErrorKind::io,
            "frame " + std::to_string(c.index) + " has a different size");
  }
  auto check_rasters = [&](const std::vector<Raster<double>>& r,
                           const char* what, bool required) {
    if (r.empty() && !required) return;
    require(static_cast<int>(r.size()) == T, ErrorKind::io,
            std::string(what) + ": expected one raster per frame");
    for (std::size_t f = 0; f < r.size(); ++f)
      require(r[f].width == w && r[f].height == h, ErrorKind::io,
              std::string(what) + " of frame " + std::to_string(f) +
                  " does not match the camera size");
  };
  check_rasters(seq.init_depth, "initial depth", true);
  check_rasters(seq.gt_depth, "ground-truth depth", false);
  check_rasters(seq.sparse_depth, "sparse depth", false);
  if (seq.has_motion_masks()) {
    require(static_cast<int>(seq.motion_masks.size()) == T, ErrorKind::io,
            "motion masks: expected one mask per frame");
    for (const MotionMask& m : seq.motion_masks)
      require(m.flags.width == w && m.flags.height == h, ErrorKind::io,
              "motion mask of frame " + std::to_string(m.frame) +
                  " does not match the camera size");
  }
  for (FramePair pair : pair_schedule(T)) {
    require(seq.flows.contains(pair), ErrorKind::io,
            "missing optical flow for pair " + pair_text(pair));
    const FlowField& f = seq.flows.at(pair);
    require(f.width() == w && f.height() == h, ErrorKind::io,
            "flow " + pair_text(pair) + " does not match the camera size");
  }
}

Sequence load_sequence(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::io,
          "dataset directory '" + dir.string() + "' does not exist");
  Sequence seq;
  seq.cameras = io::read_cameras(dir / "cameras.json");
  const int T = seq.frame_count();
  auto read_depths = [&](const char* sub, bool required) {
    std::vector<Raster<double>> out;
    if (!required && !fs::is_directory(dir / sub)) return out;
    for (int f = 0; f < T; ++f)
      out.push_back(io::read_pfm(dir / sub / frame_file(f, "pfm")));
    return out;
  };
  seq.init_depth = read_depths("init_depth", true);
  seq.gt_depth = read_depths("gt_depth", false);
  seq.sparse_depth = read_depths("sparse_depth", false);
  if (fs::is_directory(dir / "masks"))
    for (int f = 0; f < T; ++f)
      seq.motion_masks.push_back(
          {f, io::read_pgm(dir / "masks" / frame_file(f, "pgm"))});
  for (FramePair pair : pair_schedule(T)) {
    const fs::path path = dir / "flow" / pair_file(pair, "flo");
    require(fs::exists(path), ErrorKind::io,
            "missing optical flow file '" + path.string() + "'");
    FlowField flow = io::read_flo(path);
    flow.source = pair.i;
    flow.target = pair.j;
    seq.flows.emplace(pair, std::move(flow));
  }
  if (fs::exists(dir / "spec.json"))
    seq.spec = nlohmann::json::parse(io::read_text(dir / "spec.json"));
  validate(seq);
  compute_occlusion_masks(seq);
  return seq;
}

void save_sequence(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir);
  io::write_cameras(dir / "cameras.json", seq.cameras);
  auto write_depths = [&](const char* sub,
                          const std::vector<Raster<double>>& rasters) {
    if (rasters.empty()) return;
    fs::create_directories(dir / sub);
    for (std::size_t f = 0; f < rasters.size(); ++f)
      io::write_pfm(dir / sub / frame_file(static_cast<int>(f), "pfm"),
                    rasters[f]);
  };
  write_depths("init_depth", seq.init_depth);
  write_depths("gt_depth", seq.gt_depth);
  write_depths("sparse_depth", seq.sparse_depth);
  if (seq.has_motion_masks()) {
    fs::create_directories(dir / "masks");
    for (const MotionMask& m : seq.motion_masks)
      io::write_pgm(dir / "masks" / frame_file(m.frame, "pgm"), m.flags);
  }
  fs::create_directories(dir / "flow");
  for (const auto& [pair, flow] : seq.flows)
    io::write_flo(dir / "flow" / pair_file(pair, "flo"), flow);
  if (!seq.spec.is_null())
    io::write_text(dir / "spec.json", seq.spec.dump(2) + "\n");
}

}  // namespace dyndepth
