#include "dyndepth/run.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dyndepth/io.hpp"

namespace dyndepth {

RunLock::RunLock(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path path = dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0)
    fail(ErrorKind::io, "cannot open lock file '" + path.string() +
                            "': " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorKind::io, "run directory '" + dir.string() +
                            "' is in use by another process");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

double sequence_scale(const Sequence& seq) {
  if (seq.sparse_depth.empty()) return 1.0;
  return scale_alignment(seq.init_depth, seq.sparse_depth);
}

namespace {

constexpr const char* kMoment1 = "#m";
constexpr const char* kMoment2 = "#v";

Sequence load_scaled(const fs::path& dataset, double* scale_out) {
  Sequence seq = load_sequence(dataset);
  const double s = sequence_scale(seq);
  for (Camera& c : seq.cameras) c.t *= s;
  if (scale_out) *scale_out = s;
  return seq;
}

std::string epoch_dir(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "e%04d", epoch);
  return buf;
}

nlohmann::json stats_json(const TrainStats& s) {
  return {{"skipped_steps", s.skipped_steps},
          {"nonfinite_events", s.nonfinite_events},
          {"pairs_per_epoch", s.pairs_per_epoch}};
}

TrainStats stats_from_json(const nlohmann::json& j) {
  TrainStats s;
  s.skipped_steps = j.at("skipped_steps").get<std::uint64_t>();
  s.nonfinite_events = j.at("nonfinite_events").get<std::uint64_t>();
  s.pairs_per_epoch = j.at("pairs_per_epoch").get<std::vector<std::size_t>>();
  return s;
}

void save_state(const fs::path& path, const TrainState& s) {
  io::Checkpoint ck;
  nlohmann::json steps = nlohmann::json::array();
  for (const ad::Block& b : s.params.blocks()) {
    ck.blocks.push_back({b.name, b.rows, b.cols, b.value});
    ck.blocks.push_back({b.name + kMoment1, b.rows, b.cols, b.first_moment});
    ck.blocks.push_back({b.name + kMoment2, b.rows, b.cols, b.second_moment});
    steps.push_back(b.steps);
  }
  ck.meta = {{"epoch", s.epoch},
             {"step", s.step},
             {"optimizer_step", s.params.step()},
             {"block_steps", steps},
             {"last_epoch_mean", s.last_epoch_mean},
             {"frame_count", s.depth.size()},
             {"network", s.net ? s.net->describe() : nlohmann::json()},
             {"stats", stats_json(s.stats)}};
  io::write_checkpoint(path, ck);
}

void save_network(const fs::path& path, const TrainState& s) {
  io::Checkpoint ck;
  ck.meta = {{"network", s.net->describe()}};
  for (ad::BlockId id : s.net->blocks()) {
    const ad::Block& b = s.params.block(id);
    ck.blocks.push_back({b.name, b.rows, b.cols, b.value});
  }
  io::write_checkpoint(path, ck);
}

void save_depth(const fs::path& dir, const TrainState& s) {
  fs::create_directories(dir);
  const auto maps = depth_maps(s);
  for (std::size_t f = 0; f < maps.size(); ++f)
    io::write_pfm(dir / frame_file(static_cast<int>(f), "pfm"), maps[f]);
}

std::string csv_row(const StepRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<unsigned long long>(r.step), r.epoch, r.loss.l2d,
                r.loss.ldisp, r.loss.lprior, r.loss.lstatic, r.loss.total);
  return buf;
}

constexpr const char* kCsvHeader = "step,epoch,l2d,ldisp,lprior,lstatic,total\n";

/// Keeps the header and the rows up to `step`.
void truncate_log(const fs::path& path, std::uint64_t step) {
  std::string kept = kCsvHeader;
  if (fs::exists(path)) {
    std::istringstream in(io::read_text(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= step)
        kept += line + "\n";
    }
  }
  io::write_text(path, kept);
}

nlohmann::json make_manifest(const RunOptions& o, const TrainState& s,
                             double scale, bool complete) {
  nlohmann::json checkpoints = nlohmann::json::array();
  for (int e = 1; e <= s.epoch; ++e)
    checkpoints.push_back("checkpoints/" + epoch_dir(e));
  nlohmann::json artifacts = {{"loss_log", "loss.csv"},
                              {"state", "state.bin"},
                              {"depth", "depth"},
                              {"checkpoints", checkpoints}};
  if (s.net) artifacts["sceneflow"] = "sceneflow.bin";
  return {{"format", "dyndepth-run"},
          {"version", 1},
          {"dataset", fs::absolute(o.dataset).lexically_normal().string()},
          {"config", o.config.to_json()},
          {"seed", o.config.seed},
          {"epoch", s.epoch},
          {"step", s.step},
          {"scale", scale},
          {"status", complete ? "complete" : "running"},
          {"stats", stats_json(s.stats)},
          {"artifacts", artifacts}};
}

void write_manifest(const fs::path& dir, const nlohmann::json& m) {
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace

TrainState load_state(const fs::path& run_dir) {
  const io::Checkpoint ck = io::read_checkpoint(run_dir / "state.bin");
  TrainState s;
  try {
    const auto steps = ck.meta.at("block_steps").get<std::vector<std::uint64_t>>();
    require(ck.blocks.size() == 3 * steps.size(), ErrorKind::io,
            "state.bin: block count does not match its header");
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const auto& v = ck.blocks[3 * k];
      const auto& m = ck.blocks[3 * k + 1];
      const auto& q = ck.blocks[3 * k + 2];
      require(m.name == v.name + kMoment1 && q.name == v.name + kMoment2,
              ErrorKind::io, "state.bin: optimizer moments out of order");
      const ad::BlockId id = s.params.add(v.name, v.rows, v.cols, v.values);
      ad::Block& b = s.params.block(id);
      b.first_moment = m.values;
      b.second_moment = q.values;
      b.steps = steps[k];
    }
    s.params.restore_step(ck.meta.at("optimizer_step").get<std::uint64_t>());
    s.epoch = ck.meta.at("epoch").get<int>();
    s.step = ck.meta.at("step").get<std::uint64_t>();
    s.last_epoch_mean = ck.meta.at("last_epoch_mean").get<double>();
    s.stats = stats_from_json(ck.meta.at("stats"));
    s.depth = bind_depth_fields(s.params, ck.meta.at("frame_count").get<int>());
    if (!ck.meta.at("network").is_null())
      s.net = bind_scene_flow_net(s.params, ck.meta.at("network"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, std::string("state.bin: malformed header: ") + e.what());
  }
  return s;
}

RunSummary run_training(const RunOptions& o) {
  validate(o.config);
  RunLock lock(o.out);
  double scale = 1.0;
  const Sequence seq = load_scaled(o.dataset, &scale);
  TrainState state;
  const fs::path manifest_path = o.out / "manifest.json";
  if (o.resume && fs::exists(manifest_path)) {
    const auto m = nlohmann::json::parse(io::read_text(manifest_path));
    require(m.at("config") == o.config.to_json(), ErrorKind::config,
            "--resume with a configuration different from the run's");
    state = load_state(o.out);
    truncate_log(o.out / "loss.csv", state.step);
  } else {
    for (const char* stale : {"checkpoints", "depth"}) fs::remove_all(o.out / stale);
    for (const char* stale : {"sceneflow.bin", "state.bin"}) fs::remove(o.out / stale);
    state = init_state(seq, o.config);
    io::write_text(o.out / "loss.csv", kCsvHeader);
  }

  auto persist = [&](const TrainState& s, bool complete) {
    if (s.epoch > 0) {
      const fs::path ep = o.out / "checkpoints" / epoch_dir(s.epoch);
      save_depth(ep / "depth", s);
      if (s.net) save_network(ep / "sceneflow.bin", s);
    }
    save_depth(o.out / "depth", s);
    if (s.net) save_network(o.out / "sceneflow.bin", s);
    save_state(o.out / "state.bin", s);
    write_manifest(o.out, make_manifest(o, s, scale, complete));
  };
  persist(state, state.epoch >= o.config.total_epochs);

  std::ofstream csv(o.out / "loss.csv", std::ios::app | std::ios::binary);
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { csv << csv_row(r); };
  hooks.on_epoch_end = [&](const TrainState& s) {
    csv.flush();
    persist(s, s.epoch >= o.config.total_epochs);
    if (o.log)
      *o.log << "epoch " << s.epoch << "/" << o.config.total_epochs
             << " mean loss " << s.last_epoch_mean << " skipped "
             << s.stats.skipped_steps << std::endl;
    if (o.on_epoch_end) o.on_epoch_end(s);
  };
  train(state, seq, o.config, hooks);
  csv.flush();

  RunSummary out;
  out.epochs = state.epoch;
  out.steps = state.step;
  out.last_epoch_mean = state.last_epoch_mean;
  out.scale = scale;
  out.stats = state.stats;
  return out;
}

LoadedRun load_run(const fs::path& run_dir) {
  const fs::path mpath = run_dir / "manifest.json";
  require(fs::exists(mpath), ErrorKind::io,
          "'" + run_dir.string() + "' is not a run directory (no manifest.json)");
  LoadedRun run;
  try {
    run.manifest = nlohmann::json::parse(io::read_text(mpath));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, std::string("manifest.json: ") + e.what());
  }
  for (const auto& [key, rel] : run.manifest.at("artifacts").items()) {
    if (!rel.is_string()) continue;
    require(fs::exists(run_dir / rel.get<std::string>()), ErrorKind::io,
            "run artifact '" + rel.get<std::string>() + "' is missing");
  }
  run.seq = load_scaled(run.manifest.at("dataset").get<std::string>(), nullptr);
  run.state = load_state(run_dir);
  require(static_cast<int>(run.state.depth.size()) == run.seq.frame_count(),
          ErrorKind::io, "run and dataset frame counts differ");
  return run;
}

nlohmann::json evaluate_run(const fs::path& run_dir,
                            const fs::path& gt_dataset, Region region,
                            double cutoff) {
  const LoadedRun run = load_run(run_dir);
  const Sequence gt = load_sequence(gt_dataset);
  require(gt.has_gt(), ErrorKind::io,
          "dataset '" + gt_dataset.string() + "' has no gt_depth");
  require(gt.frame_count() == run.seq.frame_count(), ErrorKind::io,
          "ground truth and run frame counts differ");
  if (region != Region::all)
    require(gt.has_motion_masks(), ErrorKind::io,
            "region metrics need motion masks in the ground-truth dataset");
  std::vector<Mask> masks;
  for (const MotionMask& m : gt.motion_masks) masks.push_back(m.flags);
  const auto pred = depth_maps(run.state);
  EvalConfig cfg;
  cfg.cutoff = cutoff;
  cfg.scale = run.manifest.at("scale").get<double>();
  cfg.region = region;
  nlohmann::json report = metrics_report(pred, gt.gt_depth, masks, cfg);
  const DepthMetrics m = metrics(pred, gt.gt_depth, masks, cfg);
  report["region"] = to_string(region);
  report["selected"] = {{"l1_rel", m.l1_rel},
                        {"log_rmse", m.log_rmse},
                        {"rmse", m.rmse},
                        {"pixels", m.count}};
  report["epoch"] = run.state.epoch;
  return report;
}

ExportKind parse_export_kind(const std::string& name) {
  if (name == "pointcloud") return ExportKind::pointcloud;
  if (name == "xt_slice") return ExportKind::xt_slice;
  if (name == "sceneflow") return ExportKind::sceneflow;
  fail(ErrorKind::config, "unknown export kind '" + name +
                              "' (expected pointcloud, xt_slice or sceneflow)");
}

std::string pointcloud_ply(const Camera& camera, const Raster<double>& depth) {
  std::string body;
  std::size_t n = 0;
  char buf[128];
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(x, y);
      if (!(d > 0.0) || !std::isfinite(d)) continue;
      const Eigen::Vector3d X = unproject(camera, Pixel(x, y), d);
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", X.x(), X.y(), X.z());
      body += buf;
      ++n;
    }
  return "ply\nformat ascii 1.0\nelement vertex " + std::to_string(n) +
         "\nproperty double x\nproperty double y\nproperty double z\n"
         "end_header\n" +
         body;
}

namespace {

void write_raster(const fs::path& out, const Raster<double>& r) {
  if (out.extension() == ".pgm") {
    double lo = 0.0, hi = 0.0;
    if (r.size() > 0) {
      lo = *std::min_element(r.data.begin(), r.data.end());
      hi = *std::max_element(r.data.begin(), r.data.end());
    }
    io::write_pgm_bytes(out, to_bytes(r, lo, hi));
  } else {
    io::write_pfm(out, r);
  }
}

}  // namespace

void export_run(const fs::path& run_dir, ExportKind kind, int index,
                const fs::path& out) {
  const LoadedRun run = load_run(run_dir);
  const int T = run.seq.frame_count();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  switch (kind) {
    case ExportKind::pointcloud: {
      require(index >= 0 && index < T, ErrorKind::config,
              "frame " + std::to_string(index) + " is outside the sequence");
      io::write_text(out, pointcloud_ply(run.seq.cameras[index],
                                         depth_raster(run.state.params,
                                                      run.state.depth[index])));
      return;
    }
    case ExportKind::xt_slice: {
      const auto maps = depth_maps(run.state);
      require(index >= 0 && index < run.seq.height(), ErrorKind::config,
              "row " + std::to_string(index) + " is outside the image");
      write_raster(out, xt_slice(maps, index));
      return;
    }
    case ExportKind::sceneflow: {
      require(run.state.net.has_value(), ErrorKind::config,
              "this run has no scene-flow network to export");
      require(index >= 0 && index + 1 < T, ErrorKind::config,
              "scene flow needs frames i and i + 1");
      const ProjectedSceneFlow f =
          project_scene_flow(run.state.params, *run.state.net,
                             run.state.depth, run.seq.cameras, index);
      Raster<double> mag(f.flow.width, f.flow.height, 0.0);
      for (std::size_t k = 0; k < mag.size(); ++k)
        if (f.valid.data[k]) mag.data[k] = f.flow.data[k].norm();
      write_raster(out, mag);
      return;
    }
  }
}

}  // namespace dyndepth
