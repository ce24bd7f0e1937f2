#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "dyndepth/io.hpp"
#include "dyndepth/run.hpp"
#include "support.hpp"

using namespace dyndepth;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path root;
  fs::path dataset;
  Workspace() {
    static int counter = 0;
    root = fs::temp_directory_path() /
           ("dyndepth_run_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(root);
    dataset = root / "data";
    save_sequence(dataset, generate(testing::small_cube_spec(5, 12, 12)).seq);
  }
  ~Workspace() { fs::remove_all(root); }
};

TrainConfig tiny(int epochs = 2) {
  TrainConfig c;
  c.warmup_epochs = 1;
  c.total_epochs = epochs;
  c.bands = 2;
  c.net_shape = {2, 8};
  c.seed = 5;
  return c;
}

int csv_rows(const fs::path& p) {
  std::istringstream in(io::read_text(p));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

struct Interrupted {};

}  // namespace

TEST_CASE("zero epochs write the initialization") {
  Workspace w;
  RunOptions o{w.dataset, w.root / "run", tiny(0)};
  o.config.warmup_epochs = 0;
  run_training(o);
  const auto manifest = nlohmann::json::parse(io::read_text(o.out / "manifest.json"));
  CHECK(manifest["epoch"] == 0);
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["config"] == o.config.to_json());
  const Sequence seq = load_sequence(w.dataset);
  for (int f = 0; f < 5; ++f) {
    const Raster<double> d = io::read_pfm(o.out / "depth" / frame_file(f, "pfm"));
    for (std::size_t k = 0; k < d.size(); ++k)
      CHECK(d.data[k] == static_cast<double>(static_cast<float>(seq.init_depth[f].data[k])));
  }
  CHECK(csv_rows(o.out / "loss.csv") == 0);
}

TEST_CASE("a run writes checkpoints, loss log and manifest") {
  Workspace w;
  RunOptions o{w.dataset, w.root / "run", tiny(2)};
  const RunSummary s = run_training(o);
  CHECK(s.epochs == 2);
  const std::size_t pairs = pair_schedule(5).size();
  CHECK(s.steps == 2 * pairs);
  CHECK(csv_rows(o.out / "loss.csv") == static_cast<int>(2 * pairs));
  for (const char* e : {"e0001", "e0002"}) {
    CHECK(fs::exists(o.out / "checkpoints" / e / "sceneflow.bin"));
    CHECK(fs::exists(o.out / "checkpoints" / e / "depth" / "0004.pfm"));
  }
  const auto manifest = nlohmann::json::parse(io::read_text(o.out / "manifest.json"));
  for (const auto& rel : manifest["artifacts"]["checkpoints"])
    CHECK(fs::exists(o.out / rel.get<std::string>()));
  CHECK(manifest.dump().find("time") == std::string::npos);

  const LoadedRun run = load_run(o.out);
  CHECK(run.state.epoch == 2);
  CHECK(run.state.net.has_value());
}

TEST_CASE("identical runs produce identical artifacts") {
  Workspace w;
  RunOptions a{w.dataset, w.root / "a", tiny(2)};
  RunOptions b{w.dataset, w.root / "b", tiny(2)};
  run_training(a);
  run_training(b);
  for (const char* f : {"state.bin", "loss.csv", "sceneflow.bin", "depth/0002.pfm"})
    CHECK(io::read_text(a.out / f) == io::read_text(b.out / f));
}

TEST_CASE("an interrupted run resumes to the same result") {
  Workspace w;
  RunOptions full{w.dataset, w.root / "full", tiny(3)};
  run_training(full);

  RunOptions part{w.dataset, w.root / "part", tiny(3)};
  part.on_epoch_end = [](const TrainState& s) {
    if (s.epoch == 2) throw Interrupted{};
  };
  CHECK_THROWS_AS(run_training(part), Interrupted);
  // steps logged after the last checkpoint are dropped on resume
  {
    std::ofstream csv(part.out / "loss.csv", std::ios::app);
    csv << "999,3,0,0,0,0,0\n";
  }
  part.on_epoch_end = nullptr;
  part.resume = true;
  run_training(part);
  for (const char* f : {"state.bin", "loss.csv", "sceneflow.bin", "depth/0003.pfm", "manifest.json"}) {
    if (std::string(f) == "manifest.json") continue;
    CHECK(io::read_text(full.out / f) == io::read_text(part.out / f));
  }

  RunOptions changed = part;
  changed.config.lr_depth = 1.0;
  try {
    run_training(changed);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("the run directory is locked while training") {
  Workspace w;
  fs::create_directories(w.root / "run");
  RunLock held(w.root / "run");
  RunOptions o{w.dataset, w.root / "run", tiny(1)};
  try {
    run_training(o);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
}

TEST_CASE("evaluation and exports of a run") {
  Workspace w;
  RunOptions o{w.dataset, w.root / "run", tiny(1)};
  run_training(o);
  const auto report = evaluate_run(o.out, w.dataset, Region::dynamic);
  CHECK(report["region"] == "dynamic");
  const LoadedRun run = load_run(o.out);
  const Sequence gt = load_sequence(w.dataset);
  std::vector<Mask> masks;
  for (const auto& m : gt.motion_masks) masks.push_back(m.flags);
  EvalConfig cfg;
  cfg.region = Region::dynamic;
  const DepthMetrics m = metrics(depth_maps(run.state), gt.gt_depth, masks, cfg);
  CHECK(report["selected"]["l1_rel"].get<double>() == m.l1_rel);
  CHECK(report["regions"]["all"]["pixels"].get<std::size_t>() ==
        report["regions"]["static"]["pixels"].get<std::size_t>() +
            report["regions"]["dynamic"]["pixels"].get<std::size_t>());

  export_run(o.out, ExportKind::pointcloud, 1, w.root / "f1.ply");
  const std::string ply = io::read_text(w.root / "f1.ply");
  CHECK(ply.find("element vertex 144") != std::string::npos);
  export_run(o.out, ExportKind::xt_slice, 6, w.root / "xt.pfm");
  CHECK(io::read_pfm(w.root / "xt.pfm").height == 5);
  export_run(o.out, ExportKind::sceneflow, 0, w.root / "sf.pgm");
  CHECK(io::read_text(w.root / "sf.pgm").rfind("P5", 0) == 0);
  CHECK_THROWS_AS(export_run(o.out, ExportKind::sceneflow, 4, w.root / "x.pfm"), Error);
  CHECK_THROWS_AS(parse_export_kind("mesh"), Error);
}

TEST_CASE("point cloud vertices follow the unprojection") {
  Camera c;
  c.K << 2, 0, 1, 0, 2, 1, 0, 0, 1;
  c.width = 3;
  c.height = 3;
  Raster<double> d(3, 3, 2.0);
  d.at(1, 1) = 0.0;
  std::istringstream in(pointcloud_ply(c, d));
  std::string line;
  int vertices = -1;
  while (std::getline(in, line) && line != "end_header")
    if (line.rfind("element vertex", 0) == 0) vertices = std::stoi(line.substr(15));
  CHECK(vertices == 8);
  int seen = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      if (x == 1 && y == 1) continue;
      double X, Y, Z;
      in >> X >> Y >> Z;
      const Eigen::Vector3d expect = unproject(c, Pixel(x, y), 2.0);
      CHECK((Eigen::Vector3d(X, Y, Z) - expect).norm() < 1e-15);
      CHECK(Z == 2.0);
      ++seen;
    }
  CHECK(seen == 8);
  CHECK(pointcloud_ply(c, Raster<double>(3, 3, 0.0)).find("element vertex 0") != std::string::npos);
}

TEST_CASE("datasets round trip through the directory layout") {
  Workspace w;
  const Sequence a = load_sequence(w.dataset);
  save_sequence(w.root / "copy", a);
  for (const char* f : {"cameras.json", "init_depth/0003.pfm", "gt_depth/0000.pfm",
                        "masks/0002.pgm", "flow/0001_0000.flo", "spec.json"})
    CHECK(io::read_text(w.dataset / f) == io::read_text(w.root / "copy" / f));
  fs::remove(w.dataset / "flow" / "0001_0002.flo");
  try {
    load_sequence(w.dataset);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
}
