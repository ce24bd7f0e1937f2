#include <doctest.h>

#include <filesystem>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include "dyndepth/io.hpp"
#include "support.hpp"

using namespace dyndepth;
namespace fs = std::filesystem;
using testing::Uniform;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dyndepth_io_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string bytes(const fs::path& p) { return io::read_text(p); }

}  // namespace

TEST_CASE("pfm layout and round trip") {
  TempDir dir;
  Raster<double> r(3, 2);
  r.data = {1, 2, 3, 4, 5, 6.5};
  io::write_pfm(dir.path / "a.pfm", r);
  const std::string raw = bytes(dir.path / "a.pfm");
  CHECK(raw.rfind("Pf\n3 2\n-1.0\n", 0) == 0);
  float first;
  std::memcpy(&first, raw.data() + 12, 4);
  CHECK(first == 4.0f);  // bottom row first
  CHECK(io::read_pfm(dir.path / "a.pfm") == r);

  Uniform u(1);
  const Raster<double> big = testing::random_raster(17, 9, u, 0.1, 80);
  io::write_pfm(dir.path / "b.pfm", big);
  io::write_pfm(dir.path / "c.pfm", io::read_pfm(dir.path / "b.pfm"));
  CHECK(bytes(dir.path / "b.pfm") == bytes(dir.path / "c.pfm"));
}

TEST_CASE("flo layout and round trip") {
  TempDir dir;
  FlowField f;
  f.vectors = Raster<Eigen::Vector2d>(4, 3);
  Uniform u(2);
  for (auto& v : f.vectors.data) v = {u(-9, 9), u(-9, 9)};
  io::write_flo(dir.path / "a.flo", f);
  const std::string raw = bytes(dir.path / "a.flo");
  CHECK(raw.size() == 12 + 4 * 3 * 8);
  float magic;
  std::int32_t w, h;
  std::memcpy(&magic, raw.data(), 4);
  std::memcpy(&w, raw.data() + 4, 4);
  std::memcpy(&h, raw.data() + 8, 4);
  CHECK(magic == 202021.25f);
  CHECK(w == 4);
  CHECK(h == 3);
  io::write_flo(dir.path / "b.flo", io::read_flo(dir.path / "a.flo"));
  CHECK(bytes(dir.path / "a.flo") == bytes(dir.path / "b.flo"));
}

TEST_CASE("pgm round trip") {
  TempDir dir;
  Mask m(5, 4);
  for (std::size_t k = 0; k < m.size(); ++k) m.data[k] = k % 3 == 0;
  io::write_pgm(dir.path / "a.pgm", m);
  CHECK(io::read_pgm(dir.path / "a.pgm") == m);
  io::write_pgm(dir.path / "b.pgm", io::read_pgm(dir.path / "a.pgm"));
  CHECK(bytes(dir.path / "a.pgm") == bytes(dir.path / "b.pgm"));
}

TEST_CASE("camera json round trip") {
  TempDir dir;
  std::vector<Camera> cams;
  for (int k = 0; k < 3; ++k) cams.push_back(cube_camera(CubeSceneSpec{}, k));
  io::write_cameras(dir.path / "a.json", cams);
  const auto back = io::read_cameras(dir.path / "a.json");
  REQUIRE(back.size() == 3);
  CHECK(back[2].t == cams[2].t);
  CHECK(back[1].K == cams[1].K);
  io::write_cameras(dir.path / "b.json", back);
  CHECK(bytes(dir.path / "a.json") == bytes(dir.path / "b.json"));
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  io::Checkpoint c;
  c.meta = {{"epoch", 3}};
  c.blocks.push_back({"w", 2, 2, {1.0, -2.0, 1e-300, 0.1}});
  c.blocks.push_back({"b", 1, 1, {42.0}});
  io::write_checkpoint(dir.path / "a.bin", c);
  const io::Checkpoint back = io::read_checkpoint(dir.path / "a.bin");
  CHECK(back.meta == c.meta);
  REQUIRE(back.blocks.size() == 2);
  CHECK(back.blocks[0].values == c.blocks[0].values);
  io::write_checkpoint(dir.path / "b.bin", back);
  CHECK(bytes(dir.path / "a.bin") == bytes(dir.path / "b.bin"));
}

TEST_CASE("malformed files are io errors") {
  TempDir dir;
  io::write_text(dir.path / "bad.pfm", "P5\n1 1\n255\n");
  io::write_text(dir.path / "short.flo", "abc");
  io::write_text(dir.path / "bad.json", "{");
  for (const char* name : {"bad.pfm", "missing.pfm"}) {
    try {
      io::read_pfm(dir.path / name);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
  CHECK_THROWS_AS(io::read_flo(dir.path / "short.flo"), Error);
  CHECK_THROWS_AS(io::read_cameras(dir.path / "bad.json"), Error);
  CHECK_THROWS_AS(io::read_pgm(dir.path / "bad.pfm"), Error);
}
