#include <doctest.h>

#include "dyndepth/depth_model.hpp"
#include "support.hpp"

using namespace dyndepth;
using testing::Uniform;

TEST_CASE("init from maps stores log depth") {
  ad::ParamStore p;
  const std::vector<Raster<double>> ones{Raster<double>(4, 3, 1.0), Raster<double>(4, 3, 5.0)};
  const auto fields = init_from_maps(p, ones);
  REQUIRE(fields.size() == 2);
  for (double v : p.values(fields[0].block)) CHECK(v == 0.0);
  CHECK(p.block(fields[1].block).name == "depth/0001");
  CHECK(p.block(fields[1].block).rows == 3);
  Uniform u(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Pixel x(u(0, 3), u(0, 2));
    CHECK(std::abs(*depth_at(p, fields[1], x) - 5.0) < 1e-12);
  }
}

TEST_CASE("integer pixels reproduce the input") {
  Uniform u(2);
  ad::ParamStore p;
  const std::vector<Raster<double>> maps{testing::random_raster(6, 5, u, 0.5, 20)};
  const auto fields = init_from_maps(p, maps);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      CHECK(std::abs(*depth_at(p, fields[0], Pixel(x, y)) - maps[0].at(x, y)) < 1e-12);
      CHECK(*depth_at(p, fields[0], Pixel(x, y)) == std::exp(p.values(fields[0].block)[y * 6 + x]));
    }
  const Raster<double> back = depth_raster(p, fields[0]);
  for (std::size_t k = 0; k < back.size(); ++k)
    CHECK(std::abs(back.data[k] - maps[0].data[k]) < 1e-12 * maps[0].data[k]);
  CHECK_FALSE(depth_at(p, fields[0], Pixel(5.5, 0)).has_value());
}

TEST_CASE("bilinear in log space matches an exp-bilinear oracle") {
  Uniform u(3);
  ad::ParamStore p;
  const std::vector<Raster<double>> maps{testing::random_raster(7, 7, u, 1, 10)};
  const auto fields = init_from_maps(p, maps);
  for (int trial = 0; trial < 200; ++trial) {
    const Pixel x(u(0, 6), u(0, 6));
    const int x0 = std::min(static_cast<int>(x.x()), 5);
    const int y0 = std::min(static_cast<int>(x.y()), 5);
    const double fx = x.x() - x0, fy = x.y() - y0;
    const auto L = [&](int a, int b) { return std::log(maps[0].at(a, b)); };
    const double oracle = std::exp((1 - fx) * (1 - fy) * L(x0, y0) + fx * (1 - fy) * L(x0 + 1, y0) +
                                   (1 - fx) * fy * L(x0, y0 + 1) + fx * fy * L(x0 + 1, y0 + 1));
    const double d = *depth_at(p, fields[0], x);
    CHECK(std::abs(d - oracle) < 1e-12 * oracle);
    double lo = 1e300, hi = 0;
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        lo = std::min(lo, maps[0].at(x0 + dx, y0 + dy));
        hi = std::max(hi, maps[0].at(x0 + dx, y0 + dy));
      }
    CHECK(d >= lo * (1 - 1e-14));
    CHECK(d <= hi * (1 + 1e-14));
    CHECK(d > 0.0);
  }
}

TEST_CASE("non-positive depth names frame and pixel") {
  ad::ParamStore p;
  std::vector<Raster<double>> maps{Raster<double>(3, 3, 1.0), Raster<double>(3, 3, 1.0)};
  maps[1].at(2, 1) = 0.0;
  try {
    init_from_maps(p, maps);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::domain);
    const std::string msg = e.what();
    CHECK(msg.find("frame 1") != std::string::npos);
    CHECK(msg.find("(2, 1)") != std::string::npos);
  }
  maps[1].at(2, 1) = std::nan("");
  ad::ParamStore q;
  CHECK_THROWS_AS(init_from_maps(q, maps), Error);
}

TEST_CASE("sample_depth on a tape") {
  Uniform u(4);
  ad::ParamStore p;
  const std::vector<Raster<double>> maps{testing::random_raster(5, 5, u, 1, 3)};
  const auto fields = init_from_maps(p, maps);
  std::vector<ad::Tap> taps;
  std::vector<Pixel> at;
  for (int k = 0; k < 6; ++k) {
    at.emplace_back(u(0, 4), u(0, 4));
    taps.push_back(*bilinear_taps(5, 5, at.back()));
  }
  ad::Tape t;
  const ad::NodeId d = sample_depth(t, p, fields[0], taps, true);
  t.set_output(t.sum(d));
  t.forward(p);
  for (int k = 0; k < 6; ++k) CHECK(t.value(d)[k] == *depth_at(p, fields[0], at[k]));
  CHECK(testing::check_gradients(t, p).max_rel_error < 1e-6);
}

TEST_CASE("bind depth fields") {
  ad::ParamStore p;
  const std::vector<Raster<double>> maps(3, Raster<double>(4, 2, 2.0));
  const auto fields = init_from_maps(p, maps);
  const auto bound = bind_depth_fields(p, 3);
  REQUIRE(bound.size() == 3);
  CHECK(bound[2].block == fields[2].block);
  CHECK(bound[2].width == 4);
  CHECK(depth_blocks(bound).size() == 3);
  CHECK_THROWS_AS(bind_depth_fields(p, 4), Error);
}

TEST_CASE("GT cube depth with zero flow: background already at the floor") {
  Sequence seq = testing::small_cube(4, 24, 24, 4);
  testing::Model m(seq, seq.gt_depth);
  Mask& occ = seq.occlusion.at({0, 1}).flags;
  const Mask& static_px = seq.motion_masks[0].flags;
  for (std::size_t k = 0; k < occ.size(); ++k)
    if (!static_px.data[k]) occ.data[k] = 1;
  const TermValue l = loss_2d(m.ctx(seq), {0, 1});
  CHECK(l.count > 300);
  CHECK(l.sum / l.count < 1e-9);
}
