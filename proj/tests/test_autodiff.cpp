#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace dyndepth;
using namespace dyndepth::ad;
using testing::Uniform;

namespace {

BlockId scalar_block(ParamStore& p, const char* name, double v) {
  return p.add(name, 1, 1, {v});
}

double grad_of(const Gradients& g, BlockId id, std::size_t k = 0) {
  return g.blocks[id][k];
}

}  // namespace

TEST_CASE("square and sum forward values") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 3.0);
  const BlockId b = scalar_block(p, "b", 1.0);
  const BlockId c = scalar_block(p, "c", -1.0);
  Tape sq;
  const NodeId na = sq.param(p, a);
  sq.set_output(sq.mul(na, na));
  CHECK(sq.forward(p) == 9.0);
  CHECK(grad_of(sq.backward(), a) == 6.0);

  Tape sum;
  sum.set_output(sum.add(sum.param(p, b), sum.param(p, c)));
  CHECK(sum.forward(p) == 0.0);
}

TEST_CASE("constant output has zero gradient") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 2.0);
  Tape t;
  const NodeId na = t.param(p, a);
  const NodeId k = t.scalar(7.0);
  t.set_output(t.add(t.scale(na, 0.0), k));
  CHECK(t.forward(p) == 7.0);
  CHECK(grad_of(t.backward(), a) == 0.0);
}

TEST_CASE("backward before forward is a state error") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 1.0);
  Tape t;
  t.set_output(t.exp(t.param(p, a)));
  try {
    t.backward();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::state);
  }
}

TEST_CASE("dangling operand is a structural error") {
  ParamStore p;
  Tape t;
  const NodeId c = t.scalar(1.0);
  const NodeId bad = t.debug_add_unchecked(c.index, 57, 1, 1);
  t.set_output(bad);
  try {
    t.forward(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::structural);
  }
}

TEST_CASE("non-finite intermediate names the node") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 800.0);
  Tape t;
  const NodeId e = t.exp(t.param(p, a));
  t.set_output(t.sum(e));
  try {
    t.forward(p);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::numeric);
    CHECK(std::string(err.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("adjoints are zero after forward and keep their length") {
  ParamStore p;
  const BlockId a = p.add("a", 2, 2, {1, -2, 3, -4});
  Tape t;
  const NodeId n = t.param(p, a);
  const NodeId r = t.relu(n);
  t.set_output(t.sum(r));
  t.forward(p);
  const std::size_t len = t.adjoint(r).size();
  for (double v : t.adjoint(r)) CHECK(v == 0.0);
  const Gradients g = t.backward();
  CHECK(t.adjoint(r).size() == len);
  CHECK(g.blocks[a] == std::vector<double>{1, 0, 1, 0});
}

TEST_CASE("elementwise ops and dense layer match direct evaluation") {
  Uniform u(11);
  ParamStore p;
  std::vector<double> x(3 * 4), w(4 * 2), b(2);
  for (double& v : x) v = u(-1, 1);
  for (double& v : w) v = u(-1, 1);
  for (double& v : b) v = u(-1, 1);
  const BlockId bx = p.add("x", 3, 4, x);
  const BlockId bw = p.add("w", 4, 2, w);
  const BlockId bb = p.add("b", 1, 2, b);
  Tape t;
  const NodeId out = t.dense(t.param(p, bx), t.param(p, bw), t.param(p, bb),
                             Activation::relu);
  t.set_output(t.sum(out));
  t.forward(p);
  const auto v = t.value(out);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) {
      double s = b[c];
      for (int k = 0; k < 4; ++k) s += x[4 * r + k] * w[2 * k + c];
      CHECK(v[2 * r + c] == doctest::Approx(std::max(0.0, s)).epsilon(1e-15));
    }
}

TEST_CASE("pos_encode matches the sinusoid definition") {
  ParamStore p;
  const BlockId pts = p.add("pts", 2, 3, {0.5, -0.25, 1.0, 0.0, 0.3, 0.9});
  const Eigen::Vector3d lo(-1, -1, 0), gain(1, 1, 2);
  Tape t;
  const NodeId e = t.pos_encode(t.param(p, pts), 3, lo, gain, 0.25);
  t.set_output(t.sum(e));
  t.forward(p);
  const auto v = t.value(e);
  REQUIRE(t.cols(e) == 24);
  const auto vals = p.values(pts);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) {
      const double coord =
          c < 3 ? (vals[3 * r + c] - lo[c]) * gain[c] - 1.0 : 0.25;
      for (int k = 0; k < 3; ++k) {
        const double a = (k + 1) * std::numbers::pi * coord;
        CHECK(v[24 * r + 6 * c + 2 * k] == doctest::Approx(std::sin(a)).epsilon(1e-14));
        CHECK(v[24 * r + 6 * c + 2 * k + 1] == doctest::Approx(std::cos(a)).epsilon(1e-14));
      }
    }
}

TEST_CASE("every op differentiates like finite differences") {
  Uniform u(5);
  ParamStore p;
  const int n = 5;
  std::vector<double> pts(3 * n), depth(n), src(16), w1(3 * 4), b1(4);
  for (int r = 0; r < n; ++r) {
    pts[3 * r] = u(-0.5, 0.5);
    pts[3 * r + 1] = u(-0.5, 0.5);
    pts[3 * r + 2] = u(2.0, 3.0);
    depth[r] = u(0.5, 1.0);
  }
  for (double& v : src) v = u(-0.3, 0.3);
  for (double& v : w1) v = u(-1, 1);
  for (double& v : b1) v = u(-1, 1);
  const BlockId bp = p.add("pts", n, 3, pts);
  const BlockId bd = p.add("logd", n, 1, depth);
  const BlockId bs = p.add("src", 4, 4, src);
  const BlockId bw = p.add("w", 3, 4, w1);
  const BlockId bb = p.add("b", 1, 4, b1);

  Tape t;
  const NodeId P = t.param(p, bp);
  const NodeId D = t.exp(t.param(p, bd));
  std::vector<double> dirs(3 * n);
  for (double& v : dirs) v = u(-1, 1);
  const NodeId R = t.ray_point(D, dirs, Eigen::Vector3d(0.1, 0.2, 2.0));
  std::vector<Tap> taps;
  for (int r = 0; r < n; ++r)
    taps.push_back(*bilinear_taps(4, 4, Pixel(u(0, 3), u(0, 3))));
  const NodeId G = t.exp(t.gather(t.param(p, bs), taps));
  const NodeId Q = t.add(P, t.scale(t.sub(R, P), 0.1));
  const NodeId H = t.dense(Q, t.param(p, bw), t.param(p, bb), Activation::relu);
  const NodeId E = t.pos_encode(Q, 2, Eigen::Vector3d(-1, -1, 1),
                                Eigen::Vector3d(1, 1, 0.5), 0.5);
  ProjectionCamera cam;
  cam.A << 4, 0, 1.5, 0, 4, 1.5, 0, 0, 1;
  std::vector<double> targets(2 * n), weights(n);
  for (double& v : targets) v = u(0, 4);
  for (double& v : weights) v = u(0.5, 1.5);
  const NodeId l1 = t.project_l1(Q, cam, targets, weights);
  const NodeId l2 = t.inv_depth_l1(Q, t.mul(G, D), cam, weights);
  const NodeId l3 = t.row_l1(H, weights);
  const NodeId l4 = t.sum(t.mul(E, E));
  const std::vector<NodeId> terms{l1, l2, l3, l4};
  const std::vector<double> tw{1.0, 0.3, 0.7, 0.01};
  const NodeId total = t.weighted_sum(terms, tw);
  t.set_output(t.add(t.normalize(total, std::vector<NodeId>{l1}), total));
  const auto check = testing::check_gradients(t, p);
  CHECK(check.checked > 20);
  CHECK(check.max_rel_error < 1e-6);
}

TEST_CASE("backward is linear in weighted sums") {
  Uniform u(2);
  ParamStore p;
  std::vector<double> vals(6);
  for (double& v : vals) v = u(-1, 1);
  const BlockId a = p.add("a", 2, 3, vals);
  auto grads = [&](double w1, double w2) {
    Tape t;
    const NodeId x = t.param(p, a);
    const NodeId f = t.sum(t.mul(x, x));
    const NodeId g = t.sum(t.exp(x));
    const std::vector<NodeId> terms{f, g};
    const std::vector<double> w{w1, w2};
    t.set_output(t.weighted_sum(terms, w));
    t.forward(p);
    return t.backward().blocks[a];
  };
  const auto gf = grads(1.0, 0.0);
  const auto gg = grads(0.0, 1.0);
  const auto both = grads(0.25, 2.0);
  for (std::size_t k = 0; k < both.size(); ++k)
    CHECK(both[k] == doctest::Approx(0.25 * gf[k] + 2.0 * gg[k]).epsilon(1e-15));
}

TEST_CASE("evaluation is deterministic") {
  Uniform u(8);
  ParamStore p;
  std::vector<double> vals(40);
  for (double& v : vals) v = u(-1, 1);
  const BlockId a = p.add("a", 10, 4, vals);
  auto run = [&] {
    Tape t;
    const NodeId x = t.param(p, a);
    t.set_output(t.sum(t.exp(t.mul(x, x))));
    const double v = t.forward(p);
    return std::make_pair(v, t.backward().blocks[a]);
  };
  const auto r1 = run();
  const auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("non-trainable leaves get no gradient") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 2.0);
  Tape t;
  const NodeId x = t.param(p, a, false);
  t.set_output(t.mul(x, x));
  t.forward(p);
  const Gradients g = t.backward();
  CHECK_FALSE(g.touched[a]);
}

TEST_CASE("adam first step moves by lr") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 0.5);
  Gradients g;
  g.blocks = {{1.0}};
  g.touched = {true};
  adam_step(p, g, 1e-3);
  CHECK(std::abs(p.values(a)[0] - (0.5 - 1e-3)) < 1e-6);
  CHECK(p.step() == 1);
  CHECK(p.block(a).first_moment.size() == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  ParamStore p;
  const BlockId a = p.add("a", 1, 3, {1, 2, 3});
  Gradients g;
  g.blocks = {{0, 0, 0}};
  g.touched = {true};
  for (int i = 0; i < 5; ++i) adam_step(p, g, 0.1);
  CHECK(p.values(a)[0] == 1.0);
  CHECK(p.values(a)[2] == 3.0);
}

TEST_CASE("adam minimizes a parabola") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 1.0);
  for (int i = 0; i < 1000; ++i) {
    Tape t;
    const NodeId x = t.param(p, a);
    t.set_output(t.mul(x, x));
    t.forward(p);
    adam_step(p, t.backward(), 0.01);
  }
  CHECK(std::abs(p.values(a)[0]) < 0.05);
}

TEST_CASE("adam rejects bad gradients") {
  ParamStore p;
  scalar_block(p, "a", 1.0);
  Gradients wrong;
  wrong.blocks = {{1.0, 2.0}};
  wrong.touched = {true};
  try {
    adam_step(p, wrong, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::structural);
  }
  Gradients nan;
  nan.blocks = {{std::nan("")}};
  nan.touched = {true};
  try {
    adam_step(p, nan, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
  }
}

TEST_CASE("per-block learning rates and step counters") {
  ParamStore p;
  const BlockId a = scalar_block(p, "a", 1.0);
  const BlockId b = scalar_block(p, "b", 1.0);
  Gradients g;
  g.blocks = {{1.0}, {1.0}};
  g.touched = {true, true};
  const std::vector<double> lr{0.0, 0.1};
  adam_step(p, g, lr);
  CHECK(p.values(a)[0] == 1.0);
  CHECK(p.values(b)[0] < 1.0);
  CHECK(p.step() == 1);
}

TEST_CASE("param store lookup and checksum") {
  ParamStore p;
  const BlockId a = p.add("x/1", 1, 2, {1, 2});
  CHECK(p.id("x/1") == a);
  CHECK_FALSE(p.find("nope").has_value());
  CHECK_THROWS_AS(p.id("nope"), Error);
  CHECK_THROWS_AS(p.add("x/1", 1, 1, {0}), Error);
  const auto before = p.checksum();
  p.values(a)[1] = 2.5;
  CHECK(p.checksum() != before);
}
