#include <doctest.h>

#include "dyndepth/losses.hpp"
#include "support.hpp"

using namespace dyndepth;
using testing::Model;
using testing::Uniform;

namespace {

LossOptions raw(LossWeights w = {0.1, 1.0, 0.0}) {
  LossOptions o;
  o.weights = w;
  o.normalized = false;
  return o;
}

/// Two 2x2 frames: camera 1 shifted by 0.1 along x, constant flow (0.3, 0.2).
Sequence hand_instance() {
  Sequence seq;
  for (int f = 0; f < 2; ++f) {
    Camera c;
    c.K << 2, 0, 0.5, 0, 2, 0.5, 0, 0, 1;
    c.width = 2;
    c.height = 2;
    c.index = f;
    c.t = Eigen::Vector3d(0.1 * f, 0, 0);
    seq.cameras.push_back(c);
    seq.init_depth.emplace_back(2, 2, f == 0 ? 2.0 : 4.0);
  }
  seq.flows.emplace(FramePair{0, 1},
                    FlowField{0, 1, Raster<Eigen::Vector2d>(2, 2, {0.3, 0.2})});
  seq.flows.emplace(FramePair{1, 0},
                    FlowField{1, 0, Raster<Eigen::Vector2d>(2, 2, {-0.3, -0.2})});
  compute_occlusion_masks(seq);
  return seq;
}

void set_constant_velocity(ad::ParamStore& p, const SceneFlowNet& net,
                           const Eigen::Vector3d& v) {
  const auto& out = net.layers.back();
  for (double& w : p.values(out.weight)) w = 0.0;
  for (int c = 0; c < 3; ++c) p.values(out.bias)[c] = v[c];
}

}  // namespace

TEST_CASE("consistent static instance has zero pair losses") {
  const Sequence seq = testing::plane_sequence(4, 16, 12);
  Model m(seq, seq.gt_depth);
  const LossContext ctx = m.ctx(seq);
  for (FramePair pair : pair_schedule(4)) {
    const TermValue l2d = loss_2d(ctx, pair);
    const TermValue disp = loss_disp(ctx, pair);
    CHECK(l2d.count > 0);
    CHECK(l2d.sum < 1e-6);
    CHECK(disp.sum < 1e-6);
  }
}

TEST_CASE("fully masked pair contributes nothing") {
  Sequence seq = testing::plane_sequence(2, 8, 8);
  for (auto& [pair, m] : seq.occlusion) std::fill(m.flags.data.begin(), m.flags.data.end(), 1);
  Model m(seq, seq.gt_depth);
  for (FramePair pair : {FramePair{0, 1}, FramePair{1, 0}}) {
    const TermValue l = loss_2d(m.ctx(seq), pair);
    CHECK(l.sum == 0.0);
    CHECK(l.count == 0.0);
    const LossBreakdown b = pair_loss(m.ctx(seq), pair, LossOptions{});
    CHECK(b.total == 0.0);
  }
}

TEST_CASE("hand instance") {
  const Sequence seq = hand_instance();
  Model m(seq, seq.init_depth);
  const LossContext ctx = m.ctx(seq);
  // X = (x - 0.5, y - 0.5, 2) lands on (x - 0.1, y) in frame 1; only (0, 0)
  // has an in-bounds target (0.3, 0.2).
  const TermValue l2d = loss_2d(ctx, {0, 1});
  CHECK(l2d.count == 1.0);
  CHECK(l2d.sum == doctest::Approx(0.4 + 0.2).epsilon(1e-14));
  const TermValue disp = loss_disp(ctx, {0, 1});
  CHECK(disp.count == 1.0);
  CHECK(disp.sum == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("analytic flow satisfies the pair losses by construction") {
  const Sequence seq = testing::small_cube(5, 24, 24, 5);
  for (const auto& depths : {seq.init_depth, seq.gt_depth}) {
    Model m(seq, depths, std::nullopt);
    const LossContext ctx = m.ctx(seq);
    for (FramePair pair : pair_schedule(5)) {
      const TermValue l2d = loss_2d(ctx, pair, FlowSource::analytic);
      const TermValue disp = loss_disp(ctx, pair, FlowSource::analytic);
      CHECK(l2d.count > 0);
      CHECK(l2d.sum < 1e-9);
      CHECK(disp.sum < 1e-9);
    }
  }
}

TEST_CASE("prior terms") {
  const Sequence seq = testing::plane_sequence(4, 8, 8);
  Model m(seq, seq.gt_depth);
  CHECK(loss_prior(m.ctx(seq), 0).sum == 0.0);
  set_constant_velocity(m.params, *m.net, {0.02, -0.01, 0.03});
  const TermValue c = loss_prior(m.ctx(seq), 1);
  CHECK(c.count == 64);
  CHECK(c.sum < 1e-9);
  CHECK(loss_prior(m.ctx(seq), 2).count == 0.0);

  testing::randomize_net(m.params, *m.net, 3, 0.3);
  double oracle = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const Eigen::Vector3d X = unproject(seq.cameras[1], Pixel(x, y), 4.0);
      const Eigen::Vector3d s1 = scene_flow_step(m.params, *m.net, X, 1);
      const Eigen::Vector3d s2 = scene_flow_step(m.params, *m.net, X + s1, 2);
      oracle += (s1 - s2).cwiseAbs().sum();
    }
  const TermValue r = loss_prior(m.ctx(seq), 1);
  CHECK(r.sum > 0.0);
  CHECK(std::abs(r.sum - oracle) < 1e-12 * oracle);
}

TEST_CASE("analytic prior vanishes on a static plane with exact depth") {
  const Sequence seq = testing::plane_sequence(5, 12, 12);
  Model m(seq, seq.init_depth, std::nullopt);
  for (int f = 0; f <= 2; ++f) {
    const TermValue p = loss_prior(m.ctx(seq), f, FlowSource::analytic);
    CHECK(p.count > 0);
    CHECK(p.sum / p.count < 1e-9);
  }
}

TEST_CASE("static term") {
  Sequence seq = testing::plane_sequence(2, 8, 8);
  Model m(seq, seq.gt_depth);
  CHECK(loss_static(m.ctx(seq), 0).sum == 0.0);
  set_constant_velocity(m.params, *m.net, {1, 0, 0});
  Mask& ms = seq.motion_masks[0].flags;
  std::fill(ms.data.begin(), ms.data.end(), 0);
  CHECK(loss_static(m.ctx(seq), 0).sum == 0.0);
  for (int k = 0; k < 10; ++k) ms.data[3 * k] = 1;
  const TermValue s = loss_static(m.ctx(seq), 0);
  CHECK(s.sum == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(s.count == 10.0);

  seq.motion_masks.clear();
  try {
    pair_loss(m.ctx(seq), {0, 1}, raw({0.1, 1, 100}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("combine") {
  LossBreakdown t;
  t.l2d = 1;
  t.ldisp = 2;
  t.lprior = 3;
  t.lstatic = 1e9;
  CHECK(combine(t, {0.1, 1, 0}) == doctest::Approx(4.2).epsilon(1e-15));
  CHECK(combine(LossBreakdown{}, {0.1, 1, 100}) == 0.0);
}

TEST_CASE("pair breakdown recomposes independent terms") {
  const Sequence seq = testing::small_cube(4, 24, 24, 4);
  Model m(seq, seq.init_depth, NetShape{2, 8}, 2);
  testing::randomize_net(m.params, *m.net, 9, 0.05);
  const LossContext ctx = m.ctx(seq);
  for (FramePair pair : {FramePair{0, 1}, FramePair{2, 0}, FramePair{1, 3}}) {
    for (bool normalized : {false, true}) {
      LossOptions o = raw({0.1, 1.0, 100.0});
      o.normalized = normalized;
      const LossBreakdown b = pair_loss(ctx, pair, o);
      const int s = std::min(pair.i, pair.j);
      const TermValue l2d = loss_2d(ctx, pair), disp = loss_disp(ctx, pair);
      const TermValue prior = loss_prior(ctx, s), stat = loss_static(ctx, s);
      auto norm = [&](TermValue v) { return normalized ? (v.count > 0 ? v.sum / v.count : 0.0) : v.sum; };
      CHECK(b.l2d == norm(l2d));
      CHECK(b.ldisp == norm(disp));
      CHECK(b.lprior == norm(prior));
      CHECK(b.lstatic == norm(stat));
      CHECK(b.count_2d == l2d.count);
      CHECK(b.total == combine(b, o.weights));
    }
  }
}

TEST_CASE("masking a pixel removes exactly its contribution") {
  Sequence seq = testing::small_cube(4, 16, 16, 4);
  Model m(seq, seq.init_depth);
  testing::randomize_net(m.params, *m.net, 2, 0.05);
  const FramePair pair{0, 1};
  const TermValue before = loss_2d(m.ctx(seq), pair);
  Mask& occ = seq.occlusion.at(pair).flags;
  int flipped = -1;
  for (std::size_t k = 0; k < occ.size(); ++k)
    if (!occ.data[k] && k > 40) {
      flipped = static_cast<int>(k);
      break;
    }
  REQUIRE(flipped >= 0);
  occ.data[flipped] = 1;
  const TermValue after = loss_2d(m.ctx(seq), pair);
  const int x = flipped % 16, y = flipped / 16;
  const Eigen::Vector3d X = unproject(seq.cameras[0], Pixel(x, y), seq.init_depth[0].at(x, y));
  const Eigen::Vector3d S = unroll(m.params, *m.net, X, 0, 1);
  const Pixel p = *project(seq.cameras[1], X + S);
  const Pixel target = corresponding_pixel(seq.flow(pair), x, y);
  const double contribution = (p - target).cwiseAbs().sum();
  CHECK(after.count == before.count - 1);
  CHECK(std::abs(before.sum - after.sum - contribution) < 1e-12);
}

TEST_CASE("total loss aggregates over pairs") {
  const Sequence seq = testing::small_cube(4, 16, 16, 4);
  Model m(seq, seq.init_depth);
  testing::randomize_net(m.params, *m.net, 4, 0.05);
  const auto pairs = pair_schedule(4);
  LossOptions o = raw({0.1, 1.0, 0.0});
  const LossBreakdown t = total_loss(m.ctx(seq), pairs, o);
  double l2d = 0.0, prior = 0.0;
  for (FramePair pair : pairs) l2d += loss_2d(m.ctx(seq), pair).sum;
  for (int f = 0; f < 3; ++f) prior += loss_prior(m.ctx(seq), f).sum;
  CHECK(std::abs(t.l2d - l2d) < 1e-9 * l2d);
  CHECK(std::abs(t.lprior - prior) < 1e-9 * prior);
}

TEST_CASE("pair gradients match finite differences") {
  // 2-frame 8x8 instance, 2 bands, 2 x 8 network
  const Sequence seq = testing::small_cube(4, 8, 8, 2);
  for (const LossWeights w : {LossWeights{0.1, 1, 0}, LossWeights{0.1, 1, 100},
                              LossWeights{0.1, 0, 0}}) {
    for (FramePair pair : {FramePair{0, 1}, FramePair{1, 0}}) {
      Model m(seq, seq.init_depth, NetShape{2, 8}, 2);
      testing::randomize_net(m.params, *m.net, 5, 0.1);
      ad::Tape t;
      LossOptions o;
      o.weights = w;
      const TermNodes terms = build_pair_terms(t, m.ctx(seq), pair, o);
      t.set_output(build_total(t, terms, o));
      const auto check = testing::check_gradients(t, m.params);
      CHECK(check.checked > 100);
      CHECK(check.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("prior gradients match finite differences on three frames") {
  const Sequence seq = testing::small_cube(4, 8, 8, 3);
  Model m(seq, seq.init_depth, NetShape{2, 8}, 2);
  testing::randomize_net(m.params, *m.net, 6, 0.1);
  ad::Tape t;
  LossOptions o;
  o.weights = {0.1, 1.0, 0.0};
  const TermNodes terms = build_frame_terms(t, m.ctx(seq), 0, o);
  REQUIRE(terms.lprior.has_value());
  t.set_output(*terms.lprior);
  const auto check = testing::check_gradients(t, m.params);
  CHECK(check.checked > 100);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("analytic-source gradients match finite differences") {
  const Sequence seq = testing::small_cube(4, 8, 8, 4);
  Model m(seq, seq.init_depth, std::nullopt);
  for (FramePair pair : {FramePair{0, 1}, FramePair{2, 1}}) {
    ad::Tape t;
    LossOptions o;
    o.source = FlowSource::analytic;
    o.weights = {0.1, 1.0, 100.0};
    const TermNodes terms = build_pair_terms(t, m.ctx(seq), pair, o);
    REQUIRE(terms.lprior.has_value());
    t.set_output(build_total(t, terms, o));
    // the static term dominates the loss here, so a larger step keeps the
    // difference quotient above round-off
    const auto check = testing::check_gradients(t, m.params, 1e-5);
    CHECK(check.checked > 10);
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("missing pair data is a structural error") {
  Sequence seq = testing::plane_sequence(3, 6, 6);
  seq.flows.erase({0, 2});
  seq.occlusion.erase({0, 2});
  Model m(seq, seq.gt_depth);
  try {
    loss_2d(m.ctx(seq), {0, 2});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::structural);
  }
}
