#include "dyndepth/losses.hpp"

#include <cmath>
#include <set>
#include <string>

namespace dyndepth {

void validate(const LossWeights& w) {
  require(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0 &&
              std::isfinite(w.alpha) && std::isfinite(w.beta) &&
              std::isfinite(w.gamma),
          ErrorKind::config, "loss weights must be finite and non-negative");
}

double combine(const LossBreakdown& t, const LossWeights& w) {
  double total = 0.0;
  total += 1.0 * t.l2d;
  total += w.alpha * t.ldisp;
  total += w.beta * t.lprior;
  total += w.gamma * t.lstatic;
  return total;
}

namespace {

/// Sample points of one frame: a depth tap and a world ray per row.
struct Rows {
  std::vector<ad::Tap> taps;
  std::vector<double> dirs;

  std::size_t size() const { return taps.size(); }
  void add(const Camera& cam, const Pixel& p, const ad::Tap& tap) {
    taps.push_back(tap);
    const Eigen::Vector3d r = cam.ray(p);
    dirs.insert(dirs.end(), {r[0], r[1], r[2]});
  }
};

struct Points {
  ad::NodeId X;
  ad::NodeId depth;
};

ad::Tap pixel_tap(int width, int x, int y) {
  return single_tap(static_cast<std::uint32_t>(y * width + x));
}

Rows all_pixels(const Camera& cam) {
  Rows rows;
  rows.taps.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  rows.dirs.reserve(3 * rows.taps.capacity());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      rows.add(cam, Pixel(x, y), pixel_tap(cam.width, x, y));
  return rows;
}

Points points(ad::Tape& tape, const LossContext& ctx, int frame, Rows rows,
              const LossOptions& options) {
  const ad::NodeId d = sample_depth(tape, ctx.params, ctx.depth[frame],
                                    std::move(rows.taps),
                                    options.depth_trainable);
  return {tape.ray_point(d, std::move(rows.dirs), ctx.seq.cameras[frame].t), d};
}

const SceneFlowNet& network(const LossContext& ctx) {
  require(ctx.net != nullptr, ErrorKind::config,
          "network scene flow requested without a scene-flow network");
  return *ctx.net;
}

void check_inputs(const LossContext& ctx) {
  require(static_cast<int>(ctx.depth.size()) == ctx.seq.frame_count(),
          ErrorKind::structural, "one depth field per frame is required");
}

std::vector<double> static_weights(const LossContext& ctx, int frame) {
  require(ctx.seq.has_motion_masks(), ErrorKind::config,
          "the static-region loss needs motion masks");
  const Mask& m = ctx.seq.motion_masks[frame].flags;
  return {m.data.begin(), m.data.end()};
}

bool wants_prior(const LossContext& ctx, int frame, const LossOptions& o) {
  return o.weights.beta > 0.0 && frame >= 0 && frame <= ctx.seq.frame_count() - 3;
}

bool wants_static(const LossContext& ctx, int frame, const LossOptions& o) {
  return o.weights.gamma > 0.0 && frame >= 0 &&
         frame <= ctx.seq.frame_count() - 2;
}

// --- network scene flow ------------------------------------------------------

/// Prior / static terms of frame s from S_{s->s+1} and X_s + S_{s->s+1} over
/// every integer pixel of s.
void network_frame_terms(ad::Tape& tape, const LossContext& ctx, int s,
                         const LossOptions& o, ad::NodeId step,
                         ad::NodeId moved, TermNodes& out) {
  const std::size_t n = static_cast<std::size_t>(tape.rows(step));
  if (wants_prior(ctx, s, o)) {
    const ad::NodeId next =
        query(tape, ctx.params, network(ctx), moved, s + 1, o.net_trainable);
    out.lprior = tape.row_l1(tape.sub(step, next), std::vector<double>(n, 1.0));
  }
  if (wants_static(ctx, s, o))
    out.lstatic = tape.row_l1(step, static_weights(ctx, s));
}

void network_frame_terms_fresh(ad::Tape& tape, const LossContext& ctx, int s,
                               const LossOptions& o, TermNodes& out) {
  if (!wants_prior(ctx, s, o) && !wants_static(ctx, s, o)) return;
  const Camera& cam = ctx.seq.cameras[s];
  const Points P = points(tape, ctx, s, all_pixels(cam), o);
  const ad::NodeId step =
      query(tape, ctx.params, network(ctx), P.X, s, o.net_trainable);
  network_frame_terms(tape, ctx, s, o, step, tape.add(P.X, step), out);
}

TermNodes network_forward_pair(ad::Tape& tape, const LossContext& ctx,
                               FramePair pair, const LossOptions& o) {
  const int s = pair.i, e = pair.j;
  const Camera& cs = ctx.seq.cameras[s];
  const Camera& ce = ctx.seq.cameras[e];
  const FlowField& flow = ctx.seq.flow(pair);
  const Mask& occ = ctx.seq.occlusion_of(pair).flags;
  const std::size_t n = static_cast<std::size_t>(cs.width) * cs.height;
  std::vector<double> targets(2 * n), weights(n, 0.0);
  std::vector<ad::Tap> dst(n, single_tap(0));
  for (int y = 0; y < cs.height; ++y)
    for (int x = 0; x < cs.width; ++x) {
      const std::size_t r = occ.index(x, y);
      const Pixel p = corresponding_pixel(flow, x, y);
      targets[2 * r] = p.x();
      targets[2 * r + 1] = p.y();
      auto tap = bilinear_taps(ce.width, ce.height, p);
      if (occ.data[r] == 0 && tap) {
        weights[r] = 1.0;
        dst[r] = *tap;
      }
    }
  TermNodes out;
  const Points P = points(tape, ctx, s, all_pixels(cs), o);
  const Unrolled u = unroll_on_tape(tape, ctx.params, network(ctx), P.X, s, e,
                                    o.net_trainable);
  const ad::NodeId end = u.position.back();
  const ad::NodeId de =
      sample_depth(tape, ctx.params, ctx.depth[e], std::move(dst),
                   o.depth_trainable);
  out.l2d = tape.project_l1(end, ce.projection(), std::move(targets), weights);
  out.ldisp = tape.inv_depth_l1(end, de, ce.projection(), std::move(weights));
  network_frame_terms(tape, ctx, s, o, u.displacement.front(),
                      u.position.front(), out);
  return out;
}

TermNodes network_backward_pair(ad::Tape& tape, const LossContext& ctx,
                                FramePair pair, const LossOptions& o) {
  const int e = pair.i, s = pair.j;
  const Camera& cs = ctx.seq.cameras[s];
  const Camera& ce = ctx.seq.cameras[e];
  const FlowField& flow = ctx.seq.flow(pair);
  const Mask& occ = ctx.seq.occlusion_of(pair).flags;
  Rows src;
  std::vector<ad::Tap> dst;
  std::vector<double> targets;
  for (int y = 0; y < ce.height; ++y)
    for (int x = 0; x < ce.width; ++x) {
      if (occ.at(x, y) != 0) continue;
      const Pixel p = corresponding_pixel(flow, x, y);
      auto tap = bilinear_taps(cs.width, cs.height, p);
      if (!tap) continue;
      src.add(cs, p, *tap);
      dst.push_back(pixel_tap(ce.width, x, y));
      targets.insert(targets.end(), {double(x), double(y)});
    }
  TermNodes out;
  if (!dst.empty()) {
    const std::size_t n = dst.size();
    const Points P = points(tape, ctx, s, std::move(src), o);
    const Unrolled u = unroll_on_tape(tape, ctx.params, network(ctx), P.X, s,
                                      e, o.net_trainable);
    const ad::NodeId end = u.position.back();
    const ad::NodeId de = sample_depth(tape, ctx.params, ctx.depth[e],
                                       std::move(dst), o.depth_trainable);
    out.l2d = tape.project_l1(end, ce.projection(), std::move(targets),
                              std::vector<double>(n, 1.0));
    out.ldisp = tape.inv_depth_l1(end, de, ce.projection(),
                                  std::vector<double>(n, 1.0));
  }
  network_frame_terms_fresh(tape, ctx, s, o, out);
  return out;
}

// --- analytic scene flow -----------------------------------------------------

/// Pair terms with S = X_e(x_e) - X_s(x_s): the displaced point coincides
/// with the unprojection in the later frame.
TermNodes analytic_pair(ad::Tape& tape, const LossContext& ctx, FramePair pair,
                        const LossOptions& o) {
  const bool forward = pair.i < pair.j;
  const int s = forward ? pair.i : pair.j;
  const int e = forward ? pair.j : pair.i;
  const Camera& cs = ctx.seq.cameras[s];
  const Camera& ce = ctx.seq.cameras[e];
  const FlowField& flow = ctx.seq.flow(pair);
  const Mask& occ = ctx.seq.occlusion_of(pair).flags;
  Rows src, dst;
  std::vector<double> targets;
  for (int y = 0; y < cs.height; ++y)
    for (int x = 0; x < cs.width; ++x) {
      if (occ.at(x, y) != 0) continue;
      const Pixel p = corresponding_pixel(flow, x, y);
      const Camera& other = forward ? ce : cs;
      auto tap = bilinear_taps(other.width, other.height, p);
      if (!tap) continue;
      const Pixel xi(x, y);
      if (forward) {
        src.add(cs, xi, pixel_tap(cs.width, x, y));
        dst.add(ce, p, *tap);
        targets.insert(targets.end(), {p.x(), p.y()});
      } else {
        src.add(cs, p, *tap);
        dst.add(ce, xi, pixel_tap(ce.width, x, y));
        targets.insert(targets.end(), {xi.x(), xi.y()});
      }
    }
  TermNodes out;
  if (src.size() > 0) {
    const std::size_t n = src.size();
    const Points Ps = points(tape, ctx, s, std::move(src), o);
    const Points Pe = points(tape, ctx, e, std::move(dst), o);
    const ad::NodeId S = tape.sub(Pe.X, Ps.X);
    const ad::NodeId end = tape.add(Ps.X, S);
    out.l2d = tape.project_l1(end, ce.projection(), std::move(targets),
                              std::vector<double>(n, 1.0));
    out.ldisp = tape.inv_depth_l1(end, Pe.depth, ce.projection(),
                                  std::vector<double>(n, 1.0));
  }
  return out;
}

bool unoccluded_at(const Mask& occ, const ad::Tap& tap) {
  for (int k = 0; k < 4; ++k)
    if (tap.weight[k] != 0.0 && occ.data[tap.index[k]] != 0) return false;
  return true;
}

/// Analytic prior on the chain x -> x1 -> x2 and the static term on x -> x1.
void analytic_frame_terms(ad::Tape& tape, const LossContext& ctx, int s,
                          const LossOptions& o, TermNodes& out) {
  const bool prior = wants_prior(ctx, s, o);
  const bool stat = wants_static(ctx, s, o);
  if (!prior && !stat) return;
  const Camera& c0 = ctx.seq.cameras[s];
  const Camera& c1 = ctx.seq.cameras[s + 1];
  const FlowField& f01 = ctx.seq.flow({s, s + 1});
  const Mask& o01 = ctx.seq.occlusion_of({s, s + 1}).flags;
  if (stat) {
    const std::vector<double> ms = static_weights(ctx, s);
    Rows r0, r1;
    for (int y = 0; y < c0.height; ++y)
      for (int x = 0; x < c0.width; ++x) {
        if (o01.at(x, y) != 0 || ms[o01.index(x, y)] == 0.0) continue;
        const Pixel x1 = corresponding_pixel(f01, x, y);
        auto t1 = bilinear_taps(c1.width, c1.height, x1);
        if (!t1) continue;
        r0.add(c0, Pixel(x, y), pixel_tap(c0.width, x, y));
        r1.add(c1, x1, *t1);
      }
    if (r0.size() > 0) {
      const std::size_t n = r0.size();
      const Points P0 = points(tape, ctx, s, std::move(r0), o);
      const Points P1 = points(tape, ctx, s + 1, std::move(r1), o);
      out.lstatic =
          tape.row_l1(tape.sub(P1.X, P0.X), std::vector<double>(n, 1.0));
    }
  }
  if (prior) {
    const Camera& c2 = ctx.seq.cameras[s + 2];
    const FlowField& f12 = ctx.seq.flow({s + 1, s + 2});
    const Mask& o12 = ctx.seq.occlusion_of({s + 1, s + 2}).flags;
    Rows r0, r1, r2;
    for (int y = 0; y < c0.height; ++y)
      for (int x = 0; x < c0.width; ++x) {
        if (o01.at(x, y) != 0) continue;
        const Pixel x1 = corresponding_pixel(f01, x, y);
        auto t1 = bilinear_taps(c1.width, c1.height, x1);
        if (!t1 || !unoccluded_at(o12, *t1)) continue;
        const auto v12 = bilinear_sample(f12.vectors, x1);
        const Pixel x2 = x1 + *v12;
        auto t2 = bilinear_taps(c2.width, c2.height, x2);
        if (!t2) continue;
        r0.add(c0, Pixel(x, y), pixel_tap(c0.width, x, y));
        r1.add(c1, x1, *t1);
        r2.add(c2, x2, *t2);
      }
    if (r0.size() > 0) {
      const std::size_t n = r0.size();
      const Points P0 = points(tape, ctx, s, std::move(r0), o);
      const Points P1 = points(tape, ctx, s + 1, std::move(r1), o);
      const Points P2 = points(tape, ctx, s + 2, std::move(r2), o);
      const ad::NodeId S01 = tape.sub(P1.X, P0.X);
      const ad::NodeId S12 = tape.sub(P2.X, P1.X);
      out.lprior =
          tape.row_l1(tape.sub(S01, S12), std::vector<double>(n, 1.0));
    }
  }
}

void check_pair(const LossContext& ctx, FramePair pair) {
  const int T = ctx.seq.frame_count();
  require(pair.i != pair.j && pair.i >= 0 && pair.j >= 0 && pair.i < T &&
              pair.j < T,
          ErrorKind::structural,
          "invalid frame pair (" + std::to_string(pair.i) + ", " +
              std::to_string(pair.j) + ")");
}

double term_value(const ad::Tape& tape, const std::optional<ad::NodeId>& id) {
  return id ? tape.scalar_value(*id) : 0.0;
}

double term_count(const ad::Tape& tape, const std::optional<ad::NodeId>& id) {
  return id ? tape.count(*id) : 0.0;
}

LossOptions frozen(LossOptions o) {
  o.depth_trainable = false;
  o.net_trainable = false;
  return o;
}

}  // namespace

TermNodes build_pair_terms(ad::Tape& tape, const LossContext& ctx,
                           FramePair pair, const LossOptions& options) {
  check_inputs(ctx);
  check_pair(ctx, pair);
  validate(options.weights);
  if (options.source == FlowSource::analytic) {
    TermNodes out = analytic_pair(tape, ctx, pair, options);
    analytic_frame_terms(tape, ctx, std::min(pair.i, pair.j), options, out);
    return out;
  }
  return pair.i < pair.j ? network_forward_pair(tape, ctx, pair, options)
                         : network_backward_pair(tape, ctx, pair, options);
}

TermNodes build_frame_terms(ad::Tape& tape, const LossContext& ctx, int frame,
                            const LossOptions& options) {
  check_inputs(ctx);
  validate(options.weights);
  TermNodes out;
  if (options.source == FlowSource::analytic)
    analytic_frame_terms(tape, ctx, frame, options, out);
  else
    network_frame_terms_fresh(tape, ctx, frame, options, out);
  return out;
}

ad::NodeId build_total(ad::Tape& tape, const TermNodes& terms,
                       const LossOptions& options) {
  std::vector<ad::NodeId> nodes;
  std::vector<double> weights;
  auto push = [&](const std::optional<ad::NodeId>& t, double w) {
    if (!t) return;
    if (options.normalized) {
      const ad::NodeId src[] = {*t};
      nodes.push_back(tape.normalize(*t, src));
    } else {
      nodes.push_back(*t);
    }
    weights.push_back(w);
  };
  push(terms.l2d, 1.0);
  push(terms.ldisp, options.weights.alpha);
  push(terms.lprior, options.weights.beta);
  push(terms.lstatic, options.weights.gamma);
  if (nodes.empty()) return tape.scalar(0.0);
  return tape.weighted_sum(nodes, weights);
}

LossBreakdown read_breakdown(const ad::Tape& tape, const TermNodes& terms,
                             const LossOptions& options) {
  LossBreakdown b;
  b.count_2d = term_count(tape, terms.l2d);
  b.count_disp = term_count(tape, terms.ldisp);
  b.count_prior = term_count(tape, terms.lprior);
  b.count_static = term_count(tape, terms.lstatic);
  auto value = [&](const std::optional<ad::NodeId>& t, double count) {
    const double raw = term_value(tape, t);
    if (!options.normalized) return raw;
    return count > 0.0 ? raw / count : 0.0;
  };
  b.l2d = value(terms.l2d, b.count_2d);
  b.ldisp = value(terms.ldisp, b.count_disp);
  b.lprior = value(terms.lprior, b.count_prior);
  b.lstatic = value(terms.lstatic, b.count_static);
  b.total = combine(b, options.weights);
  return b;
}

StepResult pair_step(const LossContext& ctx, FramePair pair,
                     const LossOptions& options) {
  ad::Tape tape;
  const TermNodes terms = build_pair_terms(tape, ctx, pair, options);
  tape.set_output(build_total(tape, terms, options));
  tape.forward(ctx.params);
  StepResult r{read_breakdown(tape, terms, options), tape.backward()};
  r.loss.total = tape.scalar_value(tape.output());
  return r;
}

LossBreakdown pair_loss(const LossContext& ctx, FramePair pair,
                        const LossOptions& options) {
  const LossOptions o = frozen(options);
  ad::Tape tape;
  const TermNodes terms = build_pair_terms(tape, ctx, pair, o);
  tape.set_output(build_total(tape, terms, o));
  tape.forward(ctx.params);
  LossBreakdown b = read_breakdown(tape, terms, o);
  b.total = tape.scalar_value(tape.output());
  return b;
}

namespace {

LossOptions term_only(FlowSource source, double beta, double gamma) {
  LossOptions o;
  o.source = source;
  o.weights = {0.0, beta, gamma};
  o.normalized = false;
  return frozen(o);
}

TermValue evaluate_term(const LossContext& ctx, ad::Tape& tape,
                        const std::optional<ad::NodeId>& id) {
  if (!id) return {};
  tape.set_output(*id);
  tape.forward(ctx.params);
  return {tape.scalar_value(*id), tape.count(*id)};
}

}  // namespace

TermValue loss_2d(const LossContext& ctx, FramePair pair, FlowSource source) {
  ad::Tape tape;
  const TermNodes t =
      build_pair_terms(tape, ctx, pair, term_only(source, 0.0, 0.0));
  return evaluate_term(ctx, tape, t.l2d);
}

TermValue loss_disp(const LossContext& ctx, FramePair pair, FlowSource source) {
  ad::Tape tape;
  const TermNodes t =
      build_pair_terms(tape, ctx, pair, term_only(source, 0.0, 0.0));
  return evaluate_term(ctx, tape, t.ldisp);
}

TermValue loss_prior(const LossContext& ctx, int frame, FlowSource source) {
  ad::Tape tape;
  const TermNodes t =
      build_frame_terms(tape, ctx, frame, term_only(source, 1.0, 0.0));
  return evaluate_term(ctx, tape, t.lprior);
}

TermValue loss_static(const LossContext& ctx, int frame, FlowSource source) {
  require(ctx.seq.has_motion_masks(), ErrorKind::config,
          "the static-region loss needs motion masks");
  ad::Tape tape;
  const TermNodes t =
      build_frame_terms(tape, ctx, frame, term_only(source, 0.0, 1.0));
  return evaluate_term(ctx, tape, t.lstatic);
}

LossBreakdown total_loss(const LossContext& ctx,
                         std::span<const FramePair> pairs,
                         const LossOptions& options) {
  validate(options.weights);
  if (options.weights.gamma > 0.0)
    require(ctx.seq.has_motion_masks(), ErrorKind::config,
            "the static-region loss needs motion masks");
  LossBreakdown raw;
  std::set<int> frames;
  for (FramePair pair : pairs) {
    ad::Tape tape;
    const TermNodes t = build_pair_terms(tape, ctx, pair,
                                         term_only(options.source, 0.0, 0.0));
    if (t.l2d) {
      const ad::NodeId parts[] = {*t.l2d, *t.ldisp};
      const double ones[] = {1.0, 1.0};
      tape.set_output(tape.weighted_sum(parts, ones));
      tape.forward(ctx.params);
      raw.l2d += tape.scalar_value(*t.l2d);
      raw.count_2d += tape.count(*t.l2d);
      raw.ldisp += tape.scalar_value(*t.ldisp);
      raw.count_disp += tape.count(*t.ldisp);
    }
    frames.insert(std::min(pair.i, pair.j));
  }
  for (int s : frames) {
    if (options.weights.beta > 0.0) {
      const TermValue p = loss_prior(ctx, s, options.source);
      raw.lprior += p.sum;
      raw.count_prior += p.count;
    }
    if (options.weights.gamma > 0.0) {
      const TermValue q = loss_static(ctx, s, options.source);
      raw.lstatic += q.sum;
      raw.count_static += q.count;
    }
  }
  LossBreakdown b = raw;
  if (options.normalized) {
    auto norm = [](double sum, double count) {
      return count > 0.0 ? sum / count : 0.0;
    };
    b.l2d = norm(raw.l2d, raw.count_2d);
    b.ldisp = norm(raw.ldisp, raw.count_disp);
    b.lprior = norm(raw.lprior, raw.count_prior);
    b.lstatic = norm(raw.lstatic, raw.count_static);
  }
  b.total = combine(b, options.weights);
  return b;
}

}  // namespace dyndepth
