#include "dyndepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace dyndepth {

TrainMode parse_mode(const std::string& name) {
  if (name == "full") return TrainMode::full;
  if (name == "analytic_baseline") return TrainMode::analytic_baseline;
  if (name == "no_prior") return TrainMode::no_prior;
  if (name == "static_mask") return TrainMode::static_mask;
  fail(ErrorKind::config,
       "unknown mode '" + name +
           "' (expected full, analytic_baseline, no_prior or static_mask)");
}

const char* to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::full: return "full";
    case TrainMode::analytic_baseline: return "analytic_baseline";
    case TrainMode::no_prior: return "no_prior";
    case TrainMode::static_mask: return "static_mask";
  }
  return "unknown";
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"warmup_epochs", warmup_epochs},
      {"total_epochs", total_epochs},
      {"lr_depth", lr_depth},
      {"lr_sceneflow", lr_sceneflow},
      {"alpha", weights.alpha},
      {"beta", weights.beta},
      {"gamma", weights.gamma},
      {"mode", to_string(mode)},
      {"seed", seed},
      {"normalized", normalized},
      {"bands", bands},
      {"hidden_layers", net_shape.hidden_layers},
      {"hidden_width", net_shape.hidden_width},
      {"divergence_factor", divergence_factor},
      {"divergence_floor", divergence_floor},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& d) {
  TrainConfig c;
  try {
    c.warmup_epochs = d.at("warmup_epochs").get<int>();
    c.total_epochs = d.at("total_epochs").get<int>();
    c.lr_depth = d.at("lr_depth").get<double>();
    c.lr_sceneflow = d.at("lr_sceneflow").get<double>();
    c.weights = {d.at("alpha").get<double>(), d.at("beta").get<double>(),
                 d.at("gamma").get<double>()};
    c.mode = parse_mode(d.at("mode").get<std::string>());
    c.seed = d.at("seed").get<std::uint64_t>();
    c.normalized = d.at("normalized").get<bool>();
    c.bands = d.at("bands").get<int>();
    c.net_shape.hidden_layers = d.at("hidden_layers").get<int>();
    c.net_shape.hidden_width = d.at("hidden_width").get<int>();
    c.divergence_factor = d.at("divergence_factor").get<double>();
    c.divergence_floor = d.at("divergence_floor").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed training config: ") + e.what());
  }
  validate(c);
  return c;
}

void validate(const TrainConfig& c) {
  require(c.warmup_epochs >= 0 && c.total_epochs >= 0, ErrorKind::config,
          "epoch counts must be non-negative");
  require(c.warmup_epochs <= c.total_epochs, ErrorKind::config,
          "warm-up epochs cannot exceed total epochs");
  require(c.lr_depth >= 0.0 && c.lr_sceneflow >= 0.0 &&
              std::isfinite(c.lr_depth) && std::isfinite(c.lr_sceneflow),
          ErrorKind::config, "learning rates must be finite and non-negative");
  validate(c.weights);
  require(c.bands >= 1, ErrorKind::config, "bands must be at least 1");
  require(c.net_shape.hidden_layers >= 1 && c.net_shape.hidden_width >= 1,
          ErrorKind::config, "network needs at least one hidden unit");
  require(c.divergence_factor > 1.0, ErrorKind::config,
          "divergence factor must exceed 1");
  require(c.divergence_floor > 0.0 && std::isfinite(c.divergence_floor),
          ErrorKind::config, "divergence floor must be positive");
}

LossWeights effective_weights(const TrainConfig& cfg, bool warmup_phase) {
  LossWeights w = cfg.weights;
  if (cfg.mode != TrainMode::static_mask) w.gamma = 0.0;
  if (warmup_phase || cfg.mode == TrainMode::no_prior) w.beta = 0.0;
  return w;
}

std::uint64_t TrainState::depth_checksum() const {
  const auto ids = depth_ids();
  return params.checksum(ids);
}

TrainState init_state(const Sequence& seq, const TrainConfig& cfg) {
  validate(cfg);
  validate(seq);
  if (cfg.mode == TrainMode::static_mask)
    require(seq.has_motion_masks(), ErrorKind::config,
            "static_mask mode needs motion masks in the dataset");
  TrainState s;
  s.depth = init_from_maps(s.params, seq.init_depth);
  if (cfg.mode != TrainMode::analytic_baseline) {
    const EncodingConfig enc = encoding_from_depths(
        seq.cameras, seq.init_depth, cfg.bands);
    s.net = create_scene_flow_net(s.params, enc, cfg.net_shape, cfg.seed);
  }
  return s;
}

std::vector<FramePair> epoch_order(const Sequence& seq, std::uint64_t seed,
                                   int epoch) {
  std::vector<FramePair> pairs = pair_schedule(seq.frame_count());
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull +
                      static_cast<std::uint64_t>(epoch));
  for (std::size_t i = pairs.size(); i > 1; --i)
    std::swap(pairs[i - 1], pairs[rng() % i]);
  return pairs;
}

std::vector<Raster<double>> depth_maps(const TrainState& state) {
  std::vector<Raster<double>> out;
  for (const DepthField& f : state.depth)
    out.push_back(depth_raster(state.params, f));
  return out;
}

namespace {

enum class Phase { warmup, joint, analytic };

std::vector<double> block_rates(const TrainState& s, double lr_depth,
                                double lr_net) {
  std::vector<double> lr(s.params.size(), 0.0);
  for (ad::BlockId id : s.depth_ids()) lr[id] = lr_depth;
  if (s.net)
    for (ad::BlockId id : s.net->blocks()) lr[id] = lr_net;
  return lr;
}

std::string divergence_report(const StepRecord& r, double reference,
                              const char* reason) {
  std::ostringstream out;
  out << "training diverged at step " << r.step << " (epoch " << r.epoch
      << ", pair " << r.pair.i << "->" << r.pair.j << "): " << reason
      << "; loss " << r.loss.total << " vs reference " << reference;
  return out.str();
}

void run_epoch(TrainState& state, const Sequence& seq, const TrainConfig& cfg,
               Phase phase, const TrainHooks& hooks) {
  const int epoch = state.epoch + 1;
  LossOptions options;
  options.weights = effective_weights(cfg, phase == Phase::warmup);
  options.normalized = cfg.normalized;
  options.source =
      phase == Phase::analytic ? FlowSource::analytic : FlowSource::network;
  options.depth_trainable = phase != Phase::warmup;
  options.net_trainable = phase != Phase::analytic;
  const std::vector<double> lr = block_rates(
      state, phase == Phase::warmup ? 0.0 : cfg.lr_depth, cfg.lr_sceneflow);
  const LossContext ctx{state.params, seq, state.depth,
                        state.net ? &*state.net : nullptr};
  const bool tolerant = phase == Phase::analytic;

  const std::vector<FramePair> order = epoch_order(seq, cfg.seed, epoch);
  double sum = 0.0;
  std::size_t counted = 0;
  for (FramePair pair : order) {
    StepRecord rec;
    rec.step = ++state.step;
    rec.epoch = epoch;
    rec.pair = pair;
    const double reference =
        state.epoch > 0 && state.last_epoch_mean > 0.0
            ? state.last_epoch_mean
            : (counted > 0 ? sum / static_cast<double>(counted) : 0.0);
    StepResult result;
    try {
      result = pair_step(ctx, pair, options);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      if (!tolerant) fail(ErrorKind::divergence, divergence_report(rec, reference, e.what()));
      ++state.stats.nonfinite_events;
      ++state.stats.skipped_steps;
      rec.skipped = true;
      if (hooks.on_step) hooks.on_step(rec);
      continue;
    }
    rec.loss = result.loss;
    const bool empty = result.loss.count_2d + result.loss.count_disp +
                           result.loss.count_prior + result.loss.count_static ==
                       0.0;
    if (!result.grads.all_finite() || !std::isfinite(rec.loss.total)) {
      if (!tolerant)
        fail(ErrorKind::divergence,
             divergence_report(rec, reference, "non-finite loss or gradient"));
      ++state.stats.nonfinite_events;
      rec.skipped = true;
    } else if (empty) {
      rec.skipped = true;
    } else {
      if (reference > 0.0 &&
          rec.loss.total >
              cfg.divergence_factor * std::max(reference, cfg.divergence_floor))
        fail(ErrorKind::divergence,
             divergence_report(rec, reference, "loss exceeded the guard"));
      ad::adam_step(state.params, result.grads, lr);
      sum += rec.loss.total;
      ++counted;
    }
    if (rec.skipped) ++state.stats.skipped_steps;
    if (hooks.on_step) hooks.on_step(rec);
  }
  state.stats.pairs_per_epoch.push_back(order.size());
  state.last_epoch_mean = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  state.epoch = epoch;
  if (hooks.on_epoch_end) hooks.on_epoch_end(state);
}

void require_network(const TrainState& s) {
  require(s.net.has_value(), ErrorKind::state,
          "this phase needs a scene-flow network");
}

}  // namespace

void warmup(TrainState& state, const Sequence& seq, const TrainConfig& cfg,
            const TrainHooks& hooks) {
  validate(cfg);
  require_network(state);
  while (state.epoch < cfg.warmup_epochs)
    run_epoch(state, seq, cfg, Phase::warmup, hooks);
}

void joint_train(TrainState& state, const Sequence& seq,
                 const TrainConfig& cfg, const TrainHooks& hooks) {
  validate(cfg);
  require_network(state);
  while (state.epoch < cfg.total_epochs)
    run_epoch(state, seq, cfg, Phase::joint, hooks);
}

void train_analytic_baseline(TrainState& state, const Sequence& seq,
                             const TrainConfig& cfg, const TrainHooks& hooks) {
  validate(cfg);
  require(cfg.mode == TrainMode::analytic_baseline && !state.net,
          ErrorKind::state,
          "the analytic baseline runs without a scene-flow network");
  while (state.epoch < cfg.total_epochs)
    run_epoch(state, seq, cfg, Phase::analytic, hooks);
}

void train(TrainState& state, const Sequence& seq, const TrainConfig& cfg,
           const TrainHooks& hooks) {
  if (cfg.mode == TrainMode::analytic_baseline) {
    train_analytic_baseline(state, seq, cfg, hooks);
    return;
  }
  warmup(state, seq, cfg, hooks);
  joint_train(state, seq, cfg, hooks);
}

}  // namespace dyndepth
