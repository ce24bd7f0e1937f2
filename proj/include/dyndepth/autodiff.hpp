#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape is recorded first (shapes are checked while recording), then
// evaluated with forward() against a ParamStore and differentiated with
// backward(). Values and adjoints live in two flat arenas of doubles; every
// node owns a contiguous row-major slice of each. Tapes are rebuilt for each
// optimization step.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "dyndepth/error.hpp"

namespace dyndepth::ad {

using BlockId = std::uint32_t;

struct Block {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t steps = 0;  // Adam updates applied to this block

  std::size_t size() const { return value.size(); }
};

/// Named parameter blocks plus their Adam state.
class ParamStore {
 public:
  BlockId add(std::string name, int rows, int cols, std::vector<double> values);

  std::optional<BlockId> find(std::string_view name) const;
  BlockId id(std::string_view name) const;  // throws structural if missing

  std::size_t size() const { return blocks_.size(); }
  const Block& block(BlockId id) const;
  Block& block(BlockId id);
  std::span<const Block> blocks() const { return blocks_; }

  std::span<const double> values(BlockId id) const { return block(id).value; }
  std::span<double> values(BlockId id) { return block(id).value; }

  /// Number of adam_step calls applied to the store as a whole.
  std::uint64_t step() const { return step_; }
  /// Resets the store-level counter when restoring saved state.
  void restore_step(std::uint64_t step) { step_ = step; }

  /// FNV-1a over the raw bytes of the listed blocks (all blocks if empty).
  std::uint64_t checksum(std::span<const BlockId> ids = {}) const;

 private:
  friend void adam_step(ParamStore&, const struct Gradients&,
                        std::span<const double>);
  std::vector<Block> blocks_;
  std::uint64_t step_ = 0;
};

struct Gradients {
  std::vector<std::vector<double>> blocks;  // aligned with ParamStore blocks
  std::vector<bool> touched;                // block was a trainable leaf

  bool all_finite() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Bias-corrected Adam update on every touched block. lr must be > 0.
void adam_step(ParamStore& params, const Gradients& grads, double lr);

/// Same, with a learning rate per block. A rate of 0 freezes the block
/// completely (its moments and step counter are left alone as well).
void adam_step(ParamStore& params, const Gradients& grads,
               std::span<const double> lr_per_block);

// ---------------------------------------------------------------------------

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  constant,
  param,
  add,
  sub,
  mul,
  scale,
  exp,
  relu,
  sum,
  dense,
  pos_encode,
  ray_point,
  gather,
  project_l1,
  inv_depth_l1,
  row_l1,
  weighted_sum,
  normalize,
};

const char* to_string(Op op) noexcept;

enum class Activation : std::uint8_t { identity, relu };

/// Up to four weighted taps into a flattened raster (bilinear sampling).
struct Tap {
  std::array<std::uint32_t, 4> index{};
  std::array<double, 4> weight{};
};

/// Pinhole camera reduced to what the projection ops need:
/// pixel = pi(A (X - origin)), with A = K R^T.
struct ProjectionCamera {
  Eigen::Matrix3d A = Eigen::Matrix3d::Identity();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
};

inline constexpr double kMinCameraDepth = 1e-4;

class Tape {
 public:
  Tape() = default;

  // --- leaves -------------------------------------------------------------
  NodeId constant(int rows, int cols, std::span<const double> values);
  NodeId scalar(double value) { return constant(1, 1, std::span(&value, 1)); }
  /// Parameter leaf. Non-trainable leaves receive no gradient.
  NodeId param(const ParamStore& params, BlockId block, bool trainable = true);

  // --- elementwise --------------------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId exp(NodeId a);
  NodeId relu(NodeId a);
  NodeId sum(NodeId a);

  // --- network ------------------------------------------------------------
  /// act(x W + b); x is n x in, W is in x out, b has out entries.
  NodeId dense(NodeId x, NodeId weight, NodeId bias, Activation act);

  /// Sinusoidal features of (x, y, z, t): each coordinate u, after the affine
  /// map u = (x - lo) * gain - 1, becomes [sin(pi u), cos(pi u), ...,
  /// sin(N pi u), cos(N pi u)]. t is a constant shared by every row.
  NodeId pos_encode(NodeId points, int bands, const Eigen::Vector3d& lo,
                    const Eigen::Vector3d& gain, double time_coord);

  // --- geometry -----------------------------------------------------------
  /// depth (n x 1) times constant directions (n x 3) plus a constant origin.
  NodeId ray_point(NodeId depth, std::vector<double> directions,
                   const Eigen::Vector3d& origin);
  /// n x 1 output sampled from a flattened source by fixed taps.
  NodeId gather(NodeId source, std::vector<Tap> taps);

  // --- reductions (all produce 1 x 1 and record a contributing count) -----
  /// sum_r w_r |pi(A(X_r - o)) - target_r|_1 over rows in front of the camera.
  NodeId project_l1(NodeId points, const ProjectionCamera& camera,
                    std::vector<double> targets, std::vector<double> weights);
  /// sum_r w_r |1/z_r - 1/D_r| with z_r the camera-space depth of X_r.
  NodeId inv_depth_l1(NodeId points, NodeId depth,
                      const ProjectionCamera& camera,
                      std::vector<double> weights);
  /// sum_r w_r sum_c |a_rc|.
  NodeId row_l1(NodeId a, std::vector<double> weights);

  /// ((w0 a0 + w1 a1) + w2 a2) + ... over scalar nodes.
  NodeId weighted_sum(std::span<const NodeId> terms,
                      std::span<const double> weights);
  /// a / (sum of the counts recorded by the listed reduction nodes), or 0.
  NodeId normalize(NodeId a, std::span<const NodeId> count_sources);

  // --- evaluation ---------------------------------------------------------
  /// Evaluates every node in order; returns the value of output().
  double forward(const ParamStore& params);
  /// Evaluates every node without requiring a scalar output.
  void evaluate(const ParamStore& params);
  /// Reverse sweep from output(). Requires a prior forward().
  Gradients backward();

  void set_output(NodeId id);
  NodeId output() const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t value_count() const { return values_.size(); }
  int rows(NodeId id) const { return node(id).rows; }
  int cols(NodeId id) const { return node(id).cols; }
  std::span<const double> value(NodeId id) const;
  std::span<const double> adjoint(NodeId id) const;
  double scalar_value(NodeId id) const;
  /// Contributing-row count recorded by a reduction node during forward().
  double count(NodeId id) const;
  bool evaluated() const { return evaluated_; }

  /// Test hook: append a node whose operand refers to a later index.
  NodeId debug_add_unchecked(std::uint32_t a, std::uint32_t b, int rows,
                             int cols);

 private:
  struct EncodePayload {
    int bands;
    Eigen::Vector3d lo;
    Eigen::Vector3d gain;
    double time_coord;
  };
  struct RayPayload {
    std::vector<double> directions;
    Eigen::Vector3d origin;
  };
  struct ProjectPayload {
    ProjectionCamera camera;
    std::vector<double> targets;
    std::vector<double> weights;
  };
  struct WeightsPayload {
    std::vector<double> weights;
  };
  struct SumPayload {
    std::vector<NodeId> terms;
    std::vector<double> weights;
  };
  using Payload =
      std::variant<std::monostate, double, Activation, EncodePayload,
                   RayPayload, std::vector<Tap>, ProjectPayload,
                   WeightsPayload, SumPayload>;

  struct Node {
    Op op;
    std::uint32_t a = kNone, b = kNone, c = kNone;
    int rows = 0, cols = 0;
    std::size_t offset = 0;
    bool needs_grad = false;
    BlockId block = 0;
    double count = 0.0;
    Payload payload = {};

    std::size_t size() const {
      return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }
  };
  static constexpr std::uint32_t kNone = 0xffffffffu;

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void check_operand(NodeId id, const char* what) const;

  void eval_node(std::size_t index, const ParamStore& params);
  void backprop_node(std::size_t index);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<std::size_t> param_sizes_;
  std::optional<NodeId> output_;
  bool evaluated_ = false;
};

}  // namespace dyndepth::ad
