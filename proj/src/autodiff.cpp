#include "dyndepth/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace dyndepth {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::structural: return "structural";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    case ErrorKind::domain: return "domain";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace dyndepth

namespace dyndepth::ad {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

const char* to_string(Op op) noexcept {
  switch (op) {
    case Op::constant: return "constant";
    case Op::param: return "param";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::exp: return "exp";
    case Op::relu: return "relu";
    case Op::sum: return "sum";
    case Op::dense: return "dense";
    case Op::pos_encode: return "pos_encode";
    case Op::ray_point: return "ray_point";
    case Op::gather: return "gather";
    case Op::project_l1: return "project_l1";
    case Op::inv_depth_l1: return "inv_depth_l1";
    case Op::row_l1: return "row_l1";
    case Op::weighted_sum: return "weighted_sum";
    case Op::normalize: return "normalize";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParamStore

BlockId ParamStore::add(std::string name, int rows, int cols,
                        std::vector<double> values) {
  require(rows > 0 && cols > 0, ErrorKind::structural,
          "parameter block '" + name + "' must have a positive shape");
  require(values.size() == static_cast<std::size_t>(rows) * cols,
          ErrorKind::structural,
          "parameter block '" + name + "' size does not match its shape");
  require(!find(name).has_value(), ErrorKind::structural,
          "duplicate parameter block '" + name + "'");
  Block block;
  block.name = std::move(name);
  block.rows = rows;
  block.cols = cols;
  block.first_moment.assign(values.size(), 0.0);
  block.second_moment.assign(values.size(), 0.0);
  block.value = std::move(values);
  blocks_.push_back(std::move(block));
  return static_cast<BlockId>(blocks_.size() - 1);
}

std::optional<BlockId> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return static_cast<BlockId>(i);
  return std::nullopt;
}

BlockId ParamStore::id(std::string_view name) const {
  auto found = find(name);
  if (!found)
    fail(ErrorKind::structural,
         "no parameter block named '" + std::string(name) + "'");
  return *found;
}

const Block& ParamStore::block(BlockId id) const {
  require(id < blocks_.size(), ErrorKind::structural,
          "parameter block id " + std::to_string(id) + " out of range");
  return blocks_[id];
}

Block& ParamStore::block(BlockId id) {
  require(id < blocks_.size(), ErrorKind::structural,
          "parameter block id " + std::to_string(id) + " out of range");
  return blocks_[id];
}

std::uint64_t ParamStore::checksum(std::span<const BlockId> ids) const {
  std::uint64_t hash = 1469598103934665603ull;
  auto mix = [&hash](const Block& b) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(b.value.data());
    for (std::size_t i = 0; i < b.value.size() * sizeof(double); ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  };
  if (ids.empty()) {
    for (const auto& b : blocks_) mix(b);
  } else {
    for (BlockId id : ids) mix(block(id));
  }
  return hash;
}

bool Gradients::all_finite() const {
  for (const auto& g : blocks)
    for (double v : g)
      if (!std::isfinite(v)) return false;
  return true;
}

void adam_step(ParamStore& params, const Gradients& grads, double lr) {
  require(lr > 0.0, ErrorKind::domain, "learning rate must be positive");
  std::vector<double> rates(params.size(), lr);
  adam_step(params, grads, rates);
}

void adam_step(ParamStore& params, const Gradients& grads,
               std::span<const double> lr_per_block) {
  const std::size_t n = params.size();
  require(grads.blocks.size() == n && grads.touched.size() == n,
          ErrorKind::structural, "gradient blocks do not match parameter store");
  require(lr_per_block.size() == n, ErrorKind::structural,
          "one learning rate per parameter block expected");
  for (std::size_t b = 0; b < n; ++b) {
    require(grads.blocks[b].size() == params.blocks_[b].size(),
            ErrorKind::structural,
            "gradient length mismatch for block '" + params.blocks_[b].name + "'");
    require(lr_per_block[b] >= 0.0, ErrorKind::domain,
            "learning rate must be non-negative");
    if (!grads.touched[b] || lr_per_block[b] == 0.0) continue;
    for (double g : grads.blocks[b])
      if (!std::isfinite(g))
        fail(ErrorKind::numeric, "non-finite gradient in block '" +
                                     params.blocks_[b].name + "'");
  }

  for (std::size_t b = 0; b < n; ++b) {
    if (!grads.touched[b] || lr_per_block[b] == 0.0) continue;
    Block& block = params.blocks_[b];
    const auto& g = grads.blocks[b];
    block.steps += 1;
    const double t = static_cast<double>(block.steps);
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    const double lr = lr_per_block[b];
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& m = block.first_moment[i];
      double& v = block.second_moment[i];
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g[i];
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g[i] * g[i];
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      block.value[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
    }
  }
  params.step_ += 1;
}

// ---------------------------------------------------------------------------
// Tape construction

NodeId Tape::push(Node node) {
  evaluated_ = false;
  node.offset = values_.size();
  values_.resize(values_.size() + node.size(), 0.0);
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(NodeId id) const {
  require(id.index < nodes_.size(), ErrorKind::structural,
          "node id " + std::to_string(id.index) + " does not exist");
  return nodes_[id.index];
}

void Tape::check_operand(NodeId id, const char* what) const {
  if (id.index >= nodes_.size())
    fail(ErrorKind::structural, std::string(what) + ": operand " +
                                    std::to_string(id.index) +
                                    " does not exist on this tape");
}

NodeId Tape::constant(int rows, int cols, std::span<const double> values) {
  require(rows > 0 && cols > 0, ErrorKind::structural,
          "constant must have a positive shape");
  require(values.size() == static_cast<std::size_t>(rows) * cols,
          ErrorKind::structural, "constant size does not match its shape");
  Node n{.op = Op::constant, .rows = rows, .cols = cols};
  NodeId id = push(std::move(n));
  std::copy(values.begin(), values.end(),
            values_.begin() + static_cast<std::ptrdiff_t>(nodes_.back().offset));
  return id;
}

NodeId Tape::param(const ParamStore& params, BlockId block, bool trainable) {
  const Block& b = params.block(block);
  Node n{.op = Op::param, .rows = b.rows, .cols = b.cols,
         .needs_grad = trainable, .block = block};
  return push(std::move(n));
}

namespace {
void require_same_shape(int ra, int ca, int rb, int cb, const char* what) {
  if (ra != rb || ca != cb)
    fail(ErrorKind::structural,
         std::string(what) + ": operand shapes differ (" + std::to_string(ra) +
             "x" + std::to_string(ca) + " vs " + std::to_string(rb) + "x" +
             std::to_string(cb) + ")");
}
}  // namespace

NodeId Tape::add(NodeId a, NodeId b) {
  check_operand(a, "add");
  check_operand(b, "add");
  const Node& na = nodes_[a.index];
  const Node& nb = nodes_[b.index];
  require_same_shape(na.rows, na.cols, nb.rows, nb.cols, "add");
  return push(Node{.op = Op::add, .a = a.index, .b = b.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad || nb.needs_grad});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_operand(a, "sub");
  check_operand(b, "sub");
  const Node& na = nodes_[a.index];
  const Node& nb = nodes_[b.index];
  require_same_shape(na.rows, na.cols, nb.rows, nb.cols, "sub");
  return push(Node{.op = Op::sub, .a = a.index, .b = b.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad || nb.needs_grad});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_operand(a, "mul");
  check_operand(b, "mul");
  const Node& na = nodes_[a.index];
  const Node& nb = nodes_[b.index];
  require_same_shape(na.rows, na.cols, nb.rows, nb.cols, "mul");
  return push(Node{.op = Op::mul, .a = a.index, .b = b.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad || nb.needs_grad});
}

NodeId Tape::scale(NodeId a, double factor) {
  check_operand(a, "scale");
  const Node& na = nodes_[a.index];
  return push(Node{.op = Op::scale, .a = a.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad,
                   .payload = factor});
}

NodeId Tape::exp(NodeId a) {
  check_operand(a, "exp");
  const Node& na = nodes_[a.index];
  return push(Node{.op = Op::exp, .a = a.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad});
}

NodeId Tape::relu(NodeId a) {
  check_operand(a, "relu");
  const Node& na = nodes_[a.index];
  return push(Node{.op = Op::relu, .a = a.index, .rows = na.rows,
                   .cols = na.cols, .needs_grad = na.needs_grad});
}

NodeId Tape::sum(NodeId a) {
  check_operand(a, "sum");
  const Node& na = nodes_[a.index];
  return push(Node{.op = Op::sum, .a = a.index, .rows = 1, .cols = 1,
                   .needs_grad = na.needs_grad});
}

NodeId Tape::dense(NodeId x, NodeId weight, NodeId bias, Activation act) {
  check_operand(x, "dense");
  check_operand(weight, "dense");
  check_operand(bias, "dense");
  const Node& nx = nodes_[x.index];
  const Node& nw = nodes_[weight.index];
  const Node& nb = nodes_[bias.index];
  if (nx.cols != nw.rows)
    fail(ErrorKind::structural,
         "dense: input width " + std::to_string(nx.cols) +
             " does not match weight rows " + std::to_string(nw.rows));
  if (static_cast<int>(nb.size()) != nw.cols)
    fail(ErrorKind::structural, "dense: bias length does not match weight cols");
  return push(Node{.op = Op::dense, .a = x.index, .b = weight.index,
                   .c = bias.index, .rows = nx.rows, .cols = nw.cols,
                   .needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad,
                   .payload = act});
}

NodeId Tape::pos_encode(NodeId points, int bands, const Eigen::Vector3d& lo,
                        const Eigen::Vector3d& gain, double time_coord) {
  check_operand(points, "pos_encode");
  const Node& np = nodes_[points.index];
  require(np.cols == 3, ErrorKind::structural, "pos_encode expects n x 3 points");
  require(bands >= 1, ErrorKind::domain, "pos_encode needs at least one band");
  return push(Node{.op = Op::pos_encode, .a = points.index, .rows = np.rows,
                   .cols = 8 * bands, .needs_grad = np.needs_grad,
                   .payload = EncodePayload{bands, lo, gain, time_coord}});
}

NodeId Tape::ray_point(NodeId depth, std::vector<double> directions,
                       const Eigen::Vector3d& origin) {
  check_operand(depth, "ray_point");
  const Node& nd = nodes_[depth.index];
  require(nd.cols == 1, ErrorKind::structural, "ray_point expects n x 1 depth");
  require(directions.size() == 3 * static_cast<std::size_t>(nd.rows),
          ErrorKind::structural, "ray_point: direction count mismatch");
  return push(Node{.op = Op::ray_point, .a = depth.index, .rows = nd.rows,
                   .cols = 3, .needs_grad = nd.needs_grad,
                   .payload = RayPayload{std::move(directions), origin}});
}

NodeId Tape::gather(NodeId source, std::vector<Tap> taps) {
  check_operand(source, "gather");
  const Node& ns = nodes_[source.index];
  const std::size_t n = ns.size();
  for (const Tap& t : taps)
    for (int k = 0; k < 4; ++k)
      if (t.weight[k] != 0.0 && t.index[k] >= n)
        fail(ErrorKind::structural, "gather: tap index out of range");
  require(!taps.empty(), ErrorKind::structural, "gather: no taps");
  const int rows = static_cast<int>(taps.size());
  return push(Node{.op = Op::gather, .a = source.index, .rows = rows, .cols = 1,
                   .needs_grad = ns.needs_grad, .payload = std::move(taps)});
}

NodeId Tape::project_l1(NodeId points, const ProjectionCamera& camera,
                        std::vector<double> targets,
                        std::vector<double> weights) {
  check_operand(points, "project_l1");
  const Node& np = nodes_[points.index];
  require(np.cols == 3, ErrorKind::structural, "project_l1 expects n x 3 points");
  require(targets.size() == 2 * static_cast<std::size_t>(np.rows) &&
              weights.size() == static_cast<std::size_t>(np.rows),
          ErrorKind::structural, "project_l1: target/weight count mismatch");
  return push(Node{.op = Op::project_l1, .a = points.index, .rows = 1,
                   .cols = 1, .needs_grad = np.needs_grad,
                   .payload = ProjectPayload{camera, std::move(targets),
                                             std::move(weights)}});
}

NodeId Tape::inv_depth_l1(NodeId points, NodeId depth,
                          const ProjectionCamera& camera,
                          std::vector<double> weights) {
  check_operand(points, "inv_depth_l1");
  check_operand(depth, "inv_depth_l1");
  const Node& np = nodes_[points.index];
  const Node& nd = nodes_[depth.index];
  require(np.cols == 3 && nd.cols == 1 && nd.rows == np.rows,
          ErrorKind::structural, "inv_depth_l1: shape mismatch");
  require(weights.size() == static_cast<std::size_t>(np.rows),
          ErrorKind::structural, "inv_depth_l1: weight count mismatch");
  return push(Node{.op = Op::inv_depth_l1, .a = points.index, .b = depth.index,
                   .rows = 1, .cols = 1,
                   .needs_grad = np.needs_grad || nd.needs_grad,
                   .payload = ProjectPayload{camera, {}, std::move(weights)}});
}

NodeId Tape::row_l1(NodeId a, std::vector<double> weights) {
  check_operand(a, "row_l1");
  const Node& na = nodes_[a.index];
  require(weights.size() == static_cast<std::size_t>(na.rows),
          ErrorKind::structural, "row_l1: weight count mismatch");
  return push(Node{.op = Op::row_l1, .a = a.index, .rows = 1, .cols = 1,
                   .needs_grad = na.needs_grad,
                   .payload = WeightsPayload{std::move(weights)}});
}

NodeId Tape::weighted_sum(std::span<const NodeId> terms,
                          std::span<const double> weights) {
  require(!terms.empty() && terms.size() == weights.size(),
          ErrorKind::structural, "weighted_sum: terms/weights mismatch");
  bool grad = false;
  for (NodeId t : terms) {
    check_operand(t, "weighted_sum");
    require(nodes_[t.index].size() == 1, ErrorKind::structural,
            "weighted_sum: terms must be scalars");
    grad = grad || nodes_[t.index].needs_grad;
  }
  return push(Node{.op = Op::weighted_sum, .rows = 1, .cols = 1,
                   .needs_grad = grad,
                   .payload = SumPayload{{terms.begin(), terms.end()},
                                         {weights.begin(), weights.end()}}});
}

NodeId Tape::normalize(NodeId a, std::span<const NodeId> count_sources) {
  check_operand(a, "normalize");
  require(nodes_[a.index].size() == 1, ErrorKind::structural,
          "normalize: input must be a scalar");
  for (NodeId s : count_sources) {
    check_operand(s, "normalize");
    const Op op = nodes_[s.index].op;
    require(op == Op::project_l1 || op == Op::inv_depth_l1 || op == Op::row_l1,
            ErrorKind::structural, "normalize: count source is not a reduction");
  }
  return push(Node{.op = Op::normalize, .a = a.index, .rows = 1, .cols = 1,
                   .needs_grad = nodes_[a.index].needs_grad,
                   .payload = SumPayload{{count_sources.begin(),
                                          count_sources.end()},
                                         {}}});
}

NodeId Tape::debug_add_unchecked(std::uint32_t a, std::uint32_t b, int rows,
                                 int cols) {
  return push(Node{.op = Op::add, .a = a, .b = b, .rows = rows, .cols = cols});
}

void Tape::set_output(NodeId id) {
  check_operand(id, "set_output");
  require(nodes_[id.index].size() == 1, ErrorKind::structural,
          "tape output must be a scalar");
  output_ = id;
}

NodeId Tape::output() const {
  if (output_) return *output_;
  require(!nodes_.empty(), ErrorKind::state, "empty tape has no output");
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::span<const double> Tape::value(NodeId id) const {
  const Node& n = node(id);
  return {values_.data() + n.offset, n.size()};
}

std::span<const double> Tape::adjoint(NodeId id) const {
  const Node& n = node(id);
  require(adjoints_.size() == values_.size(), ErrorKind::state,
          "adjoints are only available after forward()");
  return {adjoints_.data() + n.offset, n.size()};
}

double Tape::scalar_value(NodeId id) const {
  const Node& n = node(id);
  require(n.size() == 1, ErrorKind::structural, "node is not a scalar");
  return values_[n.offset];
}

double Tape::count(NodeId id) const { return node(id).count; }

// ---------------------------------------------------------------------------
// Forward

double Tape::forward(const ParamStore& params) {
  evaluate(params);
  return scalar_value(output());
}

void Tape::evaluate(const ParamStore& params) {
  require(!nodes_.empty(), ErrorKind::state, "forward on an empty tape");
  evaluated_ = false;
  param_sizes_.clear();
  for (const Block& b : params.blocks()) param_sizes_.push_back(b.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    for (std::uint32_t operand : {n.a, n.b, n.c})
      if (operand != kNone && operand >= i)
        fail(ErrorKind::structural,
             "node " + std::to_string(i) + " (" + to_string(n.op) +
                 ") references operand " + std::to_string(operand) +
                 " that does not precede it");
    eval_node(i, params);
    const double* v = values_.data() + n.offset;
    for (std::size_t k = 0; k < n.size(); ++k)
      if (!std::isfinite(v[k]))
        fail(ErrorKind::numeric, "node " + std::to_string(i) + " (" +
                                     to_string(n.op) +
                                     ") produced a non-finite value");
  }
  adjoints_.assign(values_.size(), 0.0);
  evaluated_ = true;
}

void Tape::eval_node(std::size_t index, const ParamStore& params) {
  Node& n = nodes_[index];
  double* out = values_.data() + n.offset;
  const std::size_t size = n.size();
  auto val = [this](std::uint32_t id) {
    return static_cast<const double*>(values_.data() + nodes_[id].offset);
  };

  switch (n.op) {
    case Op::constant:
      break;
    case Op::param: {
      if (n.block >= params.size())
        fail(ErrorKind::structural, "node " + std::to_string(index) +
                                        " references a missing parameter block");
      const Block& b = params.block(n.block);
      if (b.rows != n.rows || b.cols != n.cols)
        fail(ErrorKind::structural, "parameter block '" + b.name +
                                        "' changed shape since recording");
      std::memcpy(out, b.value.data(), size * sizeof(double));
      break;
    }
    case Op::add: {
      const double* a = val(n.a);
      const double* b = val(n.b);
      for (std::size_t k = 0; k < size; ++k) out[k] = a[k] + b[k];
      break;
    }
    case Op::sub: {
      const double* a = val(n.a);
      const double* b = val(n.b);
      for (std::size_t k = 0; k < size; ++k) out[k] = a[k] - b[k];
      break;
    }
    case Op::mul: {
      const double* a = val(n.a);
      const double* b = val(n.b);
      for (std::size_t k = 0; k < size; ++k) out[k] = a[k] * b[k];
      break;
    }
    case Op::scale: {
      const double s = std::get<double>(n.payload);
      const double* a = val(n.a);
      for (std::size_t k = 0; k < size; ++k) out[k] = s * a[k];
      break;
    }
    case Op::exp: {
      const double* a = val(n.a);
      for (std::size_t k = 0; k < size; ++k) out[k] = std::exp(a[k]);
      break;
    }
    case Op::relu: {
      const double* a = val(n.a);
      for (std::size_t k = 0; k < size; ++k) out[k] = a[k] > 0.0 ? a[k] : 0.0;
      break;
    }
    case Op::sum: {
      const Node& na = nodes_[n.a];
      const double* a = val(n.a);
      double s = 0.0;
      for (std::size_t k = 0; k < na.size(); ++k) s += a[k];
      out[0] = s;
      break;
    }
    case Op::dense: {
      const Node& nx = nodes_[n.a];
      const Node& nw = nodes_[n.b];
      ConstMatMap x(val(n.a), nx.rows, nx.cols);
      ConstMatMap w(val(n.b), nw.rows, nw.cols);
      Eigen::Map<const Eigen::RowVectorXd> bias(val(n.c), nw.cols);
      MatMap y(out, n.rows, n.cols);
      y.noalias() = x * w;
      y.rowwise() += bias;
      if (std::get<Activation>(n.payload) == Activation::relu)
        y = y.cwiseMax(0.0);
      break;
    }
    case Op::pos_encode: {
      const auto& p = std::get<EncodePayload>(n.payload);
      const double* x = val(n.a);
      const int bands = p.bands;
      const int width = 8 * bands;
      for (int r = 0; r < n.rows; ++r) {
        double* row = out + static_cast<std::size_t>(r) * width;
        for (int c = 0; c < 4; ++c) {
          const double u =
              c < 3 ? (x[3 * r + c] - p.lo[c]) * p.gain[c] - 1.0 : p.time_coord;
          double* block = row + 2 * bands * c;
          // Angle-addition recurrence over the linear frequency ladder.
          const double s1 = std::sin(std::numbers::pi * u);
          const double c1 = std::cos(std::numbers::pi * u);
          double sk = s1, ck = c1;
          for (int k = 0; k < bands; ++k) {
            block[2 * k] = sk;
            block[2 * k + 1] = ck;
            const double s_next = sk * c1 + ck * s1;
            const double c_next = ck * c1 - sk * s1;
            sk = s_next;
            ck = c_next;
          }
        }
      }
      break;
    }
    case Op::ray_point: {
      const auto& p = std::get<RayPayload>(n.payload);
      const double* d = val(n.a);
      for (int r = 0; r < n.rows; ++r)
        for (int c = 0; c < 3; ++c)
          out[3 * r + c] = d[r] * p.directions[3 * r + c] + p.origin[c];
      break;
    }
    case Op::gather: {
      const auto& taps = std::get<std::vector<Tap>>(n.payload);
      const double* s = val(n.a);
      for (std::size_t r = 0; r < taps.size(); ++r) {
        const Tap& t = taps[r];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          if (t.weight[k] != 0.0) acc += t.weight[k] * s[t.index[k]];
        out[r] = acc;
      }
      break;
    }
    case Op::project_l1: {
      const auto& p = std::get<ProjectPayload>(n.payload);
      const Node& np = nodes_[n.a];
      const double* x = val(n.a);
      double total = 0.0, count = 0.0;
      for (int r = 0; r < np.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        const Eigen::Vector3d d(x[3 * r] - p.camera.origin[0],
                                x[3 * r + 1] - p.camera.origin[1],
                                x[3 * r + 2] - p.camera.origin[2]);
        const Eigen::Vector3d y = p.camera.A * d;
        if (y[2] <= kMinCameraDepth) continue;
        const double u = y[0] / y[2];
        const double v = y[1] / y[2];
        total += w * (std::abs(u - p.targets[2 * r]) +
                      std::abs(v - p.targets[2 * r + 1]));
        count += 1.0;
      }
      out[0] = total;
      n.count = count;
      break;
    }
    case Op::inv_depth_l1: {
      const auto& p = std::get<ProjectPayload>(n.payload);
      const Node& np = nodes_[n.a];
      const double* x = val(n.a);
      const double* depth = val(n.b);
      const Eigen::RowVector3d zrow = p.camera.A.row(2);
      double total = 0.0, count = 0.0;
      for (int r = 0; r < np.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        const double z = zrow[0] * (x[3 * r] - p.camera.origin[0]) +
                         zrow[1] * (x[3 * r + 1] - p.camera.origin[1]) +
                         zrow[2] * (x[3 * r + 2] - p.camera.origin[2]);
        if (z <= kMinCameraDepth || depth[r] <= kMinCameraDepth) continue;
        total += w * std::abs(1.0 / z - 1.0 / depth[r]);
        count += 1.0;
      }
      out[0] = total;
      n.count = count;
      break;
    }
    case Op::row_l1: {
      const auto& p = std::get<WeightsPayload>(n.payload);
      const Node& na = nodes_[n.a];
      const double* a = val(n.a);
      double total = 0.0, count = 0.0;
      for (int r = 0; r < na.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        double row = 0.0;
        for (int c = 0; c < na.cols; ++c)
          row += std::abs(a[static_cast<std::size_t>(r) * na.cols + c]);
        total += w * row;
        count += 1.0;
      }
      out[0] = total;
      n.count = count;
      break;
    }
    case Op::weighted_sum: {
      const auto& p = std::get<SumPayload>(n.payload);
      double total = 0.0;
      for (std::size_t k = 0; k < p.terms.size(); ++k) {
        const std::uint32_t t = p.terms[k].index;
        if (t >= index)
          fail(ErrorKind::structural, "node " + std::to_string(index) +
                                          " (weighted_sum) references a later node");
        total += p.weights[k] * values_[nodes_[t].offset];
      }
      out[0] = total;
      break;
    }
    case Op::normalize: {
      const auto& p = std::get<SumPayload>(n.payload);
      double count = 0.0;
      for (NodeId s : p.terms) {
        if (s.index >= index)
          fail(ErrorKind::structural, "node " + std::to_string(index) +
                                          " (normalize) references a later node");
        count += nodes_[s.index].count;
      }
      n.count = count;
      out[0] = count > 0.0 ? val(n.a)[0] / count : 0.0;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward

Gradients Tape::backward() {
  require(evaluated_, ErrorKind::state, "backward() called before forward()");
  require(adjoints_.size() == values_.size(), ErrorKind::state,
          "adjoint arena out of sync with the tape");
  std::fill(adjoints_.begin(), adjoints_.end(), 0.0);

  Gradients grads;
  grads.blocks.resize(param_sizes_.size());
  for (std::size_t b = 0; b < param_sizes_.size(); ++b)
    grads.blocks[b].assign(param_sizes_[b], 0.0);
  grads.touched.assign(param_sizes_.size(), false);

  const NodeId out = output();
  adjoints_[nodes_[out.index].offset] = 1.0;
  for (std::size_t i = out.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.op == Op::param) {
      auto& g = grads.blocks[n.block];
      const double* adj = adjoints_.data() + n.offset;
      for (std::size_t k = 0; k < n.size(); ++k) g[k] += adj[k];
      grads.touched[n.block] = true;
      continue;
    }
    backprop_node(i);
  }
  return grads;
}

void Tape::backprop_node(std::size_t index) {
  Node& n = nodes_[index];
  double* adj = adjoints_.data() + n.offset;
  const std::size_t size = n.size();
  auto val = [this](std::uint32_t id) {
    return static_cast<const double*>(values_.data() + nodes_[id].offset);
  };
  auto grad_of = [this](std::uint32_t id) -> double* {
    return nodes_[id].needs_grad ? adjoints_.data() + nodes_[id].offset
                                 : nullptr;
  };

  switch (n.op) {
    case Op::constant:
    case Op::param:
      break;
    case Op::add: {
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k) ga[k] += adj[k];
      if (double* gb = grad_of(n.b))
        for (std::size_t k = 0; k < size; ++k) gb[k] += adj[k];
      break;
    }
    case Op::sub: {
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k) ga[k] += adj[k];
      if (double* gb = grad_of(n.b))
        for (std::size_t k = 0; k < size; ++k) gb[k] -= adj[k];
      break;
    }
    case Op::mul: {
      const double* a = val(n.a);
      const double* b = val(n.b);
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k) ga[k] += adj[k] * b[k];
      if (double* gb = grad_of(n.b))
        for (std::size_t k = 0; k < size; ++k) gb[k] += adj[k] * a[k];
      break;
    }
    case Op::scale: {
      const double s = std::get<double>(n.payload);
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k) ga[k] += s * adj[k];
      break;
    }
    case Op::exp: {
      const double* y = values_.data() + n.offset;
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k) ga[k] += adj[k] * y[k];
      break;
    }
    case Op::relu: {
      const double* a = val(n.a);
      if (double* ga = grad_of(n.a))
        for (std::size_t k = 0; k < size; ++k)
          if (a[k] > 0.0) ga[k] += adj[k];
      break;
    }
    case Op::sum: {
      if (double* ga = grad_of(n.a)) {
        const std::size_t na = nodes_[n.a].size();
        for (std::size_t k = 0; k < na; ++k) ga[k] += adj[0];
      }
      break;
    }
    case Op::dense: {
      const Node& nx = nodes_[n.a];
      const Node& nw = nodes_[n.b];
      MatMap dy(adj, n.rows, n.cols);
      if (std::get<Activation>(n.payload) == Activation::relu) {
        const double* y = values_.data() + n.offset;
        for (std::size_t k = 0; k < size; ++k)
          if (!(y[k] > 0.0)) adj[k] = 0.0;
      }
      if (double* gx = grad_of(n.a)) {
        ConstMatMap w(val(n.b), nw.rows, nw.cols);
        MatMap dx(gx, nx.rows, nx.cols);
        dx.noalias() += dy * w.transpose();
      }
      if (double* gw = grad_of(n.b)) {
        ConstMatMap x(val(n.a), nx.rows, nx.cols);
        MatMap dw(gw, nw.rows, nw.cols);
        dw.noalias() += x.transpose() * dy;
      }
      if (double* gb = grad_of(n.c)) {
        // explicit loop keeps the summation order independent of alignment
        for (int r = 0; r < n.rows; ++r)
          for (int c = 0; c < n.cols; ++c) gb[c] += dy(r, c);
      }
      break;
    }
    case Op::pos_encode: {
      double* gx = grad_of(n.a);
      if (!gx) break;
      const auto& p = std::get<EncodePayload>(n.payload);
      const double* y = values_.data() + n.offset;
      const int bands = p.bands;
      const int width = 8 * bands;
      for (int r = 0; r < n.rows; ++r) {
        const double* yrow = y + static_cast<std::size_t>(r) * width;
        const double* arow = adj + static_cast<std::size_t>(r) * width;
        for (int c = 0; c < 3; ++c) {
          double du = 0.0;
          for (int k = 0; k < bands; ++k) {
            const double freq = (k + 1) * std::numbers::pi;
            const double s = yrow[2 * bands * c + 2 * k];
            const double co = yrow[2 * bands * c + 2 * k + 1];
            du += freq * (arow[2 * bands * c + 2 * k] * co -
                          arow[2 * bands * c + 2 * k + 1] * s);
          }
          gx[3 * r + c] += du * p.gain[c];
        }
      }
      break;
    }
    case Op::ray_point: {
      double* gd = grad_of(n.a);
      if (!gd) break;
      const auto& p = std::get<RayPayload>(n.payload);
      for (int r = 0; r < n.rows; ++r)
        gd[r] += adj[3 * r] * p.directions[3 * r] +
                 adj[3 * r + 1] * p.directions[3 * r + 1] +
                 adj[3 * r + 2] * p.directions[3 * r + 2];
      break;
    }
    case Op::gather: {
      double* gs = grad_of(n.a);
      if (!gs) break;
      const auto& taps = std::get<std::vector<Tap>>(n.payload);
      for (std::size_t r = 0; r < taps.size(); ++r) {
        const Tap& t = taps[r];
        for (int k = 0; k < 4; ++k)
          if (t.weight[k] != 0.0) gs[t.index[k]] += t.weight[k] * adj[r];
      }
      break;
    }
    case Op::project_l1: {
      double* gx = grad_of(n.a);
      if (!gx) break;
      const auto& p = std::get<ProjectPayload>(n.payload);
      const Node& np = nodes_[n.a];
      const double* x = val(n.a);
      const Eigen::Matrix3d At = p.camera.A.transpose();
      for (int r = 0; r < np.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        const Eigen::Vector3d d(x[3 * r] - p.camera.origin[0],
                                x[3 * r + 1] - p.camera.origin[1],
                                x[3 * r + 2] - p.camera.origin[2]);
        const Eigen::Vector3d y = p.camera.A * d;
        if (y[2] <= kMinCameraDepth) continue;
        const double u = y[0] / y[2];
        const double v = y[1] / y[2];
        const double du = w * adj[0] * sign(u - p.targets[2 * r]);
        const double dv = w * adj[0] * sign(v - p.targets[2 * r + 1]);
        const Eigen::Vector3d dy(du / y[2], dv / y[2],
                                 -(du * u + dv * v) / y[2]);
        const Eigen::Vector3d dx = At * dy;
        gx[3 * r] += dx[0];
        gx[3 * r + 1] += dx[1];
        gx[3 * r + 2] += dx[2];
      }
      break;
    }
    case Op::inv_depth_l1: {
      double* gx = grad_of(n.a);
      double* gd = grad_of(n.b);
      if (!gx && !gd) break;
      const auto& p = std::get<ProjectPayload>(n.payload);
      const Node& np = nodes_[n.a];
      const double* x = val(n.a);
      const double* depth = val(n.b);
      const Eigen::RowVector3d zrow = p.camera.A.row(2);
      for (int r = 0; r < np.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        const double z = zrow[0] * (x[3 * r] - p.camera.origin[0]) +
                         zrow[1] * (x[3 * r + 1] - p.camera.origin[1]) +
                         zrow[2] * (x[3 * r + 2] - p.camera.origin[2]);
        if (z <= kMinCameraDepth || depth[r] <= kMinCameraDepth) continue;
        const double s = w * adj[0] * sign(1.0 / z - 1.0 / depth[r]);
        if (gx) {
          const double dz = -s / (z * z);
          gx[3 * r] += dz * zrow[0];
          gx[3 * r + 1] += dz * zrow[1];
          gx[3 * r + 2] += dz * zrow[2];
        }
        if (gd) gd[r] += s / (depth[r] * depth[r]);
      }
      break;
    }
    case Op::row_l1: {
      double* ga = grad_of(n.a);
      if (!ga) break;
      const auto& p = std::get<WeightsPayload>(n.payload);
      const Node& na = nodes_[n.a];
      const double* a = val(n.a);
      for (int r = 0; r < na.rows; ++r) {
        const double w = p.weights[r];
        if (w == 0.0) continue;
        for (int c = 0; c < na.cols; ++c) {
          const std::size_t k = static_cast<std::size_t>(r) * na.cols + c;
          ga[k] += w * adj[0] * sign(a[k]);
        }
      }
      break;
    }
    case Op::weighted_sum: {
      const auto& p = std::get<SumPayload>(n.payload);
      for (std::size_t k = 0; k < p.terms.size(); ++k)
        if (double* gt = grad_of(p.terms[k].index)) gt[0] += p.weights[k] * adj[0];
      break;
    }
    case Op::normalize: {
      if (double* ga = grad_of(n.a))
        if (n.count > 0.0) ga[0] += adj[0] / n.count;
      break;
    }
  }
}

}  // namespace dyndepth::ad
