#include "freqlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace freqlab {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::TokenMatMul: return "token-matmul";
    case OpKind::AddBias: return "add-bias";
    case OpKind::Add: return "add";
    case OpKind::Shift: return "shift";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Local2d: return "local2d";
    case OpKind::ReLU: return "relu";
    case OpKind::GELU: return "gelu";
    case OpKind::LayerNorm: return "layer-norm";
    case OpKind::Softmax: return "softmax";
    case OpKind::MeanPool: return "mean-pool";
    case OpKind::Reshape: return "reshape";
    case OpKind::Patchify: return "patchify";
    case OpKind::Attention: return "attention";
    case OpKind::CrossEntropy: return "cross-entropy";
    case OpKind::PickLogit: return "pick-logit";
  }
  return "?";
}

// ---------------------------------------------------------------- builder

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) throw Error("graph: input id " + std::to_string(in) + " does not precede new node");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::input(std::string name, bool differentiable) {
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::Input && n.name == name) throw Error("graph: duplicate input '" + name + "'");
  }
  Node n;
  n.kind = OpKind::Input;
  n.name = std::move(name);
  n.differentiable = differentiable;
  return push(std::move(n));
}

NodeId Graph::param(std::string name, Shape shape, std::size_t fan_in, Init init) {
  Node n;
  n.kind = OpKind::Param;
  n.slot = params_.size();
  n.name = name;
  params_.push_back(ParamInfo{std::move(name), std::move(shape), fan_in, init});
  return push(std::move(n));
}

namespace {
Node make(OpKind kind, std::vector<NodeId> inputs, std::string name) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.name = std::move(name);
  return n;
}
}  // namespace

NodeId Graph::matmul(NodeId x, NodeId w, std::string name) { return push(make(OpKind::MatMul, {x, w}, std::move(name))); }
NodeId Graph::token_matmul(NodeId x, NodeId w, std::string name) {
  return push(make(OpKind::TokenMatMul, {x, w}, std::move(name)));
}
NodeId Graph::add_bias(NodeId x, NodeId b, std::string name) { return push(make(OpKind::AddBias, {x, b}, std::move(name))); }
NodeId Graph::add(NodeId a, NodeId b, std::string name) { return push(make(OpKind::Add, {a, b}, std::move(name))); }
NodeId Graph::shift(NodeId x, double constant, std::string name) {
  Node n = make(OpKind::Shift, {x}, std::move(name));
  n.constant = constant;
  return push(std::move(n));
}
NodeId Graph::conv2d(NodeId x, NodeId w, Padding padding, std::string name) {
  Node n = make(OpKind::Conv2d, {x, w}, std::move(name));
  n.padding = padding;
  return push(std::move(n));
}
NodeId Graph::local2d(NodeId x, NodeId w, Padding padding, std::string name) {
  Node n = make(OpKind::Local2d, {x, w}, std::move(name));
  n.padding = padding;
  return push(std::move(n));
}
NodeId Graph::relu(NodeId x, std::string name) { return push(make(OpKind::ReLU, {x}, std::move(name))); }
NodeId Graph::gelu(NodeId x, std::string name) { return push(make(OpKind::GELU, {x}, std::move(name))); }
NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId shift, std::string name) {
  return push(make(OpKind::LayerNorm, {x, gain, shift}, std::move(name)));
}
NodeId Graph::softmax(NodeId x, std::string name) { return push(make(OpKind::Softmax, {x}, std::move(name))); }
NodeId Graph::mean_pool(NodeId x, std::string name) { return push(make(OpKind::MeanPool, {x}, std::move(name))); }
NodeId Graph::reshape(NodeId x, Shape trailing, std::string name) {
  Node n = make(OpKind::Reshape, {x}, std::move(name));
  n.shape = std::move(trailing);
  return push(std::move(n));
}
NodeId Graph::patchify(NodeId x, std::size_t patch, std::string name) {
  if (patch == 0) throw Error("graph: patch size must be positive");
  Node n = make(OpKind::Patchify, {x}, std::move(name));
  n.patch = patch;
  return push(std::move(n));
}
NodeId Graph::attention(NodeId q, NodeId k, NodeId v, std::size_t heads, std::string name) {
  if (heads == 0) throw Error("graph: attention needs at least one head");
  Node n = make(OpKind::Attention, {q, k, v}, std::move(name));
  n.heads = heads;
  return push(std::move(n));
}
NodeId Graph::cross_entropy(NodeId logits, NodeId labels, std::string name) {
  return push(make(OpKind::CrossEntropy, {logits, labels}, std::move(name)));
}
NodeId Graph::pick_logit(NodeId logits, NodeId index, std::string name) {
  return push(make(OpKind::PickLogit, {logits, index}, std::move(name)));
}

NodeId Graph::find_input(const std::string& name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Input && nodes_[i].name == name) return i;
  }
  throw Error("graph: no input named '" + name + "'");
}

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_.at(id);
  std::string s = "node " + std::to_string(id) + " (" + op_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

// ---------------------------------------------------------------- forward

namespace {

constexpr double kLayerNormEps = 1e-5;

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::size_t class_index(double v, std::size_t classes, const std::string& where) {
  if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(classes)) {
    throw Error(where + ": class index " + std::to_string(v) + " out of range [0, " + std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(v);
}

kernels::SpatialGeom spatial_geom(const Shape& x, std::size_t out_channels, std::size_t kernel, Padding padding) {
  kernels::SpatialGeom g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.height = x[2];
  g.width = x[3];
  g.out_channels = out_channels;
  g.kernel = kernel;
  g.padding = padding;
  return g;
}

struct Evaluator {
  const Graph& graph;
  const Params& params;
  Workspace& ws;

  const Tensor& value(NodeId id) const {
    const Node& n = graph.node(id);
    return n.kind == OpKind::Param ? params[n.slot] : ws.values[id];
  }

  [[noreturn]] void fail(NodeId id, const std::string& msg) const { throw Error(graph.describe(id) + ": " + msg); }

  void require(bool ok, NodeId id, const std::string& msg) const {
    if (!ok) fail(id, msg);
  }

  void run(NodeId id, const Bindings& inputs) {
    const Node& n = graph.node(id);
    auto in = [&](std::size_t i) -> const Tensor& { return value(n.inputs[i]); };
    Tensor& out = ws.values[id];
    switch (n.kind) {
      case OpKind::Input: {
        auto it = inputs.find(n.name);
        require(it != inputs.end(), id, "input not bound");
        out = it->second;
        break;
      }
      case OpKind::Param: {
        const Tensor& p = params[n.slot];
        require(p.shape() == graph.params()[n.slot].shape, id,
                "parameter shape " + shape_str(p.shape()) + " expected " + shape_str(graph.params()[n.slot].shape));
        break;
      }
      case OpKind::MatMul: {
        const Tensor &x = in(0), &w = in(1);
        require(x.rank() >= 2 && w.rank() == 2 && x.shape().back() == w.dim(1), id,
                "shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
        Shape s = x.shape();
        s.back() = w.dim(0);
        out = Tensor(s);
        kernels::matmul(x.data(), w.data(), out.data(), x.size() / w.dim(1), w.dim(1), w.dim(0));
        break;
      }
      case OpKind::TokenMatMul: {
        const Tensor &x = in(0), &w = in(1);
        require(x.rank() == 3 && w.rank() == 3 && w.dim(0) == x.dim(1) && w.dim(2) == x.dim(2), id,
                "shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
        out = Tensor(Shape{x.dim(0), x.dim(1), w.dim(1)});
        kernels::token_matmul(x.data(), w.data(), out.data(), x.dim(0), x.dim(1), x.dim(2), w.dim(1));
        break;
      }
      case OpKind::AddBias: {
        const Tensor &x = in(0), &b = in(1);
        require(b.rank() <= x.rank() && std::equal(b.shape().rbegin(), b.shape().rend(), x.shape().rbegin()), id,
                "bias " + shape_str(b.shape()) + " does not match trailing dims of " + shape_str(x.shape()));
        out = x;
        const std::size_t m = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % m];
        break;
      }
      case OpKind::Add: {
        const Tensor &a = in(0), &b = in(1);
        require(a.shape() == b.shape(), id, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        out = a;
        out += b;
        break;
      }
      case OpKind::Shift: {
        out = in(0);
        for (double& v : out.values()) v += n.constant;
        break;
      }
      case OpKind::Conv2d: {
        const Tensor &x = in(0), &w = in(1);
        require(x.rank() == 4 && w.rank() == 4 && w.dim(1) == x.dim(1) && w.dim(2) == w.dim(3), id,
                "shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
        require(w.dim(2) <= x.dim(2) && w.dim(3) <= x.dim(3), id, "kernel larger than input");
        const auto g = spatial_geom(x.shape(), w.dim(0), w.dim(2), n.padding);
        out = Tensor(Shape{g.batch, g.out_channels, g.height, g.width});
        kernels::conv2d(x.data(), w.data(), out.data(), g);
        break;
      }
      case OpKind::Local2d: {
        const Tensor &x = in(0), &w = in(1);
        require(x.rank() == 4 && w.rank() == 6 && w.dim(1) == x.dim(2) && w.dim(2) == x.dim(3) &&
                    w.dim(3) == x.dim(1) && w.dim(4) == w.dim(5),
                id, "shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
        require(w.dim(4) <= x.dim(2) && w.dim(4) <= x.dim(3), id, "kernel larger than input");
        const auto g = spatial_geom(x.shape(), w.dim(0), w.dim(4), n.padding);
        out = Tensor(Shape{g.batch, g.out_channels, g.height, g.width});
        kernels::local2d(x.data(), w.data(), out.data(), g);
        break;
      }
      case OpKind::ReLU: {
        out = in(0);
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case OpKind::GELU: {
        out = in(0);
        for (double& v : out.values()) v = gelu_value(v);
        break;
      }
      case OpKind::LayerNorm: {
        const Tensor &x = in(0), &gain = in(1), &shift = in(2);
        require(x.rank() >= 1 && gain.rank() == 1 && shift.shape() == gain.shape() && gain.dim(0) == x.shape().back(), id,
                "shape mismatch x" + shape_str(x.shape()) + " gain" + shape_str(gain.shape()));
        const std::size_t E = gain.dim(0), rows = x.size() / E;
        out = Tensor(x.shape());
        Tensor stats(Shape{rows, 2});
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = x.data().data() + r * E;
          double mu = 0.0;
          for (std::size_t e = 0; e < E; ++e) mu += xr[e];
          mu /= static_cast<double>(E);
          double var = 0.0;
          for (std::size_t e = 0; e < E; ++e) var += (xr[e] - mu) * (xr[e] - mu);
          var /= static_cast<double>(E);
          const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
          stats[2 * r] = mu;
          stats[2 * r + 1] = rstd;
          for (std::size_t e = 0; e < E; ++e) out[r * E + e] = gain[e] * (xr[e] - mu) * rstd + shift[e];
        }
        ws.aux[id] = std::move(stats);
        break;
      }
      case OpKind::Softmax: {
        const Tensor& x = in(0);
        require(x.rank() >= 1, id, "softmax needs rank >= 1");
        const std::size_t E = x.shape().back(), rows = x.size() / E;
        out = Tensor(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          double mx = -INFINITY;
          for (std::size_t e = 0; e < E; ++e) mx = std::max(mx, x[r * E + e]);
          double z = 0.0;
          for (std::size_t e = 0; e < E; ++e) z += (out[r * E + e] = std::exp(x[r * E + e] - mx));
          for (std::size_t e = 0; e < E; ++e) out[r * E + e] /= z;
        }
        break;
      }
      case OpKind::MeanPool: {
        const Tensor& x = in(0);
        require(x.rank() == 3, id, "mean-pool expects [B, T, E], got " + shape_str(x.shape()));
        const std::size_t B = x.dim(0), T = x.dim(1), E = x.dim(2);
        out = Tensor(Shape{B, E});
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t e = 0; e < E; ++e) out[b * E + e] += x[(b * T + t) * E + e];
        out *= 1.0 / static_cast<double>(T);
        break;
      }
      case OpKind::Reshape: {
        const Tensor& x = in(0);
        require(x.rank() >= 1, id, "reshape needs a batch axis");
        Shape s{x.dim(0)};
        s.insert(s.end(), n.shape.begin(), n.shape.end());
        require(numel(s) == x.size(), id, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(s));
        out = x.reshaped(std::move(s));
        break;
      }
      case OpKind::Patchify: {
        const Tensor& x = in(0);
        const std::size_t p = n.patch;
        require(x.rank() == 4, id, "patchify expects [B, C, H, W]");
        const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        require(H % p == 0 && W % p == 0, id, "patch " + std::to_string(p) + " does not divide " + shape_str(x.shape()));
        const std::size_t ph = H / p, pw = W / p, F = C * p * p;
        out = Tensor(Shape{B, ph * pw, F});
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t ti = 0; ti < ph; ++ti)
            for (std::size_t tj = 0; tj < pw; ++tj)
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t a = 0; a < p; ++a)
                  for (std::size_t bb = 0; bb < p; ++bb)
                    out[((b * ph * pw) + ti * pw + tj) * F + (c * p + a) * p + bb] =
                        x[((b * C + c) * H + ti * p + a) * W + tj * p + bb];
        break;
      }
      case OpKind::Attention: {
        const Tensor &q = in(0), &k = in(1), &v = in(2);
        require(q.rank() == 3 && k.shape() == q.shape() && v.shape() == q.shape(), id, "q, k, v must share a [B, T, E] shape");
        require(q.dim(2) % n.heads == 0, id, "embedding not divisible by head count");
        const std::size_t B = q.dim(0), T = q.dim(1), E = q.dim(2);
        out = Tensor(q.shape());
        Tensor probs(Shape{B, n.heads, T, T});
        kernels::attention(q.data(), k.data(), v.data(), out.data(), probs.data(), B, T, E, n.heads);
        ws.aux[id] = std::move(probs);
        break;
      }
      case OpKind::CrossEntropy: {
        const Tensor &z = in(0), &y = in(1);
        require(z.rank() == 2 && y.size() == z.dim(0), id, "logits " + shape_str(z.shape()) + " labels " + shape_str(y.shape()));
        const std::size_t B = z.dim(0), C = z.dim(1);
        Tensor probs(z.shape());
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t label = class_index(y[b], C, graph.describe(id));
          double mx = -INFINITY;
          for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, z[b * C + c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < C; ++c) sum += (probs[b * C + c] = std::exp(z[b * C + c] - mx));
          for (std::size_t c = 0; c < C; ++c) probs[b * C + c] /= sum;
          loss += std::log(sum) + mx - z[b * C + label];
        }
        out = Tensor::scalar(loss / static_cast<double>(B));
        ws.aux[id] = std::move(probs);
        break;
      }
      case OpKind::PickLogit: {
        const Tensor &z = in(0), &idx = in(1);
        require(z.rank() == 2 && idx.size() == z.dim(0), id, "logits " + shape_str(z.shape()) + " index " + shape_str(idx.shape()));
        double s = 0.0;
        for (std::size_t b = 0; b < z.dim(0); ++b) s += z[b * z.dim(1) + class_index(idx[b], z.dim(1), graph.describe(id))];
        out = Tensor::scalar(s);
        break;
      }
    }
    if (n.kind != OpKind::Param && n.kind != OpKind::Input && !out.all_finite()) fail(id, "non-finite output");
  }
};

}  // namespace

Workspace evaluate(const Graph& graph, const Params& params, const Bindings& inputs) {
  if (params.size() != graph.params().size()) {
    throw Error("evaluate: " + std::to_string(params.size()) + " parameter tensors given, graph has " +
                std::to_string(graph.params().size()));
  }
  Workspace ws;
  ws.values.resize(graph.size());
  ws.aux.resize(graph.size());
  Evaluator ev{graph, params, ws};
  for (NodeId id = 0; id < graph.size(); ++id) ev.run(id, inputs);
  return ws;
}

Workspace evaluate(const Graph& graph, const Params& params, const Bindings& inputs, NodeId target) {
  if (target >= graph.size()) throw Error("evaluate: target node out of range");
  if (params.size() != graph.params().size()) {
    throw Error("evaluate: " + std::to_string(params.size()) + " parameter tensors given, graph has " +
                std::to_string(graph.params().size()));
  }
  std::vector<char> wanted(target + 1, 0);
  wanted[target] = 1;
  for (NodeId id = target + 1; id-- > 0;) {
    if (!wanted[id]) continue;
    for (NodeId in : graph.node(id).inputs) wanted[in] = 1;
  }
  Workspace ws;
  ws.values.resize(graph.size());
  ws.aux.resize(graph.size());
  Evaluator ev{graph, params, ws};
  for (NodeId id = 0; id <= target; ++id)
    if (wanted[id]) ev.run(id, inputs);
  return ws;
}

// ---------------------------------------------------------------- backward

namespace {

void accumulate(Tensor& slot, Tensor&& g) {
  if (slot.empty() && slot.shape().empty()) {
    slot = std::move(g);
  } else {
    slot += g;
  }
}

}  // namespace

Gradients backward(const Graph& graph, const Params& params, const Workspace& ws, NodeId loss, BackwardOptions options) {
  if (loss >= graph.size()) throw Error("backward: loss node out of range");
  if (ws.values.at(loss).size() != 1) {
    throw Error("backward: loss " + graph.describe(loss) + " is not scalar, shape " + shape_str(ws.values[loss].shape()));
  }
  const auto& nodes = graph.nodes();
  std::vector<char> need(nodes.size(), 0);
  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    if (n.kind == OpKind::Param) {
      need[id] = options.params;
    } else if (n.kind == OpKind::Input) {
      need[id] = options.inputs && n.differentiable;
    } else {
      need[id] = std::any_of(n.inputs.begin(), n.inputs.end(), [&](NodeId i) { return need[i] != 0; });
    }
  }

  auto value = [&](NodeId i) -> const Tensor& {
    return nodes[i].kind == OpKind::Param ? params[nodes[i].slot] : ws.values[i];
  };
  std::vector<Tensor> grad(nodes.size());
  grad[loss] = Tensor(ws.values[loss].shape(), 1.0);

  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& n = nodes[id];
    if (!need[id] || grad[id].size() == 0) continue;
    if (n.kind == OpKind::Input || n.kind == OpKind::Param) continue;
    const Tensor& dy = grad[id];
    auto in = [&](std::size_t i) -> const Tensor& { return value(n.inputs[i]); };
    auto wants = [&](std::size_t i) { return need[n.inputs[i]] != 0; };
    auto give = [&](std::size_t i, Tensor&& g) { accumulate(grad[n.inputs[i]], std::move(g)); };

    switch (n.kind) {
      case OpKind::Input:
      case OpKind::Param:
        break;
      case OpKind::MatMul: {
        const Tensor &x = in(0), &w = in(1);
        const std::size_t K = w.dim(1), N = w.dim(0), M = x.size() / K;
        if (wants(0)) {
          Tensor dx(x.shape());
          kernels::matmul_grad_input(dy.data(), w.data(), dx.data(), M, K, N);
          give(0, std::move(dx));
        }
        if (wants(1)) {
          Tensor dw(w.shape());
          kernels::matmul_grad_weight(dy.data(), x.data(), dw.data(), M, K, N);
          give(1, std::move(dw));
        }
        break;
      }
      case OpKind::TokenMatMul: {
        const Tensor &x = in(0), &w = in(1);
        if (wants(0)) {
          Tensor dx(x.shape());
          kernels::token_matmul_grad_input(dy.data(), w.data(), dx.data(), x.dim(0), x.dim(1), x.dim(2), w.dim(1));
          give(0, std::move(dx));
        }
        if (wants(1)) {
          Tensor dw(w.shape());
          kernels::token_matmul_grad_weight(dy.data(), x.data(), dw.data(), x.dim(0), x.dim(1), x.dim(2), w.dim(1));
          give(1, std::move(dw));
        }
        break;
      }
      case OpKind::AddBias: {
        if (wants(0)) give(0, Tensor(dy));
        if (wants(1)) {
          Tensor db(in(1).shape());
          const std::size_t m = db.size();
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % m] += dy[i];
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::Add: {
        if (wants(0)) give(0, Tensor(dy));
        if (wants(1)) give(1, Tensor(dy));
        break;
      }
      case OpKind::Shift: {
        if (wants(0)) give(0, Tensor(dy));
        break;
      }
      case OpKind::Conv2d: {
        const Tensor &x = in(0), &w = in(1);
        const auto g = spatial_geom(x.shape(), w.dim(0), w.dim(2), n.padding);
        if (wants(0)) {
          Tensor dx(x.shape());
          kernels::conv2d_grad_input(dy.data(), w.data(), dx.data(), g);
          give(0, std::move(dx));
        }
        if (wants(1)) {
          Tensor dw(w.shape());
          kernels::conv2d_grad_weight(dy.data(), x.data(), dw.data(), g);
          give(1, std::move(dw));
        }
        break;
      }
      case OpKind::Local2d: {
        const Tensor &x = in(0), &w = in(1);
        const auto g = spatial_geom(x.shape(), w.dim(0), w.dim(4), n.padding);
        if (wants(0)) {
          Tensor dx(x.shape());
          kernels::local2d_grad_input(dy.data(), w.data(), dx.data(), g);
          give(0, std::move(dx));
        }
        if (wants(1)) {
          Tensor dw(w.shape());
          kernels::local2d_grad_weight(dy.data(), x.data(), dw.data(), g);
          give(1, std::move(dw));
        }
        break;
      }
      case OpKind::ReLU: {
        const Tensor& x = in(0);
        Tensor dx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        give(0, std::move(dx));
        break;
      }
      case OpKind::GELU: {
        const Tensor& x = in(0);
        Tensor dx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_slope(x[i]);
        give(0, std::move(dx));
        break;
      }
      case OpKind::LayerNorm: {
        const Tensor &x = in(0), &gain = in(1);
        const Tensor& stats = ws.aux[id];
        const std::size_t E = gain.dim(0), rows = x.size() / E;
        Tensor dx(x.shape()), dgain(gain.shape()), dshift(gain.shape());
        std::vector<double> xhat(E), dxhat(E);
        for (std::size_t r = 0; r < rows; ++r) {
          const double mu = stats[2 * r], rstd = stats[2 * r + 1];
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t e = 0; e < E; ++e) {
            xhat[e] = (x[r * E + e] - mu) * rstd;
            const double g = dy[r * E + e];
            dgain[e] += g * xhat[e];
            dshift[e] += g;
            dxhat[e] = g * gain[e];
            mean_d += dxhat[e];
            mean_dx += dxhat[e] * xhat[e];
          }
          mean_d /= static_cast<double>(E);
          mean_dx /= static_cast<double>(E);
          for (std::size_t e = 0; e < E; ++e) dx[r * E + e] = rstd * (dxhat[e] - mean_d - xhat[e] * mean_dx);
        }
        if (wants(0)) give(0, std::move(dx));
        if (wants(1)) give(1, std::move(dgain));
        if (wants(2)) give(2, std::move(dshift));
        break;
      }
      case OpKind::Softmax: {
        const Tensor& y = ws.values[id];
        const std::size_t E = y.shape().back(), rows = y.size() / E;
        Tensor dx(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (std::size_t e = 0; e < E; ++e) s += dy[r * E + e] * y[r * E + e];
          for (std::size_t e = 0; e < E; ++e) dx[r * E + e] = y[r * E + e] * (dy[r * E + e] - s);
        }
        give(0, std::move(dx));
        break;
      }
      case OpKind::MeanPool: {
        const Tensor& x = in(0);
        const std::size_t B = x.dim(0), T = x.dim(1), E = x.dim(2);
        Tensor dx(x.shape());
        const double inv = 1.0 / static_cast<double>(T);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t e = 0; e < E; ++e) dx[(b * T + t) * E + e] = dy[b * E + e] * inv;
        give(0, std::move(dx));
        break;
      }
      case OpKind::Reshape: {
        give(0, dy.reshaped(in(0).shape()));
        break;
      }
      case OpKind::Patchify: {
        const Tensor& x = in(0);
        const std::size_t p = n.patch;
        const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::size_t ph = H / p, pw = W / p, F = C * p * p;
        Tensor dx(x.shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t ti = 0; ti < ph; ++ti)
            for (std::size_t tj = 0; tj < pw; ++tj)
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t a = 0; a < p; ++a)
                  for (std::size_t bb = 0; bb < p; ++bb)
                    dx[((b * C + c) * H + ti * p + a) * W + tj * p + bb] =
                        dy[((b * ph * pw) + ti * pw + tj) * F + (c * p + a) * p + bb];
        give(0, std::move(dx));
        break;
      }
      case OpKind::Attention: {
        const Tensor &q = in(0), &k = in(1), &v = in(2);
        Tensor dq(q.shape()), dk(k.shape()), dv(v.shape());
        kernels::attention_grad(dy.data(), q.data(), k.data(), v.data(), ws.aux[id].data(), dq.data(), dk.data(),
                                dv.data(), q.dim(0), q.dim(1), q.dim(2), n.heads);
        if (wants(0)) give(0, std::move(dq));
        if (wants(1)) give(1, std::move(dk));
        if (wants(2)) give(2, std::move(dv));
        break;
      }
      case OpKind::CrossEntropy: {
        const Tensor &z = in(0), &y = in(1);
        const Tensor& probs = ws.aux[id];
        const std::size_t B = z.dim(0), C = z.dim(1);
        Tensor dz = probs;
        for (std::size_t b = 0; b < B; ++b) dz[b * C + static_cast<std::size_t>(y[b])] -= 1.0;
        dz *= dy.item() / static_cast<double>(B);
        give(0, std::move(dz));
        break;
      }
      case OpKind::PickLogit: {
        const Tensor &z = in(0), &idx = in(1);
        Tensor dz(z.shape());
        for (std::size_t b = 0; b < z.dim(0); ++b) dz[b * z.dim(1) + static_cast<std::size_t>(idx[b])] = dy.item();
        give(0, std::move(dz));
        break;
      }
    }
  }

  Gradients out;
  if (options.params) {
    out.params.resize(graph.params().size());
    for (std::size_t s = 0; s < graph.params().size(); ++s) out.params[s] = Tensor(graph.params()[s].shape);
    for (NodeId id = 0; id < nodes.size(); ++id) {
      if (nodes[id].kind == OpKind::Param && grad[id].size() > 0) out.params[nodes[id].slot] += grad[id];
    }
  }
  if (options.inputs) {
    for (NodeId id = 0; id < nodes.size(); ++id) {
      const Node& n = nodes[id];
      if (n.kind != OpKind::Input || !n.differentiable) continue;
      if (grad[id].size() == 0 && ws.values[id].size() == 0) continue;  // not evaluated
      out.inputs[n.name] = grad[id].size() > 0 ? std::move(grad[id]) : Tensor(ws.values[id].shape());
    }
  }
  return out;
}

void sgd_step(const Graph& graph, Params& params, const Gradients& grads, double lr) {
  if (params.size() != grads.params.size()) throw Error("sgd_step: gradient count does not match parameters");
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].shape() != grads.params[s].shape()) {
      throw Error("sgd_step: shape mismatch for parameter '" + graph.params()[s].name + "'");
    }
    if (!grads.params[s].all_finite()) {
      throw Error("sgd_step: non-finite gradient for parameter '" + graph.params()[s].name + "'");
    }
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params[s].data();
    auto g = grads.params[s].data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

namespace {

double tensor_rel_error(const Tensor& analytic, const Tensor& numeric) {
  double scale = 0.0;
  for (double v : analytic.values()) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace

double grad_check(const Graph& graph, const Params& params, const Bindings& inputs, NodeId loss, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw Error("grad_check: step must lie in (0, 1e-3]");
  const Workspace ws = evaluate(graph, params, inputs);
  const Gradients g = backward(graph, params, ws, loss);
  auto loss_at = [&](const Params& p, const Bindings& b) { return evaluate(graph, p, b).values[loss].item(); };

  double worst = 0.0;
  Params p = params;
  for (std::size_t s = 0; s < p.size(); ++s) {
    Tensor numeric(p[s].shape());
    for (std::size_t i = 0; i < p[s].size(); ++i) {
      const double orig = p[s][i];
      p[s][i] = orig + h;
      const double up = loss_at(p, inputs);
      p[s][i] = orig - h;
      const double down = loss_at(p, inputs);
      p[s][i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, tensor_rel_error(g.params[s], numeric));
  }
  Bindings b = inputs;
  for (const auto& [name, analytic] : g.inputs) {
    Tensor& x = b.at(name);
    Tensor numeric(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double up = loss_at(params, b);
      x[i] = orig - h;
      const double down = loss_at(params, b);
      x[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, tensor_rel_error(analytic, numeric));
  }
  return worst;
}

}  // namespace freqlab
