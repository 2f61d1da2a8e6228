#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "freqlab/kernels.hpp"
#include "freqlab/tensor.hpp"

namespace freqlab {

enum class OpKind {
  Input,
  Param,
  MatMul,       // x[..., K] * w[N, K]^T
  TokenMatMul,  // x[B, T, K] * w[T, N, K]^T, untied per token
  AddBias,      // x + b, b matches the trailing dims of x
  Add,
  Shift,        // x + constant, nothing trainable
  Conv2d,       // stride-1 square kernel, circular or zero padding
  Local2d,      // locally connected, same geometry as Conv2d
  ReLU,
  GELU,
  LayerNorm,    // over the last axis with gain and shift
  Softmax,      // over the last axis
  MeanPool,     // [B, T, E] -> [B, E]
  Reshape,      // keeps the batch axis
  Patchify,     // [B, C, H, W] -> [B, T, C*p*p]
  Attention,    // multi-head scaled dot-product on [B, T, E]
  CrossEntropy, // mean softmax cross-entropy, labels as class indices
  PickLogit,    // sum_b logits[b, index[b]]
};

const char* op_name(OpKind kind);

using NodeId = std::size_t;

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<NodeId> inputs;
  std::size_t slot = 0;  // parameter slot for Param nodes
  std::string name;
  bool differentiable = true;  // Input nodes only; labels and indices are not
  std::size_t heads = 0;
  std::size_t patch = 0;
  Padding padding = Padding::Circular;
  Shape shape;  // Reshape target without the batch axis
  double constant = 0.0;  // Shift offset
};

enum class Init { Uniform, Zeros, Ones };

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  Init init = Init::Uniform;
};

using Params = std::vector<Tensor>;
using Bindings = std::map<std::string, Tensor>;

/// Static computation graph. Nodes are appended in topological order, so
/// construction order is also evaluation order. Weights live outside the graph
/// in a `Params` vector indexed by parameter slot.
class Graph {
 public:
  NodeId input(std::string name, bool differentiable = true);
  NodeId param(std::string name, Shape shape, std::size_t fan_in, Init init = Init::Uniform);

  NodeId matmul(NodeId x, NodeId w, std::string name = {});
  NodeId token_matmul(NodeId x, NodeId w, std::string name = {});
  NodeId add_bias(NodeId x, NodeId b, std::string name = {});
  NodeId add(NodeId a, NodeId b, std::string name = {});
  NodeId shift(NodeId x, double constant, std::string name = {});
  NodeId conv2d(NodeId x, NodeId w, Padding padding, std::string name = {});
  NodeId local2d(NodeId x, NodeId w, Padding padding, std::string name = {});
  NodeId relu(NodeId x, std::string name = {});
  NodeId gelu(NodeId x, std::string name = {});
  NodeId layer_norm(NodeId x, NodeId gain, NodeId shift, std::string name = {});
  NodeId softmax(NodeId x, std::string name = {});
  NodeId mean_pool(NodeId x, std::string name = {});
  NodeId reshape(NodeId x, Shape trailing, std::string name = {});
  NodeId patchify(NodeId x, std::size_t patch, std::string name = {});
  NodeId attention(NodeId q, NodeId k, NodeId v, std::size_t heads, std::string name = {});
  NodeId cross_entropy(NodeId logits, NodeId labels, std::string name = {});
  NodeId pick_logit(NodeId logits, NodeId index, std::string name = {});

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<ParamInfo>& params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  /// Node id of the named input; throws if absent.
  NodeId find_input(const std::string& name) const;

  /// Human-readable node label used in error messages.
  std::string describe(NodeId id) const;

 private:
  NodeId push(Node node);

  std::vector<Node> nodes_;
  std::vector<ParamInfo> params_;
};

/// Per-call forward state: node values plus auxiliaries kept for the
/// backward pass (attention weights, layer-norm statistics).
struct Workspace {
  std::vector<Tensor> values;
  std::vector<Tensor> aux;

  const Tensor& operator[](NodeId id) const { return values.at(id); }
};

Workspace evaluate(const Graph& graph, const Params& params, const Bindings& inputs);
/// Evaluates only `target` and the nodes it depends on; other values stay empty.
Workspace evaluate(const Graph& graph, const Params& params, const Bindings& inputs, NodeId target);

struct BackwardOptions {
  bool params = true;
  bool inputs = true;
};

struct Gradients {
  Params params;                         // empty tensors for untouched slots
  std::map<std::string, Tensor> inputs;  // differentiable inputs only
};

Gradients backward(const Graph& graph, const Params& params, const Workspace& ws, NodeId loss,
                   BackwardOptions options = {});

/// p <- p - lr * g for every slot. Fails on a non-finite gradient, naming the parameter.
void sgd_step(const Graph& graph, Params& params, const Gradients& grads, double lr);

/// Largest relative error between backward() and central differences over all
/// parameters and differentiable inputs. Per entry the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * max|analytic of that tensor|, 1e-12).
double grad_check(const Graph& graph, const Params& params, const Bindings& inputs, NodeId loss, double h);

}  // namespace freqlab
