#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "freqlab/data.hpp"
#include "freqlab/graph.hpp"

namespace freqlab::models {

enum class LayerKind { Dense, LocallyConnected, ConvFull, ConvBounded, PatchEmbed, AttentionBlock };
enum class Activation { None, ReLU, GELU };

const char* layer_kind_name(LayerKind kind);
const char* activation_name(Activation act);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  /// Output width: features for Dense, channels for spatial layers,
  /// embedding dim for PatchEmbed and AttentionBlock.
  std::size_t channels = 0;
  std::size_t kernel = 0;  // LocallyConnected, ConvBounded
  Activation activation = Activation::None;
  Padding padding = Padding::Circular;
  std::size_t patch = 0;  // PatchEmbed
  bool shared = true;     // PatchEmbed: one projection for all patches
  std::size_t heads = 0;  // AttentionBlock
};

/// Declarative layer stack. The last layer must be a Dense layer with one
/// output per class and no activation; it is the only layer with a bias
/// apart from the transformer internals.
struct ModelSpec {
  std::string name;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t classes = 10;
  std::vector<LayerSpec> layers;
  /// Uniform init half-width is init_scale * sqrt(1 / fan_in).
  double init_scale = 1.0;
  /// Constant subtracted from every pixel before the first layer. It leaves
  /// the linear map and all input gradients unchanged.
  double input_center = 0.5;

  void validate() const;
  std::size_t depth() const { return layers.empty() ? 0 : layers.size() - 1; }
};

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

/// The four families of the study.
enum class Family { FC, LC, FWC, BWC };
const char* family_name(Family f);
Family parse_family(const std::string& s);

/// `depth` hidden layers of the family followed by the dense head. FC hidden
/// layers have `channels * height * width` features so all families keep the
/// same hidden activation size.
ModelSpec family_spec(Family family, std::size_t depth, std::size_t kernel, std::size_t channels,
                      Activation activation, std::size_t in_channels, std::size_t height, std::size_t width,
                      std::size_t classes);

/// Two pre-norm transformer blocks (4 heads, embedding 64, MLP width 128) on
/// p x p patches, learned positional embeddings, mean pooling and a dense head.
ModelSpec vit_spec(std::size_t patch, bool shared, std::size_t in_channels, std::size_t height, std::size_t width,
                   std::size_t classes, std::size_t embed = 64, std::size_t heads = 4, std::size_t blocks = 2);

/// A built model: graph, initial weights and the nodes the pipeline needs.
/// Graph inputs: "x" [B, C, H, W], "y" labels [B], "pick" logit indices [B].
struct Model {
  ModelSpec spec;
  Graph graph;
  Params params;
  NodeId input = 0;
  NodeId logits = 0;
  NodeId loss = 0;    // mean cross-entropy against "y"
  NodeId picked = 0;  // sum of the logits selected by "pick"
  /// Node ids of each layer's output (before the head's bias for the last layer).
  std::vector<NodeId> layer_outputs;
  /// Parameter slots owned by each layer.
  std::vector<std::vector<std::size_t>> layer_params;

  std::size_t parameter_count() const;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);
Model build_mini_vit(std::size_t patch, bool shared, std::uint64_t seed, std::size_t in_channels = 1,
                     std::size_t height = 16, std::size_t width = 16, std::size_t classes = 10);

/// Fresh initialization of every parameter slot of `graph`.
Params init_params(const Graph& graph, std::uint64_t seed, double scale);

struct TrainConfig {
  double max_lr = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double decay = 0.3;          // lr multiplier per epoch
  std::size_t reset_period = 20;  // lr returns to max_lr every this many epochs
  std::uint64_t seed = 0;
  /// Stop after the first epoch whose test accuracy reaches this value.
  double stop_accuracy = std::numeric_limits<double>::infinity();

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

struct TrainedModel {
  Model model;
  std::vector<Params> checkpoints;  // index e holds weights after e epochs; [0] is the init
  std::vector<double> train_accuracy;
  std::vector<double> test_accuracy;
  std::vector<double> train_loss;  // mean minibatch loss per epoch; [0] is the init loss
  std::size_t best_epoch = 0;      // highest test accuracy, earliest on ties

  const Params& best() const { return checkpoints.at(best_epoch); }
};

TrainedModel train(Model model, const data::Dataset& train_set, const data::Dataset& test_set, const TrainConfig& cfg);

/// Logits [B, classes] for images [B, C, H, W].
Tensor predict(const Model& model, const Params& params, const Tensor& images);
/// Argmax per row, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& logits);
double accuracy(const Model& model, const Params& params, const data::Dataset& ds);
/// Mean cross-entropy over the dataset.
double mean_loss(const Model& model, const Params& params, const data::Dataset& ds);

/// Checkpoint files: `<stem>.bin` tensor container and `<stem>.json` spec sidecar.
void save_checkpoint(const std::string& stem, const Model& model, const Params& params);
std::pair<Model, Params> load_checkpoint(const std::string& stem);

}  // namespace freqlab::models
