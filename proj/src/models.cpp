#include "freqlab/models.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "freqlab/checkpoint.hpp"
#include "freqlab/rng.hpp"

namespace freqlab::models {

using nlohmann::ordered_json;

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::LocallyConnected: return "locally-connected";
    case LayerKind::ConvFull: return "conv-full-width";
    case LayerKind::ConvBounded: return "conv-bounded";
    case LayerKind::PatchEmbed: return "patch-embed";
    case LayerKind::AttentionBlock: return "attention-block";
  }
  return "?";
}

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::GELU: return "gelu";
  }
  return "?";
}

namespace {

LayerKind parse_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::LocallyConnected, LayerKind::ConvFull, LayerKind::ConvBounded,
                      LayerKind::PatchEmbed, LayerKind::AttentionBlock}) {
    if (s == layer_kind_name(k)) return k;
  }
  throw Error("model spec: unknown layer kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  for (Activation a : {Activation::None, Activation::ReLU, Activation::GELU}) {
    if (s == activation_name(a)) return a;
  }
  throw Error("model spec: unknown activation '" + s + "'");
}

enum class Stage { Spatial, Flat, Tokens };

}  // namespace

// ---------------------------------------------------------------- specs

void ModelSpec::validate() const {
  auto fail = [&](std::size_t i, const std::string& msg) {
    throw Error("model spec '" + name + "' layer " + std::to_string(i) + ": " + msg);
  };
  if (channels == 0 || height == 0 || width == 0 || classes == 0) throw Error("model spec '" + name + "': empty extents");
  if (layers.empty()) throw Error("model spec '" + name + "': no layers");
  if (!(init_scale > 0.0)) throw Error("model spec '" + name + "': init_scale must be positive");
  if (!std::isfinite(input_center)) throw Error("model spec '" + name + "': input_center must be finite");
  Stage stage = Stage::Spatial;
  std::size_t tokens_dim = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.channels == 0) fail(i, "zero output width");
    switch (l.kind) {
      case LayerKind::Dense:
        stage = Stage::Flat;
        break;
      case LayerKind::ConvFull:
        if (height != width) fail(i, "full-width convolution needs a square input");
        if (l.kernel != 0 && l.kernel != width) fail(i, "full-width kernel must equal the input width");
        [[fallthrough]];
      case LayerKind::ConvBounded:
      case LayerKind::LocallyConnected:
        if (stage != Stage::Spatial) fail(i, "spatial layer after a flattening layer");
        if (l.kind != LayerKind::ConvFull && l.kernel == 0) fail(i, "kernel size must be positive");
        if (l.kernel > std::min(height, width)) {
          fail(i, "kernel " + std::to_string(l.kernel) + " larger than input " + std::to_string(height) + "x" +
                      std::to_string(width));
        }
        break;
      case LayerKind::PatchEmbed:
        if (stage != Stage::Spatial) fail(i, "patch embedding must see the image");
        if (l.patch == 0 || height % l.patch || width % l.patch) {
          fail(i, "patch " + std::to_string(l.patch) + " does not divide " + std::to_string(height) + "x" +
                      std::to_string(width));
        }
        stage = Stage::Tokens;
        tokens_dim = l.channels;
        break;
      case LayerKind::AttentionBlock:
        if (stage != Stage::Tokens) fail(i, "attention block needs tokens");
        if (l.channels != tokens_dim) fail(i, "attention width must match the embedding");
        if (l.heads == 0 || l.channels % l.heads) fail(i, "heads must divide the embedding");
        break;
    }
    if (l.kind == LayerKind::PatchEmbed || l.kind == LayerKind::AttentionBlock) {
      if (l.activation != Activation::None) fail(i, "activation not supported on this layer");
    }
  }
  const LayerSpec& head = layers.back();
  if (head.kind != LayerKind::Dense || head.channels != classes || head.activation != Activation::None) {
    throw Error("model spec '" + name + "': last layer must be a dense layer with " + std::to_string(classes) +
                " outputs and no activation");
  }
}

std::string spec_to_json(const ModelSpec& spec) {
  ordered_json j;
  j["name"] = spec.name;
  j["input"] = {spec.channels, spec.height, spec.width};
  j["classes"] = spec.classes;
  j["init_scale"] = spec.init_scale;
  j["input_center"] = spec.input_center;
  j["layers"] = ordered_json::array();
  for (const LayerSpec& l : spec.layers) {
    ordered_json lj;
    lj["kind"] = layer_kind_name(l.kind);
    lj["channels"] = l.channels;
    if (l.kind == LayerKind::ConvBounded || l.kind == LayerKind::LocallyConnected || l.kind == LayerKind::ConvFull) {
      lj["kernel"] = l.kind == LayerKind::ConvFull ? spec.width : l.kernel;
      lj["padding"] = l.padding == Padding::Circular ? "circular" : "zero";
    }
    if (l.kind == LayerKind::PatchEmbed) {
      lj["patch"] = l.patch;
      lj["shared"] = l.shared;
    }
    if (l.kind == LayerKind::AttentionBlock) lj["heads"] = l.heads;
    lj["activation"] = activation_name(l.activation);
    j["layers"].push_back(lj);
  }
  return j.dump(2) + "\n";
}

ModelSpec spec_from_json(const std::string& text) {
  ModelSpec s;
  try {
    const auto j = ordered_json::parse(text);
    s.name = j.value("name", "");
    const auto in = j.at("input");
    s.channels = in.at(0);
    s.height = in.at(1);
    s.width = in.at(2);
    s.classes = j.at("classes");
    s.init_scale = j.value("init_scale", 1.0);
    s.input_center = j.value("input_center", 0.5);
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_kind(lj.at("kind"));
      l.channels = lj.at("channels");
      l.kernel = lj.value("kernel", std::size_t{0});
      l.padding = lj.value("padding", std::string("circular")) == "zero" ? Padding::Zero : Padding::Circular;
      l.patch = lj.value("patch", std::size_t{0});
      l.shared = lj.value("shared", true);
      l.heads = lj.value("heads", std::size_t{0});
      l.activation = parse_activation(lj.value("activation", std::string("none")));
      s.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model spec json: ") + e.what());
  }
  s.validate();
  return s;
}

const char* family_name(Family f) {
  switch (f) {
    case Family::FC: return "FC";
    case Family::LC: return "LC";
    case Family::FWC: return "FWC";
    case Family::BWC: return "BWC";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  for (Family f : {Family::FC, Family::LC, Family::FWC, Family::BWC}) {
    std::string n = family_name(f);
    std::string lower = n;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == n || s == lower) return f;
  }
  throw Error("unknown model family '" + s + "' (expected fc, lc, fwc or bwc)");
}

ModelSpec family_spec(Family family, std::size_t depth, std::size_t kernel, std::size_t channels, Activation activation,
                      std::size_t in_channels, std::size_t height, std::size_t width, std::size_t classes) {
  ModelSpec s;
  s.name = family_name(family);
  s.channels = in_channels;
  s.height = height;
  s.width = width;
  s.classes = classes;
  for (std::size_t i = 0; i < depth; ++i) {
    LayerSpec l;
    l.activation = activation;
    l.channels = channels;
    switch (family) {
      case Family::FC:
        l.kind = LayerKind::Dense;
        l.channels = channels * height * width;
        break;
      case Family::LC:
        l.kind = LayerKind::LocallyConnected;
        l.kernel = kernel;
        break;
      case Family::FWC:
        l.kind = LayerKind::ConvFull;
        l.kernel = width;
        break;
      case Family::BWC:
        l.kind = LayerKind::ConvBounded;
        l.kernel = kernel;
        break;
    }
    s.layers.push_back(l);
  }
  LayerSpec head;
  head.kind = LayerKind::Dense;
  head.channels = classes;
  s.layers.push_back(head);
  s.validate();
  return s;
}

ModelSpec vit_spec(std::size_t patch, bool shared, std::size_t in_channels, std::size_t height, std::size_t width,
                   std::size_t classes, std::size_t embed, std::size_t heads, std::size_t blocks) {
  ModelSpec s;
  s.name = (shared ? "ViT-" : "ViTLoc-") + std::to_string(patch);
  s.channels = in_channels;
  s.height = height;
  s.width = width;
  s.classes = classes;
  LayerSpec pe;
  pe.kind = LayerKind::PatchEmbed;
  pe.channels = embed;
  pe.patch = patch;
  pe.shared = shared;
  s.layers.push_back(pe);
  for (std::size_t b = 0; b < blocks; ++b) {
    LayerSpec blk;
    blk.kind = LayerKind::AttentionBlock;
    blk.channels = embed;
    blk.heads = heads;
    s.layers.push_back(blk);
  }
  LayerSpec head;
  head.kind = LayerKind::Dense;
  head.channels = classes;
  s.layers.push_back(head);
  s.validate();
  return s;
}

// ---------------------------------------------------------------- building

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params) n += p.size();
  return n;
}

Params init_params(const Graph& graph, std::uint64_t seed, double scale) {
  Params out;
  for (std::size_t s = 0; s < graph.params().size(); ++s) {
    const ParamInfo& info = graph.params()[s];
    Tensor t(info.shape);
    switch (info.init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        t.fill(1.0);
        break;
      case Init::Uniform: {
        SplitMix64 rng(derive_seed(seed, s));
        const double bound = scale * std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(info.fan_in, 1)));
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
        break;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  Graph& g = m.graph;
  m.input = g.input("x");
  NodeId h = spec.input_center != 0.0 ? g.shift(m.input, -spec.input_center, "center") : m.input;
  Stage stage = Stage::Spatial;
  std::size_t C = spec.channels, H = spec.height, W = spec.width;
  std::size_t features = 0, tokens = 0, embed = 0;

  auto activate = [&](NodeId x, Activation a, const std::string& prefix) {
    switch (a) {
      case Activation::None: return x;
      case Activation::ReLU: return g.relu(x, prefix + ".relu");
      case Activation::GELU: return g.gelu(x, prefix + ".gelu");
    }
    return x;
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string prefix = "l" + std::to_string(i);
    const std::size_t first_slot = g.params().size();
    const bool head = i + 1 == spec.layers.size();
    switch (l.kind) {
      case LayerKind::Dense: {
        if (stage == Stage::Spatial) {
          features = C * H * W;
          h = g.reshape(h, {features}, prefix + ".flatten");
        } else if (stage == Stage::Tokens) {
          NodeId gain = g.param(prefix + ".ln.gain", {embed}, 1, Init::Ones);
          NodeId shift = g.param(prefix + ".ln.shift", {embed}, 1, Init::Zeros);
          h = g.mean_pool(g.layer_norm(h, gain, shift, prefix + ".ln"), prefix + ".pool");
          features = embed;
        }
        NodeId w = g.param(prefix + ".w", {l.channels, features}, features);
        h = g.matmul(h, w, prefix);
        if (head) {
          NodeId b = g.param(prefix + ".b", {l.channels}, 1, Init::Zeros);
          h = g.add_bias(h, b, prefix + ".bias");
        }
        features = l.channels;
        stage = Stage::Flat;
        break;
      }
      case LayerKind::ConvFull:
      case LayerKind::ConvBounded: {
        const std::size_t k = l.kind == LayerKind::ConvFull ? W : l.kernel;
        const Padding pad = l.kind == LayerKind::ConvFull ? Padding::Circular : l.padding;
        NodeId w = g.param(prefix + ".w", {l.channels, C, k, k}, C * k * k);
        h = g.conv2d(h, w, pad, prefix);
        C = l.channels;
        break;
      }
      case LayerKind::LocallyConnected: {
        NodeId w = g.param(prefix + ".w", {l.channels, H, W, C, l.kernel, l.kernel}, C * l.kernel * l.kernel);
        h = g.local2d(h, w, l.padding, prefix);
        C = l.channels;
        break;
      }
      case LayerKind::PatchEmbed: {
        const std::size_t p = l.patch, F = C * p * p;
        tokens = (H / p) * (W / p);
        embed = l.channels;
        NodeId patches = g.patchify(h, p, prefix + ".patchify");
        NodeId w = l.shared ? g.param(prefix + ".w", {embed, F}, F) : g.param(prefix + ".w", {tokens, embed, F}, F);
        NodeId b = g.param(prefix + ".b", {embed}, 1, Init::Zeros);
        NodeId pos = g.param(prefix + ".pos", {tokens, embed}, embed);
        h = l.shared ? g.matmul(patches, w, prefix) : g.token_matmul(patches, w, prefix);
        h = g.add_bias(g.add_bias(h, b, prefix + ".bias"), pos, prefix + ".pos");
        stage = Stage::Tokens;
        break;
      }
      case LayerKind::AttentionBlock: {
        const std::size_t E = embed, hidden = 2 * E;
        NodeId g1 = g.param(prefix + ".ln1.gain", {E}, 1, Init::Ones);
        NodeId s1 = g.param(prefix + ".ln1.shift", {E}, 1, Init::Zeros);
        NodeId wq = g.param(prefix + ".wq", {E, E}, E);
        NodeId wk = g.param(prefix + ".wk", {E, E}, E);
        NodeId wv = g.param(prefix + ".wv", {E, E}, E);
        NodeId wo = g.param(prefix + ".wo", {E, E}, E);
        NodeId bo = g.param(prefix + ".bo", {E}, 1, Init::Zeros);
        NodeId g2 = g.param(prefix + ".ln2.gain", {E}, 1, Init::Ones);
        NodeId s2 = g.param(prefix + ".ln2.shift", {E}, 1, Init::Zeros);
        NodeId w1 = g.param(prefix + ".fc1.w", {hidden, E}, E);
        NodeId b1 = g.param(prefix + ".fc1.b", {hidden}, 1, Init::Zeros);
        NodeId w2 = g.param(prefix + ".fc2.w", {E, hidden}, hidden);
        NodeId b2 = g.param(prefix + ".fc2.b", {E}, 1, Init::Zeros);

        NodeId n1 = g.layer_norm(h, g1, s1, prefix + ".ln1");
        NodeId att = g.attention(g.matmul(n1, wq, prefix + ".q"), g.matmul(n1, wk, prefix + ".k"),
                                 g.matmul(n1, wv, prefix + ".v"), l.heads, prefix + ".attn");
        h = g.add(h, g.add_bias(g.matmul(att, wo, prefix + ".o"), bo), prefix + ".res1");
        NodeId n2 = g.layer_norm(h, g2, s2, prefix + ".ln2");
        NodeId mlp = g.gelu(g.add_bias(g.matmul(n2, w1, prefix + ".fc1"), b1), prefix + ".gelu");
        h = g.add(h, g.add_bias(g.matmul(mlp, w2, prefix + ".fc2"), b2), prefix + ".res2");
        break;
      }
    }
    h = activate(h, l.activation, prefix);
    m.layer_outputs.push_back(h);
    std::vector<std::size_t> slots;
    for (std::size_t s = first_slot; s < g.params().size(); ++s) slots.push_back(s);
    m.layer_params.push_back(std::move(slots));
  }
  (void)tokens;
  m.logits = h;
  m.loss = g.cross_entropy(m.logits, g.input("y", false), "loss");
  m.picked = g.pick_logit(m.logits, g.input("pick", false), "picked");
  m.params = init_params(g, seed, spec.init_scale);
  return m;
}

Model build_mini_vit(std::size_t patch, bool shared, std::uint64_t seed, std::size_t in_channels, std::size_t height,
                     std::size_t width, std::size_t classes) {
  return build_model(vit_spec(patch, shared, in_channels, height, width, classes), seed);
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (!(max_lr > 0.0)) throw Error("train config: max_lr must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw Error("train config: decay must lie in (0, 1]");
  if (batch_size == 0) throw Error("train config: batch_size must be positive");
  if (reset_period == 0) throw Error("train config: reset_period must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return max_lr * std::pow(decay, static_cast<double>(epoch % reset_period));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits[b * C + c] > logits[b * C + best]) best = c;
    out[b] = best;
  }
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 256;

Tensor gather_images(const Tensor& images, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t per = images.size() / images.dim(0);
  Shape s = images.shape();
  s[0] = end - begin;
  Tensor out(s);
  for (std::size_t i = begin; i < end; ++i) {
    const auto src = images.row(idx[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * per));
  }
  return out;
}

Tensor label_tensor(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& idx, std::size_t begin,
                    std::size_t end) {
  Tensor y(Shape{end - begin});
  for (std::size_t i = begin; i < end; ++i) y[i - begin] = static_cast<double>(labels[idx[i]]);
  return y;
}

}  // namespace

Tensor predict(const Model& model, const Params& params, const Tensor& images) {
  if (images.rank() != 4) throw Error("predict: expected [B, C, H, W], got " + shape_str(images.shape()));
  const std::size_t B = images.dim(0), K = model.spec.classes;
  Tensor out(Shape{B, K});
  for (std::size_t b = 0; b < B; b += kEvalChunk) {
    const std::size_t e = std::min(B, b + kEvalChunk);
    Workspace ws = evaluate(model.graph, params, {{"x", images.slice_rows(b, e)}}, model.logits);
    std::copy(ws[model.logits].values().begin(), ws[model.logits].values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * K));
  }
  return out;
}

double accuracy(const Model& model, const Params& params, const data::Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = argmax_rows(predict(model, params, ds.images));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

double mean_loss(const Model& model, const Params& params, const data::Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  double total = 0.0;
  for (std::size_t b = 0; b < ds.size(); b += kEvalChunk) {
    const std::size_t e = std::min(ds.size(), b + kEvalChunk);
    Workspace ws = evaluate(model.graph, params,
                            {{"x", gather_images(ds.images, idx, b, e)}, {"y", label_tensor(ds.labels, idx, b, e)}},
                            model.loss);
    total += ws[model.loss].item() * static_cast<double>(e - b);
  }
  return ds.size() ? total / static_cast<double>(ds.size()) : 0.0;
}

TrainedModel train(Model model, const data::Dataset& train_set, const data::Dataset& test_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw Error("train: empty training set");
  train_set.validate();
  if (train_set.classes > model.spec.classes) throw Error("train: dataset has more classes than the model head");
  const Shape want{model.spec.channels, model.spec.height, model.spec.width};
  if (Shape(train_set.images.shape().begin() + 1, train_set.images.shape().end()) != want) {
    throw Error("train: images " + shape_str(train_set.images.shape()) + " do not match model input " + shape_str(want));
  }

  TrainedModel tm{std::move(model), {}, {}, {}, {}, 0};
  Model& m = tm.model;
  Params params = m.params;
  auto record = [&](double loss) {
    tm.checkpoints.push_back(params);
    tm.train_accuracy.push_back(accuracy(m, params, train_set));
    tm.test_accuracy.push_back(test_set.size() ? accuracy(m, params, test_set) : 0.0);
    tm.train_loss.push_back(loss);
  };
  record(mean_loss(m, params, train_set));

  const std::size_t N = train_set.size();
  std::vector<std::size_t> order(N);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    SplitMix64 rng(derive_seed(cfg.seed, epoch));
    for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const double lr = cfg.lr_at(epoch - 1);
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b < N; b += cfg.batch_size) {
        const std::size_t e = std::min(N, b + cfg.batch_size);
        Workspace ws = evaluate(m.graph, params,
                                {{"x", gather_images(train_set.images, order, b, e)},
                                 {"y", label_tensor(train_set.labels, order, b, e)}},
                                m.loss);
        const double loss = ws[m.loss].item();
        if (!std::isfinite(loss)) throw Error("non-finite loss");
        loss_sum += loss * static_cast<double>(e - b);
        Gradients grads = backward(m.graph, params, ws, m.loss, BackwardOptions{true, false});
        sgd_step(m.graph, params, grads, lr);
      }
    } catch (const Error& err) {
      throw Error("training of '" + m.spec.name + "' diverged at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    record(loss_sum / static_cast<double>(N));
    if (tm.test_accuracy.back() >= cfg.stop_accuracy) break;
  }
  for (std::size_t e = 1; e < tm.test_accuracy.size(); ++e)
    if (tm.test_accuracy[e] > tm.test_accuracy[tm.best_epoch]) tm.best_epoch = e;
  m.params = params;
  return tm;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::string& stem, const Model& model, const Params& params) {
  std::vector<NamedTensor> named;
  for (std::size_t s = 0; s < params.size(); ++s) named.push_back({model.graph.params()[s].name, params[s]});
  save_tensors(stem + ".bin", named);
  write_file(stem + ".json", spec_to_json(model.spec));
}

std::pair<Model, Params> load_checkpoint(const std::string& stem) {
  Model m = build_model(spec_from_json(read_file(stem + ".json")), 0);
  const auto named = load_tensors(stem + ".bin");
  if (named.size() != m.params.size()) throw Error("checkpoint " + stem + ": parameter count does not match its spec");
  Params p;
  for (std::size_t s = 0; s < named.size(); ++s) {
    const ParamInfo& info = m.graph.params()[s];
    if (named[s].name != info.name || named[s].tensor.shape() != info.shape) {
      throw Error("checkpoint " + stem + ": entry '" + named[s].name + "' does not match parameter '" + info.name + "'");
    }
    p.push_back(named[s].tensor);
  }
  m.params = p;
  return {std::move(m), std::move(p)};
}

}  // namespace freqlab::models
