#include "freqlab/linmap.hpp"

#include <algorithm>
#include <cmath>

#include "freqlab/kernels.hpp"
#include "freqlab/rng.hpp"

namespace freqlab::linmap {

using models::LayerKind;

Matrix dense_matrix(const Tensor& w) {
  if (w.rank() != 2) throw Error("dense_matrix: expected [N, K] weights, got " + shape_str(w.shape()));
  Matrix m(w.dim(0), w.dim(1));
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t c = 0; c < w.dim(1); ++c) m(r, c) = w[r * w.dim(1) + c];
  return m;
}

Matrix conv_matrix(const Tensor& w, std::size_t H, std::size_t W, Padding padding) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) throw Error("conv_matrix: expected [Cout, Cin, k, k], got " + shape_str(w.shape()));
  const std::size_t Co = w.dim(0), Ci = w.dim(1), k = w.dim(2);
  const long half = static_cast<long>(k / 2);
  Matrix m = Matrix::Zero(Co * H * W, Ci * H * W);
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t a = 0; a < k; ++a) {
            const long si = kernels::source_index(static_cast<long>(i), static_cast<long>(a) - half, static_cast<long>(H), padding);
            if (si < 0) continue;
            for (std::size_t b = 0; b < k; ++b) {
              const long sj = kernels::source_index(static_cast<long>(j), static_cast<long>(b) - half, static_cast<long>(W), padding);
              if (sj < 0) continue;
              m((co * H + i) * W + j, (ci * H + static_cast<std::size_t>(si)) * W + static_cast<std::size_t>(sj)) +=
                  w[((co * Ci + ci) * k + a) * k + b];
            }
          }
  return m;
}

Matrix local_matrix(const Tensor& w, std::size_t H, std::size_t W, Padding padding) {
  if (w.rank() != 6 || w.dim(1) != H || w.dim(2) != W || w.dim(4) != w.dim(5)) {
    throw Error("local_matrix: expected [Cout, H, W, Cin, k, k], got " + shape_str(w.shape()));
  }
  const std::size_t Co = w.dim(0), Ci = w.dim(3), k = w.dim(4);
  const long half = static_cast<long>(k / 2);
  Matrix m = Matrix::Zero(Co * H * W, Ci * H * W);
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t a = 0; a < k; ++a) {
            const long si = kernels::source_index(static_cast<long>(i), static_cast<long>(a) - half, static_cast<long>(H), padding);
            if (si < 0) continue;
            for (std::size_t b = 0; b < k; ++b) {
              const long sj = kernels::source_index(static_cast<long>(j), static_cast<long>(b) - half, static_cast<long>(W), padding);
              if (sj < 0) continue;
              m((co * H + i) * W + j, (ci * H + static_cast<std::size_t>(si)) * W + static_cast<std::size_t>(sj)) +=
                  w[((((co * H + i) * W + j) * Ci + ci) * k + a) * k + b];
            }
          }
  return m;
}

namespace {

/// Channel count entering each layer (0 once the activations are flat).
std::vector<std::size_t> input_channels(const models::ModelSpec& spec) {
  std::vector<std::size_t> out;
  std::size_t c = spec.channels;
  bool flat = false;
  for (const auto& l : spec.layers) {
    out.push_back(flat ? 0 : c);
    if (l.kind == LayerKind::Dense || l.kind == LayerKind::PatchEmbed) flat = true;
    c = l.channels;
  }
  return out;
}

void check_layer(const models::Model& model, std::size_t layer) {
  if (layer >= model.spec.layers.size()) {
    throw Error("layer index " + std::to_string(layer) + " out of range for '" + model.spec.name + "'");
  }
  const auto& l = model.spec.layers[layer];
  if (l.kind == LayerKind::PatchEmbed || l.kind == LayerKind::AttentionBlock) {
    throw Error(std::string("layer ") + std::to_string(layer) + " (" + models::layer_kind_name(l.kind) +
                ") has no matrix form; use saliency_beta");
  }
  if (layer > 0 && model.spec.layers[layer - 1].kind == LayerKind::AttentionBlock) {
    throw Error("layer " + std::to_string(layer) + " follows transformer blocks; use saliency_beta");
  }
}

const Tensor& weight(const models::Model& model, const Params& params, std::size_t layer) {
  return params.at(model.layer_params.at(layer).at(0));
}

}  // namespace

Matrix layer_to_matrix(const models::Model& model, const Params& params, std::size_t layer) {
  check_layer(model, layer);
  const auto& l = model.spec.layers[layer];
  if (l.activation != models::Activation::None) {
    throw Error("layer " + std::to_string(layer) + " of '" + model.spec.name + "' applies " +
                models::activation_name(l.activation) + "; it is not linear, use saliency_beta");
  }
  const std::size_t H = model.spec.height, W = model.spec.width;
  const Tensor& w = weight(model, params, layer);
  switch (l.kind) {
    case LayerKind::Dense: return dense_matrix(w);
    case LayerKind::ConvFull: return conv_matrix(w, H, W, Padding::Circular);
    case LayerKind::ConvBounded: return conv_matrix(w, H, W, l.padding);
    case LayerKind::LocallyConnected: return local_matrix(w, H, W, l.padding);
    default: break;
  }
  throw Error("layer has no matrix form");
}

LinearMap end_to_end_beta(const models::Model& model, const Params& params, std::size_t upto) {
  if (upto == 0 || upto > model.spec.layers.size()) {
    throw Error("end_to_end_beta: upto must lie in [1, " + std::to_string(model.spec.layers.size()) + "]");
  }
  LinearMap map;
  map.upto = upto;
  map.channels = model.spec.channels;
  map.height = model.spec.height;
  map.width = model.spec.width;
  map.matrix = layer_to_matrix(model, params, 0);
  for (std::size_t l = 1; l < upto; ++l) map.matrix = layer_to_matrix(model, params, l) * map.matrix;
  if (!map.matrix.allFinite()) throw Error("end_to_end_beta: non-finite entries");
  return map;
}

double verify_equivalence(const models::Model& model, const Params& params, std::size_t layer, std::size_t probes,
                          std::uint64_t seed) {
  const Matrix m = layer_to_matrix(model, params, layer);
  const auto& l = model.spec.layers[layer];
  const std::size_t H = model.spec.height, W = model.spec.width;
  const std::size_t cin = input_channels(model.spec)[layer];
  const Tensor& w = weight(model, params, layer);
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    std::vector<double> x(static_cast<std::size_t>(m.cols()));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<double> y(static_cast<std::size_t>(m.rows()));
    if (l.kind == LayerKind::Dense) {
      kernels::matmul(x, w.data(), y, 1, x.size(), y.size());
    } else {
      kernels::SpatialGeom g{1, cin, l.channels, H, W, 0, l.padding};
      if (l.kind == LayerKind::LocallyConnected) {
        g.kernel = l.kernel;
        kernels::local2d(x, w.data(), y, g);
      } else {
        g.kernel = w.dim(2);
        if (l.kind == LayerKind::ConvFull) g.padding = Padding::Circular;
        kernels::conv2d(x, w.data(), y, g);
      }
    }
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd mx = m * xv;
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(mx(static_cast<Eigen::Index>(i)) - y[i]));
  }
  return worst;
}

SaliencySet saliency_beta(const models::Model& model, const Params& params, const data::Dataset& ds,
                          SaliencyTarget rule) {
  SaliencySet out;
  out.rule = rule;
  out.gradients = Tensor(ds.images.shape());
  const std::size_t per = ds.pixels();
  constexpr std::size_t chunk = 128;
  for (std::size_t b = 0; b < ds.size(); b += chunk) {
    const std::size_t e = std::min(ds.size(), b + chunk);
    const Tensor x = ds.images.slice_rows(b, e);
    Tensor target(Shape{e - b});
    if (rule == SaliencyTarget::TopLogit) {
      const auto pred = models::argmax_rows(models::predict(model, params, x));
      for (std::size_t i = 0; i < pred.size(); ++i) target[i] = static_cast<double>(pred[i]);
    } else {
      for (std::size_t i = b; i < e; ++i) target[i - b] = static_cast<double>(ds.labels[i]);
    }
    const NodeId node = rule == SaliencyTarget::TopLogit ? model.picked : model.loss;
    const Workspace ws = evaluate(model.graph, params, {{"x", x}, {"pick", target}, {"y", target}}, node);
    Gradients g = backward(model.graph, params, ws, node, BackwardOptions{false, true});
    const Tensor& gx = g.inputs.at("x");
    // The loss is a batch mean; undo the 1/B so each row is its own example's gradient.
    const double scale = rule == SaliencyTarget::Loss ? static_cast<double>(e - b) : 1.0;
    for (std::size_t i = 0; i < gx.size(); ++i) out.gradients[b * per + i] = gx[i] * scale;
    for (std::size_t i = 0; i < e - b; ++i) out.targets.push_back(static_cast<std::size_t>(target[i]));
  }
  return out;
}

std::vector<Tensor> rows_as_images(const LinearMap& map) {
  const std::size_t n = map.channels * map.height * map.width;
  if (static_cast<std::size_t>(map.matrix.cols()) != n) throw Error("rows_as_images: map width does not match image extents");
  std::vector<Tensor> rows;
  for (Eigen::Index r = 0; r < map.matrix.rows(); ++r) {
    Tensor t(Shape{map.channels, map.height, map.width});
    for (std::size_t i = 0; i < n; ++i) t[i] = map.matrix(r, static_cast<Eigen::Index>(i));
    rows.push_back(std::move(t));
  }
  return rows;
}

spectral::BandEnergy band_energy(const LinearMap& map, double k, spectral::Region region) {
  spectral::BandEnergy total;
  const std::size_t plane = map.height * map.width;
  for (const Tensor& row : rows_as_images(map)) {
    for (std::size_t c = 0; c < map.channels; ++c) {
      const auto s = spectral::dft2(row.data().subspan(c * plane, plane), map.height, map.width);
      const auto b = spectral::band_energy(spectral::energy(s), k, region);
      total.inside += b.inside;
      total.total += b.total;
    }
  }
  return total;
}

spectral::Grid mean_row_magnitude(const LinearMap& map) {
  const auto rows = rows_as_images(map);
  return spectral::mean_magnitude_spectrum(rows);
}

}  // namespace freqlab::linmap
