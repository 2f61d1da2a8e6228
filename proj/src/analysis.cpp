#include "freqlab/analysis.hpp"

#include "freqlab/format.hpp"

namespace freqlab::analysis {

double grid_l1(const spectral::Grid& g) {
  double s = 0.0;
  for (double v : g.values) s += v;
  return s;
}

spectral::Grid squared(const spectral::Grid& g) {
  spectral::Grid out = g;
  for (double& v : out.values) v *= v;
  return out;
}

double magnitude_centroid(const spectral::Grid& magnitude) { return spectral::radial_centroid(squared(magnitude)); }

spectral::Grid delta_spectrum(const attacks::PerturbationSet& set, std::size_t config) {
  std::vector<Tensor> deltas;
  for (const attacks::Perturbation& p : set.results.at(config)) {
    if (p.error.empty()) deltas.push_back(p.delta);
  }
  if (deltas.empty()) throw Error("delta_spectrum: no successful attack runs for " + set.configs.at(config).name());
  return spectral::mean_magnitude_spectrum(deltas);
}

bool is_linear(const models::Model& model) {
  for (const models::LayerSpec& l : model.spec.layers) {
    if (l.activation != models::Activation::None) return false;
    if (l.kind == models::LayerKind::PatchEmbed || l.kind == models::LayerKind::AttentionBlock) return false;
  }
  return true;
}

spectral::Grid beta_spectrum(const models::Model& model, const Params& params, const data::Dataset& probe) {
  if (is_linear(model)) {
    return linmap::mean_row_magnitude(linmap::end_to_end_beta(model, params, model.spec.layers.size()));
  }
  const linmap::SaliencySet s = linmap::saliency_beta(model, params, probe);
  std::vector<Tensor> rows;
  const Shape item(s.gradients.shape().begin() + 1, s.gradients.shape().end());
  for (std::size_t i = 0; i < s.gradients.dim(0); ++i) rows.push_back(s.gradients.slice_rows(i, i + 1).reshaped(item));
  return spectral::mean_magnitude_spectrum(rows);
}

ConcentrationReport concentration(const models::Model& model, const Params& params, double k) {
  if (!is_linear(model)) throw Error("concentration: " + model.spec.name + " is not linear; use beta_spectrum");
  ConcentrationReport r;
  r.k = k;
  const std::size_t H = model.spec.height, W = model.spec.width;
  const std::size_t depth = model.spec.depth();
  for (std::size_t l = 0; l < depth; ++l) {
    const linmap::LinearMap beta = linmap::end_to_end_beta(model, params, l + 1);
    r.kappa_beta.push_back(spectral::kappa_high(linmap::band_energy(beta, k)));
    linmap::LinearMap w;
    w.matrix = linmap::layer_to_matrix(model, params, l);
    w.channels = static_cast<std::size_t>(w.matrix.cols()) / (H * W);
    w.height = H;
    w.width = W;
    r.kappa_w.push_back(spectral::kappa_high(linmap::band_energy(w, k)));
  }
  const linmap::LinearMap full = linmap::end_to_end_beta(model, params, model.spec.layers.size());
  r.kappa_full = spectral::kappa_high(linmap::band_energy(full, k));
  return r;
}

DynamicsTrack dynamics_track(const models::TrainedModel& trained, const attacks::AttackConfig& cfg,
                             const data::Dataset& probe, const std::vector<std::size_t>& epochs) {
  if (trained.checkpoints.size() < 2) {
    throw Error("dynamics_track: needs at least 2 checkpoints, got " + std::to_string(trained.checkpoints.size()));
  }
  DynamicsTrack track;
  for (std::size_t e : epochs) {
    if (e >= trained.checkpoints.size()) {
      track.warnings.push_back("checkpoint for epoch " + std::to_string(e) + " missing, skipped");
      continue;
    }
    const Params& p = trained.checkpoints[e];
    const attacks::PerturbationSet set = attacks::attack_suite(trained.model, p, probe, {cfg});
    DynamicsPoint pt;
    pt.epoch = e;
    pt.test_accuracy = e < trained.test_accuracy.size() ? trained.test_accuracy[e] : 0.0;
    pt.spectrum = delta_spectrum(set, 0);
    pt.centroid = magnitude_centroid(pt.spectrum);
    pt.mean_l2 = set.table[0].mean_l2;
    pt.mean_linf = set.table[0].mean_linf;
    pt.success_rate = set.table[0].success_rate;
    const spectral::Grid e2 = squared(pt.spectrum);
    pt.radial = spectral::radial_profile(e2);
    pt.angular = spectral::angular_profile(e2);
    track.points.push_back(std::move(pt));
  }
  return track;
}

}  // namespace freqlab::analysis
