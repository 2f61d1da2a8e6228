#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "freqlab/attacks.hpp"
#include "freqlab/data.hpp"
#include "freqlab/linmap.hpp"
#include "freqlab/models.hpp"
#include "freqlab/spectral.hpp"

namespace freqlab::analysis {

/// Sum of a grid's entries; for magnitude grids this is the spectral L1 norm.
double grid_l1(const spectral::Grid& g);
/// Squares every entry: magnitude grid -> energy grid.
spectral::Grid squared(const spectral::Grid& g);
/// Radial energy centroid of a magnitude grid.
double magnitude_centroid(const spectral::Grid& magnitude);

/// Mean |DFT| over the perturbations of one config, skipping failed examples.
spectral::Grid delta_spectrum(const attacks::PerturbationSet& set, std::size_t config);

/// True when every hidden layer and the head have a matrix form.
bool is_linear(const models::Model& model);

/// Mean row magnitude of the end-to-end map for linear models, or of the
/// top-logit input gradients over `probe` for nonlinear ones.
spectral::Grid beta_spectrum(const models::Model& model, const Params& params, const data::Dataset& probe);

/// kappa_high of every partial product beta_l and every layer matrix w_l
/// over the hidden layers, measured in the region of half-width k / 2.
struct ConcentrationReport {
  double k = 0.0;
  std::vector<double> kappa_beta;  // beta_l = w_l ... w_1, l = 1 .. depth
  std::vector<double> kappa_w;
  double kappa_full = 0.0;         // including the dense head
};

ConcentrationReport concentration(const models::Model& model, const Params& params, double k);

/// Per-checkpoint perturbation statistics for one attack config.
struct DynamicsPoint {
  std::size_t epoch = 0;
  double test_accuracy = 0.0;
  double centroid = 0.0;       // radial centroid of mean |delta hat|
  double mean_l2 = 0.0;
  double mean_linf = 0.0;
  double success_rate = 0.0;
  spectral::Grid spectrum;     // mean |delta hat|
  spectral::EnergyProfile radial;
  spectral::EnergyProfile angular;
};

struct DynamicsTrack {
  std::vector<DynamicsPoint> points;
  std::vector<std::string> warnings;  // skipped checkpoints
};

/// Attacks `probe` with the weights of each listed epoch. Epochs without a
/// checkpoint are skipped with a warning. Needs at least two checkpoints.
DynamicsTrack dynamics_track(const models::TrainedModel& trained, const attacks::AttackConfig& cfg,
                             const data::Dataset& probe, const std::vector<std::size_t>& epochs);

}  // namespace freqlab::analysis
