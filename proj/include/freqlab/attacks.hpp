#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "freqlab/data.hpp"
#include "freqlab/models.hpp"

namespace freqlab::attacks {

enum class Norm { Linf, L2, L1 };

const char* norm_name(Norm n);
Norm parse_norm(const std::string& s);

/// PGD settings. Each iteration takes a step of size rate * epsilon
/// (sign step for Linf, gradient normalized in the attack norm for L2 and L1),
/// projects onto the epsilon ball and then onto the pixel box.
struct AttackConfig {
  Norm norm = Norm::Linf;
  double epsilon = 8.0 / 255.0;
  double rate = 0.1;
  std::size_t steps = 100;
  double pixel_lo = 0.0;
  double pixel_hi = 1.0;
  /// Uniform start inside the ball instead of zero.
  bool random_start = false;
  /// Freeze an example at the first iterate that flips its prediction.
  bool stop_on_success = false;
  std::uint64_t seed = 0;

  void validate() const;
  /// Stable identifier, e.g. "linf-eps0.0313725-rate0.1-steps100".
  std::string name() const;
};

struct Perturbation {
  Tensor delta;  // [C, H, W]
  bool success = false;
  double final_norm = 0.0;  // in the configured norm
  std::size_t example = 0;
  std::size_t clean_prediction = 0;
  std::size_t adversarial_prediction = 0;
  std::size_t steps_taken = 0;
  std::string error;  // non-empty when the example failed
};

double norm_value(std::span<const double> v, Norm norm);

/// Euclidean projection onto {d : ||d|| <= epsilon} in place.
void project(std::span<double> delta, Norm norm, double epsilon);
/// Sorting-based projection onto the L1 ball.
void project_l1(std::span<double> delta, double epsilon);

/// Attacks a batch [B, C, H, W], ascending the cross-entropy against `targets`.
/// Success means the prediction of x + delta differs from the prediction of x.
std::vector<Perturbation> pgd_batch(const models::Model& model, const Params& params, const Tensor& images,
                                    const std::vector<std::size_t>& targets, const AttackConfig& cfg);

/// Single-example form on a [C, H, W] image.
Perturbation pgd(const models::Model& model, const Params& params, const Tensor& image, std::size_t label,
                 const AttackConfig& cfg);

struct SuccessRow {
  std::string config;
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;  // examples that raised an error
  double success_rate = 0.0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  double mean_linf = 0.0;
};

struct PerturbationSet {
  std::vector<AttackConfig> configs;
  std::vector<std::vector<Perturbation>> results;  // [config][example]
  std::vector<SuccessRow> table;

  /// Deltas of one config stacked to [N, C, H, W].
  Tensor deltas(std::size_t config) const;
};

/// Runs every config on every example, targeting the model's clean prediction.
/// Errors are recorded per example and never abort the suite.
PerturbationSet attack_suite(const models::Model& model, const Params& params, const data::Dataset& ds,
                             const std::vector<AttackConfig>& configs, std::size_t batch = 64);

/// `<stem>.bin` holds one "<config name>" tensor per config; `<stem>.json`
/// holds configs, success flags, predictions and norms.
void save_perturbations(const std::string& stem, const PerturbationSet& set);
PerturbationSet load_perturbations(const std::string& stem);

}  // namespace freqlab::attacks
