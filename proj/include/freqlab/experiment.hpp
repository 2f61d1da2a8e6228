#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freqlab/attacks.hpp"
#include "freqlab/data.hpp"
#include "freqlab/models.hpp"

namespace freqlab::experiment {

/// Version string folded into every manifest.
const char* code_version();

enum class Analysis { Spectra, Norms, Kappa, Spearman, Profiles, Dynamics };
const char* analysis_name(Analysis a);
Analysis parse_analysis(const std::string& s);

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "cifar10"
  data::SynthConfig synth;
  std::string cifar_dir;             // holds data_batch_{1..5}.bin and test_batch.bin
  bool grayscale = true;
  std::size_t downsample = 0;        // number of 2x2 average poolings
  std::size_t train_limit = 0;       // 0 keeps everything
  std::size_t test_limit = 0;
  std::optional<data::SteganoSpec> injection;
};

struct ModelEntry {
  std::string label;
  models::ModelSpec spec;
};

struct AttackEntry {
  std::string label;
  attacks::AttackConfig cfg;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  std::string output_dir;
  DatasetConfig dataset;
  std::vector<ModelEntry> models;
  models::TrainConfig train;
  std::vector<AttackEntry> attacks;
  std::size_t attack_examples = 100;  // first examples of the test split
  std::size_t probe_examples = 100;   // saliency probe for nonlinear models
  std::vector<Analysis> analyses;
  double kappa_k = 3.0;
  std::string dynamics_attack;        // label; defaults to the first attack
  bool dynamics_every_epoch = false;  // otherwise epoch 0 and the best epoch
  nlohmann::json source;              // parsed config, kept for the manifest

  bool wants(Analysis a) const;
  /// Fails with a message naming the offending key.
  void validate() const;
};

/// Builds a config from the parsed TOML tree. Unknown keys are errors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Applies "section.key=value" overrides (value in TOML syntax) to a parsed tree.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Per-trial seeds.
std::uint64_t trial_seed(const ExperimentConfig& cfg, std::size_t trial);
data::Split make_dataset(const ExperimentConfig& cfg, std::size_t trial);
models::Model make_model(const ExperimentConfig& cfg, std::size_t model, std::size_t trial);
models::TrainConfig make_train_config(const ExperimentConfig& cfg, std::size_t trial);

struct MetricRow {
  std::string model;
  std::string trial;  // trial index, "mean", or "single-run" when trials == 1
  std::string metric;
  double value = 0.0;
  double std = 0.0;   // unbiased standard deviation over trials; 0 for trial rows

  bool operator==(const MetricRow&) const = default;
};

struct Report {
  std::vector<MetricRow> rows;
  std::vector<std::string> files;    // artifact paths relative to the run directory
  std::vector<std::string> missing;  // expected artifacts that were absent

  /// Value of a metric row; throws if absent.
  double value(const std::string& model, const std::string& trial, const std::string& metric) const;
};

/// CSV with header `model,trial,metric,value,std`; doubles in shortest round-trip form.
std::string report_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_report_csv(const std::string& text);

struct UnitStatus {
  std::string id;  // "<model>-t<trial>"
  bool ok = true;
  std::string error;
};

struct RunResult {
  std::string dir;
  std::vector<UnitStatus> units;
  Report report;

  std::size_t failed() const;
};

/// Output directory: $FREQLAB_ARTIFACT_ROOT/<name> when the variable is set,
/// else the configured output_dir, else "runs/<name>".
std::string resolve_output_dir(const ExperimentConfig& cfg);

/// Trains every model for every trial, runs the configured attacks and
/// analyses, writes per-unit artifacts and then calls emit_report.
/// A failing unit is recorded and the run continues.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir);

/// Merges unit artifacts into report.csv, shared plots under analysis/, and
/// manifest.json. Missing unit files are listed, not fatal. A config with an
/// empty analysis list yields the manifest alone.
Report emit_report(const std::string& dir);

}  // namespace freqlab::experiment
