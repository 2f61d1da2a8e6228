#include "freqlab/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "freqlab/analysis.hpp"
#include "freqlab/checkpoint.hpp"
#include "freqlab/format.hpp"
#include "freqlab/plot.hpp"
#include "freqlab/spectral.hpp"
#include "freqlab/toml.hpp"

namespace freqlab::experiment {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* code_version() { return "freqlab-1.0.0"; }

namespace {

constexpr const char* kAnalysisNames[] = {"spectra", "norms", "kappa", "spearman", "profiles", "dynamics"};

}  // namespace

const char* analysis_name(Analysis a) { return kAnalysisNames[static_cast<int>(a)]; }

Analysis parse_analysis(const std::string& s) {
  for (int i = 0; i < 6; ++i)
    if (s == kAnalysisNames[i]) return static_cast<Analysis>(i);
  throw Error("unknown analysis '" + s + "' (expected spectra, norms, kappa, spearman, profiles or dynamics)");
}

bool ExperimentConfig::wants(Analysis a) const {
  return std::find(analyses.begin(), analyses.end(), a) != analyses.end();
}

// ---------------------------------------------------------------- parsing

namespace {

/// Typed access to one JSON object that rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(where_ + ": expected a table");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string str(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_string()) fail(key, "expected a string");
    return j_[key].get<std::string>();
  }
  double num(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_number()) fail(key, "expected a number");
    return j_[key].get<double>();
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_number_integer() || j_[key].get<long long>() < 0) fail(key, "expected a non-negative integer");
    return static_cast<std::size_t>(j_[key].get<long long>());
  }
  bool flag(const std::string& key, bool fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_boolean()) fail(key, "expected true or false");
    return j_[key].get<bool>();
  }
  std::vector<std::string> strings(const std::string& key) {
    seen_.insert(key);
    std::vector<std::string> out;
    if (!j_.contains(key)) return out;
    if (!j_[key].is_array()) fail(key, "expected an array of strings");
    for (const json& v : j_[key]) {
      if (!v.is_string()) fail(key, "expected an array of strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(where_ + ": unknown key '" + it.key() + "'");
  }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw Error(where_ + "." + key + ": " + what);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

models::Activation parse_act(const std::string& s, const std::string& where) {
  if (s == "none") return models::Activation::None;
  if (s == "relu") return models::Activation::ReLU;
  if (s == "gelu") return models::Activation::GELU;
  throw Error(where + ": unknown activation '" + s + "'");
}

bool safe_label(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return true;
}

}  // namespace

namespace {

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.source = j;
  Section top(j, "config");
  cfg.name = top.str("name", "");
  cfg.seed = top.count("seed", 0);
  cfg.trials = top.count("trials", 1);
  cfg.output_dir = top.str("output_dir", "");
  cfg.attack_examples = top.count("attack_examples", 100);
  cfg.probe_examples = top.count("probe_examples", 100);
  for (const std::string& a : top.strings("analyses")) cfg.analyses.push_back(parse_analysis(a));

  if (const json* d = top.child("dataset")) {
    Section s(*d, "dataset");
    DatasetConfig& ds = cfg.dataset;
    data::SynthConfig& sc = ds.synth;
    ds.source = s.str("source", "synthetic");
    sc.channels = s.count("channels", sc.channels);
    sc.height = s.count("height", sc.height);
    sc.width = s.count("width", sc.width);
    sc.classes = s.count("classes", sc.classes);
    sc.train_per_class = s.count("train_per_class", sc.train_per_class);
    sc.test_per_class = s.count("test_per_class", sc.test_per_class);
    sc.alpha = s.num("alpha", sc.alpha);
    const std::string sig = s.str("signature", "texture");
    if (sig == "texture") sc.signature = data::Signature::Texture;
    else if (sig == "band") sc.signature = data::Signature::Band;
    else s.fail("signature", "expected texture or band");
    sc.band_lo = s.num("band_lo", sc.band_lo);
    sc.band_hi = s.num("band_hi", sc.band_hi);
    sc.signal = s.num("signal", sc.signal);
    sc.noise = s.num("noise", sc.noise);
    sc.noise_alpha = s.num("noise_alpha", sc.noise_alpha);
    sc.mean = s.num("mean", sc.mean);
    ds.cifar_dir = s.str("cifar_dir", "");
    ds.grayscale = s.flag("grayscale", true);
    ds.downsample = s.count("downsample", 0);
    ds.train_limit = s.count("train_limit", 0);
    ds.test_limit = s.count("test_limit", 0);
    s.finish();
  }
  if (const json* inj = top.child("injection")) {
    Section s(*inj, "injection");
    data::SteganoSpec spec;
    const std::string mode = s.str("mode", "sparse");
    if (mode == "sparse") spec.mode = data::MaskMode::Sparse;
    else if (mode == "ring") spec.mode = data::MaskMode::Ring;
    else s.fail("mode", "expected sparse or ring");
    spec.rho = s.num("rho", spec.rho);
    spec.r_lo = s.num("r_lo", spec.r_lo);
    spec.r_hi = s.num("r_hi", spec.r_hi);
    spec.epsilon = s.num("epsilon", spec.epsilon);
    s.finish();
    cfg.dataset.injection = spec;
  }
  if (const json* t = top.child("train")) {
    Section s(*t, "train");
    models::TrainConfig& tc = cfg.train;
    tc.epochs = s.count("epochs", tc.epochs);
    tc.max_lr = s.num("max_lr", tc.max_lr);
    tc.decay = s.num("decay", tc.decay);
    tc.batch_size = s.count("batch_size", tc.batch_size);
    tc.reset_period = s.count("reset_period", tc.reset_period);
    tc.stop_accuracy = s.num("stop_accuracy", tc.stop_accuracy);
    s.finish();
  }
  if (const json* k = top.child("kappa")) {
    Section s(*k, "kappa");
    cfg.kappa_k = s.num("k", cfg.kappa_k);
    s.finish();
  }
  if (const json* d = top.child("dynamics")) {
    Section s(*d, "dynamics");
    cfg.dynamics_attack = s.str("attack", "");
    cfg.dynamics_every_epoch = s.flag("every_epoch", false);
    s.finish();
  }

  const data::SynthConfig& sc = cfg.dataset.synth;
  std::size_t C = sc.channels, H = sc.height, W = sc.width;
  if (cfg.dataset.source == "cifar10") {
    C = cfg.dataset.grayscale ? 1 : 3;
    H = W = data::kCifarSide >> cfg.dataset.downsample;
  }
  if (const json* ms = top.child("model")) {
    if (!ms->is_array()) throw Error("config.model: expected [[model]] tables");
    for (std::size_t i = 0; i < ms->size(); ++i) {
      Section s((*ms)[i], "model[" + std::to_string(i) + "]");
      ModelEntry e;
      e.label = s.str("label", "");
      const std::string fam = s.str("family", "");
      const std::string where = "model '" + e.label + "'";
      const auto act = parse_act(s.str("activation", "none"), where);
      if (fam == "vit" || fam == "vitloc") {
        const std::size_t embed = s.count("embed", 64), heads = s.count("heads", 4), blocks = s.count("blocks", 2);
        e.spec = models::vit_spec(s.count("patch", 4), fam == "vit", C, H, W, sc.classes, embed, heads, blocks);
      } else {
        models::Family f;
        try {
          f = models::parse_family(fam);
        } catch (const Error&) {
          s.fail("family", "expected fc, lc, fwc, bwc, vit or vitloc");
        }
        e.spec = models::family_spec(f, s.count("depth", 1), s.count("kernel", 3), s.count("channels", 1), act, C, H, W,
                                     sc.classes);
        const std::string pad = s.str("padding", "circular");
        if (pad != "circular" && pad != "zero") s.fail("padding", "expected circular or zero");
        for (auto& l : e.spec.layers)
          if (l.kind == models::LayerKind::ConvBounded || l.kind == models::LayerKind::LocallyConnected)
            l.padding = pad == "zero" ? Padding::Zero : Padding::Circular;
      }
      e.spec.name = e.label;
      e.spec.init_scale = s.num("init_scale", 1.0);
      e.spec.input_center = s.num("input_center", 0.5);
      s.finish();
      cfg.models.push_back(std::move(e));
    }
  }
  if (const json* as = top.child("attack")) {
    if (!as->is_array()) throw Error("config.attack: expected [[attack]] tables");
    for (std::size_t i = 0; i < as->size(); ++i) {
      Section s((*as)[i], "attack[" + std::to_string(i) + "]");
      AttackEntry e;
      e.label = s.str("label", "");
      e.cfg.norm = attacks::parse_norm(s.str("norm", "linf"));
      e.cfg.epsilon = s.num("epsilon", e.cfg.epsilon);
      e.cfg.rate = s.num("rate", e.cfg.rate);
      e.cfg.steps = s.count("steps", e.cfg.steps);
      e.cfg.random_start = s.flag("random_start", false);
      e.cfg.stop_on_success = s.flag("stop_on_success", false);
      s.finish();
      cfg.attacks.push_back(std::move(e));
    }
  }
  top.finish();
  return cfg;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg = parse_config(j);
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (!safe_label(name)) throw Error("config.name: required, letters, digits, '-', '_' or '.' only");
  if (trials == 0) throw Error("config.trials: must be at least 1");
  if (models.empty()) throw Error("config: at least one [[model]] is required");
  if (analyses.empty()) throw Error("config.analyses: at least one analysis is required");
  if (dataset.source != "synthetic" && dataset.source != "cifar10") {
    throw Error("dataset.source: expected synthetic or cifar10, got '" + dataset.source + "'");
  }
  if (dataset.source == "cifar10" && dataset.cifar_dir.empty()) throw Error("dataset.cifar_dir: required for cifar10");
  const auto& sc = dataset.synth;
  if (sc.classes < 2) throw Error("dataset.classes: at least 2");
  if (sc.train_per_class == 0 || sc.test_per_class == 0) throw Error("dataset: per-class counts must be positive");
  if (dataset.injection) dataset.injection->validate();
  train.validate();
  std::set<std::string> labels;
  for (const ModelEntry& m : models) {
    if (!safe_label(m.label)) throw Error("model label '" + m.label + "': letters, digits, '-', '_' or '.' only");
    if (!labels.insert(m.label).second) throw Error("model label '" + m.label + "' used twice");
    m.spec.validate();
  }
  labels.clear();
  for (const AttackEntry& a : attacks) {
    if (!safe_label(a.label)) throw Error("attack label '" + a.label + "': letters, digits, '-', '_' or '.' only");
    if (!labels.insert(a.label).second) throw Error("attack label '" + a.label + "' used twice");
    a.cfg.validate();
  }
  const bool needs_attack = wants(Analysis::Spectra) || wants(Analysis::Spearman) || wants(Analysis::Profiles) ||
                            wants(Analysis::Dynamics);
  if (needs_attack && attacks.empty()) throw Error("config: the chosen analyses need at least one [[attack]]");
  if (!dynamics_attack.empty() && !labels.count(dynamics_attack)) {
    throw Error("dynamics.attack: no attack labelled '" + dynamics_attack + "'");
  }
  if (wants(Analysis::Kappa) && !(kappa_k >= 0.0)) throw Error("kappa.k: must be non-negative");
  if (attack_examples == 0) throw Error("config.attack_examples: must be positive");
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(toml::parse_file(path)); }

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("override '" + assignment + "': expected key=value");
  std::string key = assignment.substr(0, eq);
  const json parsed = toml::parse("v = " + assignment.substr(eq + 1), "override");
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = parsed.at("v");
      return;
    }
    json& next = (*node)[part];
    if (next.is_array()) {
      if (next.empty()) throw Error("override '" + key + "': empty table array");
      node = &next.back();
    } else {
      if (next.is_null()) next = json::object();
      node = &next;
    }
    start = dot + 1;
  }
}

// ---------------------------------------------------------------- seeds and builders

std::uint64_t trial_seed(const ExperimentConfig& cfg, std::size_t trial) { return derive_seed(cfg.seed, trial); }

data::Split make_dataset(const ExperimentConfig& cfg, std::size_t trial) {
  const std::uint64_t ts = trial_seed(cfg, trial);
  const DatasetConfig& dc = cfg.dataset;
  data::Split s;
  if (dc.source == "cifar10") {
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back((fs::path(dc.cifar_dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    s.train = data::load_cifar10(train_files, "train");
    s.test = data::load_cifar10({(fs::path(dc.cifar_dir) / "test_batch.bin").string()}, "test");
    if (dc.train_limit) s.train = s.train.head(dc.train_limit);
    if (dc.test_limit) s.test = s.test.head(dc.test_limit);
    for (data::Dataset* d : {&s.train, &s.test}) {
      if (dc.grayscale) *d = data::to_grayscale(*d);
      for (std::size_t i = 0; i < dc.downsample; ++i) *d = data::downsample2(*d);
    }
  } else {
    s = data::synth_dataset(dc.synth, derive_seed(ts, 1));
  }
  if (dc.injection) {
    data::SteganoSpec spec = *dc.injection;
    spec.seed = derive_seed(ts, 2);
    s.train = data::inject_shortcut(s.train, spec);
    s.test = data::inject_shortcut(s.test, spec);
  }
  return s;
}

models::Model make_model(const ExperimentConfig& cfg, std::size_t model, std::size_t trial) {
  return models::build_model(cfg.models.at(model).spec, derive_seed(trial_seed(cfg, trial), 1000 + model));
}

models::TrainConfig make_train_config(const ExperimentConfig& cfg, std::size_t trial) {
  models::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(trial_seed(cfg, trial), 3);
  return tc;
}

// ---------------------------------------------------------------- report rows

double Report::value(const std::string& model, const std::string& trial, const std::string& metric) const {
  for (const MetricRow& r : rows)
    if (r.model == model && r.trial == trial && r.metric == metric) return r.value;
  throw Error("report has no row " + model + "/" + trial + "/" + metric);
}

std::string report_csv(const std::vector<MetricRow>& rows) {
  std::string out = "model,trial,metric,value,std\n";
  for (const MetricRow& r : rows) {
    out += r.model + "," + r.trial + "," + r.metric + "," + format_double(r.value) + "," + format_double(r.std) + "\n";
  }
  return out;
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(where + ": bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto c = line.find(',', start);
    out.push_back(line.substr(start, c == std::string::npos ? std::string::npos : c - start));
    if (c == std::string::npos) return out;
    start = c + 1;
  }
}

}  // namespace

std::vector<MetricRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "model,trial,metric,value,std") throw Error("report csv: bad header");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "report csv line " + std::to_string(lineno);
    if (f.size() != 5) throw Error(where + ": expected 5 fields");
    rows.push_back({f[0], f[1], f[2], parse_double(f[3], where), parse_double(f[4], where)});
  }
  return rows;
}

std::size_t RunResult::failed() const {
  return static_cast<std::size_t>(std::count_if(units.begin(), units.end(), [](const UnitStatus& u) { return !u.ok; }));
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* root = std::getenv("FREQLAB_ARTIFACT_ROOT"); root && *root) return (fs::path(root) / cfg.name).string();
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return (fs::path("runs") / cfg.name).string();
}

// ---------------------------------------------------------------- units

namespace {

using Metrics = std::vector<std::pair<std::string, double>>;

std::string unit_id(const ExperimentConfig& cfg, std::size_t m, std::size_t t) {
  return cfg.models[m].label + "-t" + std::to_string(t);
}

void write_metrics(const fs::path& path, const Metrics& metrics) {
  std::string out = "metric,value\n";
  for (const auto& [k, v] : metrics) out += k + "," + format_double(v) + "\n";
  write_file(path.string(), out);
}

Metrics read_metrics(const fs::path& path) {
  std::istringstream in(read_file(path.string()));
  std::string line;
  std::getline(in, line);
  Metrics out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2) throw Error(path.string() + ": expected metric,value");
    out.emplace_back(f[0], parse_double(f[1], path.string()));
  }
  return out;
}

void write_profile_csv(const fs::path& path, const spectral::EnergyProfile& p) {
  std::string out = "bin,energy\n";
  for (std::size_t i = 0; i < p.bins.size(); ++i) out += std::to_string(i) + "," + format_double(p.bins[i]) + "\n";
  write_file(path.string(), out);
}

plot::Series profile_series(const std::string& name, const spectral::EnergyProfile& p, bool normalize) {
  plot::Series s;
  s.name = name;
  const double total = p.total();
  for (std::size_t i = 0; i < p.bins.size(); ++i) {
    s.x.push_back(static_cast<double>(i));
    s.y.push_back(normalize && total > 0 ? p.bins[i] / total : p.bins[i]);
  }
  return s;
}

void write_grid(const fs::path& dir, const std::string& stem, const spectral::Grid& g) {
  spectral::write_csv_grid((dir / (stem + ".csv")).string(), g);
  spectral::write_pgm((dir / (stem + ".pgm")).string(), g, false);
  spectral::write_pgm((dir / (stem + "_log.pgm")).string(), g, true);
}

double kappa_of_saliency(const models::Model& model, const Params& params, const data::Dataset& probe, double k) {
  const linmap::SaliencySet s = linmap::saliency_beta(model, params, probe);
  spectral::BandEnergy total;
  const std::size_t H = model.spec.height, W = model.spec.width, plane = H * W;
  for (std::size_t i = 0; i < s.gradients.size() / plane; ++i) {
    const auto b = spectral::band_energy(spectral::energy(spectral::dft2(s.gradients.data().subspan(i * plane, plane), H, W)), k);
    total.inside += b.inside;
    total.total += b.total;
  }
  return spectral::kappa_high(total);
}

Metrics run_unit(const ExperimentConfig& cfg, std::size_t m, std::size_t t, const data::Split& split,
                 const fs::path& dir) {
  Metrics out;
  const models::Model model = make_model(cfg, m, t);
  const models::TrainedModel tm = models::train(model, split.train, split.test, make_train_config(cfg, t));
  const Params& best = tm.best();
  out.emplace_back("test_accuracy", tm.test_accuracy[tm.best_epoch]);
  out.emplace_back("train_accuracy", tm.train_accuracy[tm.best_epoch]);
  out.emplace_back("best_epoch", static_cast<double>(tm.best_epoch));
  {
    std::string h = "epoch,train_loss,train_accuracy,test_accuracy\n";
    for (std::size_t e = 0; e < tm.test_accuracy.size(); ++e) {
      h += std::to_string(e) + "," + format_double(tm.train_loss[e]) + "," + format_double(tm.train_accuracy[e]) + "," +
           format_double(tm.test_accuracy[e]) + "\n";
    }
    write_file((dir / "history.csv").string(), h);
  }

  const data::Dataset attack_set = split.test.head(cfg.attack_examples);
  const data::Dataset probe = split.test.head(cfg.probe_examples);
  const bool linear = analysis::is_linear(tm.model);

  if (cfg.wants(Analysis::Kappa)) {
    if (linear) {
      const analysis::ConcentrationReport r = analysis::concentration(tm.model, best, cfg.kappa_k);
      out.emplace_back("kappa_beta", r.kappa_beta.empty() ? r.kappa_full : r.kappa_beta.back());
      out.emplace_back("kappa_full", r.kappa_full);
      for (std::size_t l = 0; l < r.kappa_beta.size(); ++l) {
        out.emplace_back("kappa_beta_l" + std::to_string(l + 1), r.kappa_beta[l]);
        out.emplace_back("kappa_w_l" + std::to_string(l + 1), r.kappa_w[l]);
      }
    } else {
      const double k = kappa_of_saliency(tm.model, best, probe, cfg.kappa_k);
      out.emplace_back("kappa_beta", k);
      out.emplace_back("kappa_full", k);
    }
  }

  spectral::Grid beta;
  const bool need_beta = cfg.wants(Analysis::Norms) || cfg.wants(Analysis::Spearman) || cfg.wants(Analysis::Spectra);
  if (need_beta) {
    beta = analysis::beta_spectrum(tm.model, best, probe);
    write_grid(dir, "beta", beta);
    out.emplace_back("beta_l1", analysis::grid_l1(beta));
    out.emplace_back("beta_l2", spectral::pq_norm(beta.values, 2.0));
    out.emplace_back("beta_pq", spectral::pq_norm(beta.values, 2.0 / static_cast<double>(tm.model.spec.layers.size())));
    out.emplace_back("beta_centroid", analysis::magnitude_centroid(beta));
  }

  const bool run_attacks = !cfg.attacks.empty() && (cfg.wants(Analysis::Spectra) || cfg.wants(Analysis::Norms) ||
                                                    cfg.wants(Analysis::Spearman) || cfg.wants(Analysis::Profiles));
  if (run_attacks) {
    std::vector<attacks::AttackConfig> configs;
    for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
      attacks::AttackConfig c = cfg.attacks[a].cfg;
      c.seed = derive_seed(trial_seed(cfg, t), 4 + a);
      configs.push_back(c);
    }
    const attacks::PerturbationSet set = attacks::attack_suite(tm.model, best, attack_set, configs);
    for (std::size_t a = 0; a < configs.size(); ++a) {
      const std::string& label = cfg.attacks[a].label;
      const attacks::SuccessRow& row = set.table[a];
      if (row.failed == row.attempted) throw Error("attack " + label + ": " + set.results[a].front().error);
      const spectral::Grid d = analysis::delta_spectrum(set, a);
      write_grid(dir, "delta_" + label, d);
      out.emplace_back("success_" + label, row.success_rate);
      out.emplace_back("delta_l1_" + label, analysis::grid_l1(d));
      out.emplace_back("delta_l2_" + label, row.mean_l2);
      out.emplace_back("delta_linf_" + label, row.mean_linf);
      out.emplace_back("delta_centroid_" + label, analysis::magnitude_centroid(d));
      if (cfg.wants(Analysis::Spearman)) {
        const auto rho = spectral::spearman(beta.values, d.values);
        out.emplace_back("spearman_" + label, rho ? *rho : std::numeric_limits<double>::quiet_NaN());
      }
      if (cfg.wants(Analysis::Profiles)) {
        const spectral::Grid e = analysis::squared(d);
        const auto radial = spectral::radial_profile(e);
        const auto angular = spectral::angular_profile(e);
        write_profile_csv(dir / ("radial_" + label + ".csv"), radial);
        write_profile_csv(dir / ("angular_" + label + ".csv"), angular);
        plot::write_svg((dir / ("radial_" + label + ".svg")).string(),
                        {"radial energy of mean |delta hat|, " + label, "radius", "energy fraction",
                         {profile_series(cfg.models[m].label, radial, true)}});
        plot::write_svg((dir / ("angular_" + label + ".svg")).string(),
                        {"angular energy of mean |delta hat|, " + label, "angle (deg)", "energy fraction",
                         {profile_series(cfg.models[m].label, angular, true)}});
      }
    }
  }

  if (cfg.wants(Analysis::Dynamics)) {
    std::size_t a = 0;
    while (!cfg.dynamics_attack.empty() && cfg.attacks[a].label != cfg.dynamics_attack) ++a;
    attacks::AttackConfig c = cfg.attacks[a].cfg;
    c.seed = derive_seed(trial_seed(cfg, t), 4 + a);
    std::vector<std::size_t> epochs;
    if (cfg.dynamics_every_epoch) {
      for (std::size_t e = 0; e < tm.checkpoints.size(); ++e) epochs.push_back(e);
    } else {
      epochs.push_back(0);
      if (tm.best_epoch != 0) epochs.push_back(tm.best_epoch);
    }
    const analysis::DynamicsTrack track = analysis::dynamics_track(tm, c, attack_set, epochs);
    std::string csv = "epoch,test_accuracy,centroid,mean_l2,mean_linf,success_rate\n";
    plot::Series cen{"centroid", {}, {}}, l2{"mean l2", {}, {}}, linf{"mean linf", {}, {}};
    for (const auto& p : track.points) {
      csv += std::to_string(p.epoch) + "," + format_double(p.test_accuracy) + "," + format_double(p.centroid) + "," +
             format_double(p.mean_l2) + "," + format_double(p.mean_linf) + "," + format_double(p.success_rate) + "\n";
      const double x = static_cast<double>(p.epoch);
      cen.x.push_back(x);
      cen.y.push_back(p.centroid);
      l2.x.push_back(x);
      l2.y.push_back(p.mean_l2);
      linf.x.push_back(x);
      linf.y.push_back(p.mean_linf);
      write_grid(dir, "dynamics_delta_e" + std::to_string(p.epoch), p.spectrum);
    }
    write_file((dir / "dynamics.csv").string(), csv);
    plot::write_svg((dir / "dynamics_centroid.svg").string(),
                    {"radial centroid of mean |delta hat|", "epoch", "centroid", {cen}});
    plot::write_svg((dir / "dynamics_norms.svg").string(), {"perturbation norms", "epoch", "norm", {l2, linf}});
    const auto& first = track.points.front();
    const auto& last = track.points.back();
    out.emplace_back("dyn_centroid_first", first.centroid);
    out.emplace_back("dyn_centroid_best", last.centroid);
    out.emplace_back("dyn_l2_first", first.mean_l2);
    out.emplace_back("dyn_l2_best", last.mean_l2);
    out.emplace_back("dyn_linf_first", first.mean_linf);
    out.emplace_back("dyn_linf_best", last.mean_linf);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir) {
  cfg.validate();
  const fs::path root(dir);
  fs::create_directories(root / "units");
  write_file((root / "config.json").string(), cfg.source.dump(2) + "\n");
  RunResult result;
  result.dir = dir;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    std::optional<data::Split> split;
    std::string data_error;
    try {
      split = make_dataset(cfg, t);
    } catch (const std::exception& e) {
      data_error = std::string("dataset: ") + e.what();
    }
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      UnitStatus st;
      st.id = unit_id(cfg, m, t);
      const fs::path udir = root / "units" / st.id;
      fs::remove_all(udir);
      fs::create_directories(udir);
      try {
        if (!split) throw Error(data_error);
        write_metrics(udir / "metrics.csv", run_unit(cfg, m, t, *split, udir));
      } catch (const std::exception& e) {
        st.ok = false;
        st.error = e.what();
        write_file((udir / "error.txt").string(), st.error + "\n");
      }
      result.units.push_back(st);
    }
  }
  result.report = emit_report(dir);
  return result;
}

Report emit_report(const std::string& dir) {
  const fs::path root(dir);
  const ExperimentConfig cfg = parse_config(json::parse(read_file((root / "config.json").string())));
  Report report;
  if (cfg.analyses.empty()) {
    json manifest = {{"name", cfg.name},           {"seed", cfg.seed},
                     {"trials", cfg.trials},       {"code_version", code_version()},
                     {"config_fnv1a64", data::hex64(fnv1a(cfg.source.dump()))},
                     {"analyses", json::array()},  {"units", json::array()},
                     {"files", json::array()},     {"missing", json::array()}};
    write_file((root / "manifest.json").string(), manifest.dump(2) + "\n");
    return report;
  }
  json units = json::array();
  const fs::path shared = root / "analysis";
  fs::create_directories(shared);

  std::vector<std::vector<std::optional<Metrics>>> all(cfg.models.size());
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const std::string id = unit_id(cfg, m, t);
      const fs::path udir = root / "units" / id;
      json u = {{"id", id}, {"model", cfg.models[m].label}, {"trial", t}};
      if (fs::exists(udir / "error.txt")) {
        std::string err = read_file((udir / "error.txt").string());
        if (!err.empty() && err.back() == '\n') err.pop_back();
        u["status"] = "failed";
        u["error"] = err;
        all[m].push_back(std::nullopt);
      } else if (!fs::exists(udir / "metrics.csv")) {
        u["status"] = "missing";
        report.missing.push_back("units/" + id + "/metrics.csv");
        all[m].push_back(std::nullopt);
      } else {
        u["status"] = "ok";
        all[m].push_back(read_metrics(udir / "metrics.csv"));
      }
      units.push_back(u);
    }
  }

  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    const std::string& label = cfg.models[m].label;
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> values;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      if (!all[m][t]) continue;
      for (const auto& [k, v] : *all[m][t]) {
        report.rows.push_back({label, std::to_string(t), k, v, 0.0});
        if (!values.count(k)) order.push_back(k);
        values[k].push_back(v);
      }
    }
    for (const std::string& k : order) {
      const auto& v = values[k];
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      report.rows.push_back({label, cfg.trials == 1 ? "single-run" : "mean", k, mean, sd});
    }
  }
  write_file((root / "report.csv").string(), report_csv(report.rows));

  // Shared plots: trial-averaged perturbation spectra and radial profiles per attack.
  for (const AttackEntry& a : cfg.attacks) {
    plot::LinePlot radial{"radial energy of mean |delta hat|, " + a.label, "radius", "energy fraction", {}};
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      std::optional<spectral::Grid> mean;
      std::size_t n = 0;
      for (std::size_t t = 0; t < cfg.trials; ++t) {
        const fs::path p = root / "units" / unit_id(cfg, m, t) / ("delta_" + a.label + ".csv");
        if (!all[m][t]) continue;
        if (!fs::exists(p)) continue;
        const spectral::Grid g = spectral::read_csv_grid(p.string());
        if (!mean) mean = spectral::Grid{g.rows, g.cols, std::vector<double>(g.values.size(), 0.0)};
        for (std::size_t i = 0; i < g.values.size(); ++i) mean->values[i] += g.values[i];
        ++n;
      }
      if (!mean) continue;
      for (double& v : mean->values) v /= static_cast<double>(n);
      write_grid(shared, "delta_" + a.label + "_" + cfg.models[m].label, *mean);
      radial.series.push_back(profile_series(cfg.models[m].label, spectral::radial_profile(analysis::squared(*mean)), true));
    }
    if (!radial.series.empty()) plot::write_svg((shared / ("radial_" + a.label + ".svg")).string(), radial);
  }
  if (cfg.wants(Analysis::Dynamics)) {
    plot::LinePlot dyn{"radial centroid of mean |delta hat| over training", "epoch", "centroid", {}};
    for (std::size_t m = 0; m < cfg.models.size(); ++m)
      for (std::size_t t = 0; t < cfg.trials; ++t) {
        const fs::path p = root / "units" / unit_id(cfg, m, t) / "dynamics.csv";
        if (!all[m][t] || !fs::exists(p)) continue;
        std::istringstream in(read_file(p.string()));
        std::string line;
        std::getline(in, line);
        plot::Series s{unit_id(cfg, m, t), {}, {}};
        while (std::getline(in, line)) {
          const auto f = split_csv(line);
          s.x.push_back(parse_double(f[0], p.string()));
          s.y.push_back(parse_double(f[2], p.string()));
        }
        dyn.series.push_back(std::move(s));
      }
    plot::write_svg((shared / "dynamics_centroid.svg").string(), dyn);
  }

  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json index = json::array();
  for (const std::string& f : files) {
    const std::string bytes = read_file((root / f).string());
    index.push_back({{"path", f}, {"bytes", bytes.size()}, {"fnv1a64", data::hex64(fnv1a(bytes))}});
  }
  report.files = files;
  json manifest = {{"name", cfg.name},
                   {"seed", cfg.seed},
                   {"trials", cfg.trials},
                   {"code_version", code_version()},
                   {"config_fnv1a64", data::hex64(fnv1a(cfg.source.dump()))},
                   {"analyses", json::array()},
                   {"units", units},
                   {"files", index},
                   {"missing", report.missing}};
  for (Analysis a : cfg.analyses) manifest["analyses"].push_back(analysis_name(a));
  write_file((root / "manifest.json").string(), manifest.dump(2) + "\n");
  return report;
}

}  // namespace freqlab::experiment
