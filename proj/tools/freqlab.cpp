#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "freqlab/analysis.hpp"
#include "freqlab/checkpoint.hpp"
#include "freqlab/experiment.hpp"
#include "freqlab/format.hpp"
#include "freqlab/plot.hpp"
#include "freqlab/toml.hpp"

using namespace freqlab;
namespace fs = std::filesystem;
namespace ex = freqlab::experiment;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0, kConfigError = 1, kRunError = 2;

struct ConfigError : Error {
  using Error::Error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c, bool config_required) {
  auto* opt = app->add_option("-c,--config", c.config, "experiment config (TOML subset)");
  if (config_required) opt->required();
  app->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5")->take_all();
}

/// Parsed tree with overrides; an ad-hoc skeleton when no file is given.
json load_tree(const Common& c) {
  json tree;
  try {
    tree = c.config.empty() ? json{{"name", "adhoc"}, {"analyses", {"norms"}}} : toml::parse_file(c.config);
    for (const std::string& s : c.sets) ex::apply_override(tree, s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return tree;
}

ex::ExperimentConfig to_config(const json& tree) {
  try {
    return ex::config_from_json(tree);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::size_t model_index(const ex::ExperimentConfig& cfg, const std::string& label) {
  if (label.empty()) return 0;
  for (std::size_t i = 0; i < cfg.models.size(); ++i)
    if (cfg.models[i].label == label) return i;
  throw ConfigError("no model labelled '" + label + "'");
}

void print_table(const attacks::PerturbationSet& set) {
  std::printf("%-48s %9s %9s %9s %9s %9s\n", "config", "attempted", "success", "mean_l1", "mean_l2", "mean_linf");
  for (const auto& r : set.table) {
    std::printf("%-48s %9zu %9.4f %9.4f %9.4f %9.4f\n", r.config.c_str(), r.attempted, r.success_rate, r.mean_l1,
                r.mean_l2, r.mean_linf);
  }
}

void write_dataset(const std::string& stem, const data::Dataset& ds, const data::InjectionStats& stats) {
  const bool cifar_shape = ds.channels() == 3 && ds.height() == data::kCifarSide && ds.width() == data::kCifarSide;
  if (cifar_shape) {
    write_file(stem + ".bin", data::encode_cifar10(ds));
  } else {
    Tensor labels(Shape{ds.size()});
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = static_cast<double>(ds.labels[i]);
    save_tensors(stem + ".bin", {{"images", ds.images}, {"labels", labels}});
  }
  json side = json::parse(data::provenance_json(ds));
  side["format"] = cifar_shape ? "cifar10-binary" : "freqlab-tensors";
  side["clamped_pixels"] = stats.clamped;
  side["clamped_fraction"] = stats.clamped_fraction();
  write_file(stem + ".json", side.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-domain analysis of implicit bias in linear and convolutional networks"};
  app.require_subcommand(1);

  Common exp_c;
  std::string exp_out;
  auto* exp = app.add_subcommand("experiment", "run a config end to end and emit the report");
  add_common(exp, exp_c, true);
  exp->add_option("-o,--out", exp_out, "artifact directory (default: $FREQLAB_ARTIFACT_ROOT/<name> or output_dir)");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "re-emit report.csv, plots and manifest from a run directory");
  rep->add_option("dir", report_dir, "run directory")->required();

  Common train_c;
  std::string train_model, train_out, family;
  std::size_t train_trial = 0, depth = 1, kernel = 3, channels = 1;
  auto* tr = app.add_subcommand("train", "train one model and save its best checkpoint");
  add_common(tr, train_c, false);
  tr->add_option("--model", train_model, "model label from the config (default: first)");
  tr->add_option("--trial", train_trial, "trial index used for seeding");
  tr->add_option("--family", family, "ad-hoc model: fc, lc, fwc, bwc, vit or vitloc");
  tr->add_option("--depth", depth, "ad-hoc model depth");
  tr->add_option("--kernel", kernel, "ad-hoc kernel size (lc, bwc) or patch size (vit)");
  tr->add_option("--channels", channels, "ad-hoc hidden channels");
  tr->add_option("-o,--out", train_out, "checkpoint stem")->required();

  Common atk_c;
  std::string atk_ckpt, atk_out;
  std::size_t atk_trial = 0;
  auto* atk = app.add_subcommand("attack", "attack a checkpoint with the config's attacks");
  add_common(atk, atk_c, true);
  atk->add_option("--checkpoint", atk_ckpt, "checkpoint stem")->required();
  atk->add_option("--trial", atk_trial, "trial whose test split is attacked");
  atk->add_option("-o,--out", atk_out, "perturbation stem")->required();

  Common beta_c;
  std::string beta_ckpt, beta_out;
  double beta_k = 3.0;
  std::size_t beta_trial = 0;
  auto* bet = app.add_subcommand("beta", "end-to-end linear map or saliency spectrum of a checkpoint");
  add_common(bet, beta_c, false);
  bet->add_option("--checkpoint", beta_ckpt, "checkpoint stem")->required();
  bet->add_option("--k", beta_k, "low-frequency region width for kappa_high");
  bet->add_option("--trial", beta_trial, "trial whose test split probes nonlinear models");
  bet->add_option("-o,--out", beta_out, "output directory")->required();

  std::string spec_in, spec_out;
  auto* spc = app.add_subcommand("spectrum", "mean perturbation spectra and energy profiles");
  spc->add_option("--perturbations", spec_in, "perturbation stem")->required();
  spc->add_option("-o,--out", spec_out, "output directory")->required();

  Common inj_c;
  std::string inj_out;
  std::size_t inj_trial = 0;
  auto* inj = app.add_subcommand("inject", "write the config's dataset with its shortcut injection");
  add_common(inj, inj_c, true);
  inj->add_option("--trial", inj_trial, "trial index used for seeding");
  inj->add_option("-o,--out", inj_out, "output stem; writes <stem>_train and <stem>_test")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (exp->parsed()) {
      const ex::ExperimentConfig cfg = to_config(load_tree(exp_c));
      const std::string dir = exp_out.empty() ? ex::resolve_output_dir(cfg) : exp_out;
      const ex::RunResult r = ex::run_experiment(cfg, dir);
      for (const auto& u : r.units) {
        std::printf("%-24s %s%s%s\n", u.id.c_str(), u.ok ? "ok" : "FAILED", u.ok ? "" : ": ", u.error.c_str());
      }
      std::printf("wrote %s (%zu files)\n", dir.c_str(), r.report.files.size());
      return r.failed() ? kRunError : kOk;
    }
    if (rep->parsed()) {
      const ex::Report r = ex::emit_report(report_dir);
      for (const auto& m : r.missing) std::fprintf(stderr, "missing: %s\n", m.c_str());
      std::printf("wrote %s/report.csv (%zu rows)\n", report_dir.c_str(), r.rows.size());
      return r.missing.empty() ? kOk : kRunError;
    }
    if (tr->parsed()) {
      json tree = load_tree(train_c);
      if (!family.empty()) {
        json m = {{"label", family}, {"family", family}};
        if (family == "vit" || family == "vitloc") {
          m["patch"] = kernel;
        } else {
          m["depth"] = depth;
          m["kernel"] = kernel;
          m["channels"] = channels;
        }
        tree["model"] = json::array({m});
      }
      const ex::ExperimentConfig cfg = to_config(tree);
      const std::size_t mi = model_index(cfg, train_model);
      const data::Split split = ex::make_dataset(cfg, train_trial);
      const models::TrainedModel tm = models::train(ex::make_model(cfg, mi, train_trial), split.train, split.test,
                                                    ex::make_train_config(cfg, train_trial));
      models::save_checkpoint(train_out, tm.model, tm.best());
      std::string h = "epoch,train_loss,train_accuracy,test_accuracy\n";
      for (std::size_t e = 0; e < tm.test_accuracy.size(); ++e) {
        h += std::to_string(e) + "," + format_double(tm.train_loss[e]) + "," + format_double(tm.train_accuracy[e]) +
             "," + format_double(tm.test_accuracy[e]) + "\n";
      }
      write_file(train_out + "_history.csv", h);
      std::printf("%s: best epoch %zu, train %.4f, test %.4f -> %s\n", cfg.models[mi].label.c_str(), tm.best_epoch,
                  tm.train_accuracy[tm.best_epoch], tm.test_accuracy[tm.best_epoch], train_out.c_str());
      return kOk;
    }
    if (atk->parsed()) {
      const ex::ExperimentConfig cfg = to_config(load_tree(atk_c));
      if (cfg.attacks.empty()) throw ConfigError("config has no [[attack]] entries");
      const auto [model, params] = models::load_checkpoint(atk_ckpt);
      const data::Split split = ex::make_dataset(cfg, atk_trial);
      std::vector<attacks::AttackConfig> configs;
      for (const auto& a : cfg.attacks) configs.push_back(a.cfg);
      const attacks::PerturbationSet set =
          attacks::attack_suite(model, params, split.test.head(cfg.attack_examples), configs);
      attacks::save_perturbations(atk_out, set);
      print_table(set);
      for (const auto& r : set.table)
        if (r.failed) return kRunError;
      return kOk;
    }
    if (bet->parsed()) {
      const auto [model, params] = models::load_checkpoint(beta_ckpt);
      fs::create_directories(beta_out);
      const fs::path out(beta_out);
      data::Dataset probe;
      if (!analysis::is_linear(model)) {
        if (beta_c.config.empty()) throw ConfigError("nonlinear model: pass --config so the test split can probe it");
        const ex::ExperimentConfig cfg = to_config(load_tree(beta_c));
        probe = ex::make_dataset(cfg, beta_trial).test.head(cfg.probe_examples);
      }
      const spectral::Grid g = analysis::beta_spectrum(model, params, probe);
      spectral::write_csv_grid((out / "beta.csv").string(), g);
      spectral::write_pgm((out / "beta.pgm").string(), g, false);
      spectral::write_pgm((out / "beta_log.pgm").string(), g, true);
      json j = {{"beta_l1", analysis::grid_l1(g)},
                {"beta_l2", spectral::pq_norm(g.values, 2.0)},
                {"beta_pq", spectral::pq_norm(g.values, 2.0 / static_cast<double>(model.spec.layers.size()))},
                {"centroid", analysis::magnitude_centroid(g)}};
      if (analysis::is_linear(model)) {
        const auto r = analysis::concentration(model, params, beta_k);
        j["k"] = r.k;
        j["kappa_beta"] = r.kappa_beta;
        j["kappa_w"] = r.kappa_w;
        j["kappa_full"] = r.kappa_full;
      }
      write_file((out / "beta.json").string(), j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
      return kOk;
    }
    if (spc->parsed()) {
      const attacks::PerturbationSet set = attacks::load_perturbations(spec_in);
      fs::create_directories(spec_out);
      const fs::path out(spec_out);
      for (std::size_t c = 0; c < set.configs.size(); ++c) {
        const std::string name = set.configs[c].name();
        const spectral::Grid g = analysis::delta_spectrum(set, c);
        spectral::write_csv_grid((out / (name + ".csv")).string(), g);
        spectral::write_pgm((out / (name + ".pgm")).string(), g, false);
        spectral::write_pgm((out / (name + "_log.pgm")).string(), g, true);
        const spectral::Grid e = analysis::squared(g);
        const auto radial = spectral::radial_profile(e);
        const auto angular = spectral::angular_profile(e);
        plot::Series rs{name, {}, {}}, as{name, {}, {}};
        for (std::size_t i = 0; i < radial.bins.size(); ++i) {
          rs.x.push_back(static_cast<double>(i));
          rs.y.push_back(radial.bins[i]);
        }
        for (std::size_t i = 0; i < angular.bins.size(); ++i) {
          as.x.push_back(static_cast<double>(i));
          as.y.push_back(angular.bins[i]);
        }
        plot::write_svg((out / (name + "_radial.svg")).string(), {"radial energy", "radius", "energy", {rs}});
        plot::write_svg((out / (name + "_angular.svg")).string(), {"angular energy", "angle (deg)", "energy", {as}});
        std::printf("%-48s l1 %.6g centroid %.6g\n", name.c_str(), analysis::grid_l1(g), analysis::magnitude_centroid(g));
      }
      return kOk;
    }
    if (inj->parsed()) {
      const ex::ExperimentConfig cfg = to_config(load_tree(inj_c));
      if (!cfg.dataset.injection) throw ConfigError("config has no [injection] table");
      ex::ExperimentConfig clean = cfg;
      clean.dataset.injection.reset();
      const data::Split base = ex::make_dataset(clean, inj_trial);
      data::SteganoSpec spec = *cfg.dataset.injection;
      spec.seed = derive_seed(ex::trial_seed(cfg, inj_trial), 2);
      for (const auto& [ds, tag] : {std::pair{&base.train, "train"}, std::pair{&base.test, "test"}}) {
        data::InjectionStats stats;
        const data::Dataset out = data::inject_shortcut(*ds, spec, &stats);
        write_dataset(inj_out + "_" + tag, out, stats);
        std::printf("%s: %zu images, clamped fraction %.6f\n", tag, out.size(), stats.clamped_fraction());
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRunError;
  }
  return kOk;
}
