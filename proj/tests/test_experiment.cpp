#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sys/wait.h>

#include "freqlab/analysis.hpp"
#include "freqlab/checkpoint.hpp"
#include "freqlab/experiment.hpp"
#include "freqlab/toml.hpp"

using namespace freqlab;
namespace ex = freqlab::experiment;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* kTiny = R"(
name = "tiny"
seed = 4
trials = 2
analyses = ["spectra", "norms", "kappa", "spearman", "profiles"]
attack_examples = 6
probe_examples = 6

[dataset]
height = 8
width = 8
classes = 2
train_per_class = 8
test_per_class = 3

[train]
epochs = 2
max_lr = 0.05
decay = 1.0
batch_size = 8

[[model]]
label = "FWC"
family = "fwc"

[[model]]
label = "BWC"
family = "bwc"
kernel = 3

[[attack]]
label = "linf"
norm = "linf"
epsilon = 0.05
steps = 5
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("freqlab_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string config_error(const std::string& text) {
  try {
    ex::config_from_json(toml::parse(text));
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::map<std::string, std::string> csvs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path().string());
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FREQLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  const ex::ExperimentConfig cfg = ex::config_from_json(toml::parse(kTiny));
  CHECK(cfg.name == "tiny");
  CHECK(cfg.trials == 2);
  REQUIRE(cfg.models.size() == 2);
  CHECK(cfg.models[1].spec.layers.front().kernel == 3);
  CHECK(cfg.wants(ex::Analysis::Kappa));
  CHECK_FALSE(cfg.wants(ex::Analysis::Dynamics));

  CHECK(config_error(std::string(kTiny) + "\n[train]\nepoch = 3\n").find("") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = ["norms"]
colour = 1
[[model]]
label = "m"
family = "fc"
)").find("unknown key 'colour'") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = ["norms"]
[[model]]
label = "m"
family = "fc"
widht = 3
)").find("widht") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = []
[[model]]
label = "m"
family = "fc"
)").find("analyses") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = ["norms"]
)").find("model") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = ["spectra"]
[[model]]
label = "m"
family = "fc"
)").find("attack") != std::string::npos);
  CHECK(config_error(R"(name = "a"
analyses = ["norms"]
[[model]]
label = "m"
family = "mlp"
)").find("family") != std::string::npos);
  CHECK(config_error(R"(name = "bad name"
analyses = ["norms"]
[[model]]
label = "m"
family = "fc"
)").find("name") != std::string::npos);
}

TEST_CASE("overrides edit scalars and the last table of an array") {
  json tree = toml::parse(kTiny);
  ex::apply_override(tree, "train.epochs=7");
  ex::apply_override(tree, "model.kernel=5");
  ex::apply_override(tree, "dataset.signature=\"band\"");
  const ex::ExperimentConfig cfg = ex::config_from_json(tree);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.models[1].spec.layers.front().kernel == 5);
  CHECK(cfg.dataset.synth.signature == data::Signature::Band);
  CHECK_THROWS_AS(ex::apply_override(tree, "train.epochs"), Error);
}

TEST_CASE("report csv parses back to identical rows") {
  const std::vector<ex::MetricRow> rows{
      {"FC", "0", "beta_l1", 0.1 + 0.2, 0.0},
      {"FC", "mean", "beta_l1", 1.0 / 3.0, 1e-300},
      {"BWC", "single-run", "spearman_linf", std::numeric_limits<double>::infinity(), 0.0},
      {"BWC", "1", "delta_l2_linf", -123456.789e10, 5e-324}};
  const std::string text = ex::report_csv(rows);
  CHECK(text.rfind("model,trial,metric,value,std\n", 0) == 0);
  CHECK(ex::parse_report_csv(text) == rows);
  CHECK(ex::report_csv(ex::parse_report_csv(text)) == text);
  CHECK_THROWS_AS(ex::parse_report_csv("model,trial\n"), Error);
  CHECK_THROWS_AS(ex::parse_report_csv("model,trial,metric,value,std\nA,0,m,notanumber,0\n"), Error);
}

TEST_CASE("emit_report aggregates trials with the unbiased std and lists missing units") {
  TempDir tmp("aggregate");
  json tree = toml::parse(kTiny);
  tree["trials"] = 3;
  write_file((tmp.path / "config.json").string(), tree.dump(2) + "\n");
  const double v[3] = {1.0, 2.0, 4.0};
  for (int t = 0; t < 3; ++t) {
    fs::create_directories(tmp.path / "units" / ("FWC-t" + std::to_string(t)));
    write_file((tmp.path / "units" / ("FWC-t" + std::to_string(t)) / "metrics.csv").string(),
               "metric,value\nx," + std::to_string(v[t]) + "\n");
  }
  fs::create_directories(tmp.path / "units" / "BWC-t0");
  write_file((tmp.path / "units" / "BWC-t0" / "error.txt").string(), "boom\n");
  const ex::Report r = ex::emit_report(tmp.path.string());
  const double mean = 7.0 / 3.0;
  const double sd = std::sqrt(((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (4 - mean) * (4 - mean)) / 2.0);
  CHECK(r.value("FWC", "mean", "x") == doctest::Approx(mean).epsilon(1e-15));
  bool found = false;
  for (const auto& row : r.rows)
    if (row.model == "FWC" && row.trial == "mean") {
      CHECK(row.std == doctest::Approx(sd).epsilon(1e-15));
      found = true;
    }
  CHECK(found);
  CHECK(r.missing == std::vector<std::string>{"units/BWC-t1/metrics.csv", "units/BWC-t2/metrics.csv"});
  const json manifest = json::parse(read_file((tmp.path / "manifest.json").string()));
  CHECK(manifest["units"][3]["status"] == "failed");
  CHECK(manifest["units"][3]["error"] == "boom");
  CHECK(ex::parse_report_csv(read_file((tmp.path / "report.csv").string())) == r.rows);
}

TEST_CASE("single trial is flagged with zero std") {
  TempDir tmp("single");
  json tree = toml::parse(kTiny);
  tree["trials"] = 1;
  write_file((tmp.path / "config.json").string(), tree.dump(2) + "\n");
  fs::create_directories(tmp.path / "units" / "FWC-t0");
  write_file((tmp.path / "units" / "FWC-t0" / "metrics.csv").string(), "metric,value\nx,3\n");
  const ex::Report r = ex::emit_report(tmp.path.string());
  CHECK(r.value("FWC", "single-run", "x") == 3.0);
  for (const auto& row : r.rows) CHECK(row.std == 0.0);
}

TEST_CASE("empty analysis list emits the manifest alone") {
  TempDir tmp("manifest_only");
  json tree = toml::parse(kTiny);
  tree["analyses"] = json::array();
  write_file((tmp.path / "config.json").string(), tree.dump(2) + "\n");
  const ex::Report r = ex::emit_report(tmp.path.string());
  CHECK(r.rows.empty());
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(tmp.path)) files.insert(e.path().filename().string());
  CHECK(files == std::set<std::string>{"config.json", "manifest.json"});
  CHECK(json::parse(read_file((tmp.path / "manifest.json").string()))["files"].empty());
}

TEST_CASE("end-to-end run is deterministic and complete") {
  TempDir a("run_a"), b("run_b");
  const ex::ExperimentConfig cfg = ex::config_from_json(toml::parse(kTiny));
  const ex::RunResult ra = ex::run_experiment(cfg, a.path.string());
  const ex::RunResult rb = ex::run_experiment(cfg, b.path.string());
  CHECK(ra.failed() == 0);
  CHECK(csvs(a.path) == csvs(b.path));
  CHECK(read_file((a.path / "manifest.json").string()) == read_file((b.path / "manifest.json").string()));

  // Every metric appears exactly once per model x trial.
  std::map<std::string, int> seen;
  for (const auto& row : ra.report.rows) ++seen[row.model + "/" + row.trial + "/" + row.metric];
  for (const auto& [k, n] : seen) CHECK_MESSAGE(n == 1, k);
  for (const char* m : {"FWC", "BWC"})
    for (const char* metric : {"kappa_beta", "beta_l1", "delta_l1_linf", "spearman_linf", "test_accuracy"}) {
      CHECK_NOTHROW(ra.report.value(m, "0", metric));
      CHECK_NOTHROW(ra.report.value(m, "mean", metric));
    }
  for (const char* f : {"units/FWC-t0/beta.pgm", "units/FWC-t0/beta_log.pgm", "units/BWC-t1/delta_linf.csv",
                        "units/BWC-t1/radial_linf.svg", "analysis/radial_linf.svg", "report.csv", "config.json"})
    CHECK_MESSAGE(fs::exists(a.path / f), f);

  // Re-emitting from the artifacts reproduces the report.
  CHECK(ex::emit_report(a.path.string()).rows == ra.report.rows);
  fs::remove(a.path / "units" / "FWC-t1" / "metrics.csv");
  const ex::Report partial = ex::emit_report(a.path.string());
  CHECK(partial.missing == std::vector<std::string>{"units/FWC-t1/metrics.csv"});
}

TEST_CASE("artifact root override") {
  ex::ExperimentConfig cfg = ex::config_from_json(toml::parse(kTiny));
  cfg.output_dir = "somewhere";
  unsetenv("FREQLAB_ARTIFACT_ROOT");
  CHECK(ex::resolve_output_dir(cfg) == "somewhere");
  setenv("FREQLAB_ARTIFACT_ROOT", "/tmp/root", 1);
  CHECK(ex::resolve_output_dir(cfg) == "/tmp/root/tiny");
  unsetenv("FREQLAB_ARTIFACT_ROOT");
  cfg.output_dir.clear();
  CHECK(ex::resolve_output_dir(cfg) == "runs/tiny");
}

TEST_CASE("dynamics needs two checkpoints and skips missing ones") {
  const ex::ExperimentConfig cfg = ex::config_from_json(toml::parse(kTiny));
  const data::Split split = ex::make_dataset(cfg, 0);
  models::TrainedModel tm;
  tm.model = ex::make_model(cfg, 1, 0);
  tm.checkpoints = {tm.model.params};
  tm.test_accuracy = {0.5};
  attacks::AttackConfig ac = cfg.attacks[0].cfg;
  CHECK_THROWS_AS(analysis::dynamics_track(tm, ac, split.test, {0}), Error);
  tm.checkpoints.push_back(tm.model.params);
  tm.test_accuracy.push_back(0.5);
  const analysis::DynamicsTrack track = analysis::dynamics_track(tm, ac, split.test, {0, 1, 5});
  CHECK(track.points.size() == 2);
  REQUIRE(track.warnings.size() == 1);
  CHECK(track.warnings[0].find("epoch 5") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  TempDir tmp("cli");
  const fs::path good = tmp.path / "good.toml", bad = tmp.path / "bad.toml";
  write_file(good.string(), kTiny);
  write_file(bad.string(), std::string(kTiny) + "\nbogus = 1\n");
  CHECK(run_cli("experiment -c " + bad.string() + " -o " + (tmp.path / "x").string()) == 1);
  CHECK(run_cli("experiment -c " + good.string() + " --set train.epochs=-1 -o " + (tmp.path / "x").string()) == 1);
  CHECK(run_cli("nosuchcommand") == 1);
  CHECK(run_cli("experiment -c " + good.string() + " --set trials=1 -o " + (tmp.path / "run").string()) == 0);
  CHECK(fs::exists(tmp.path / "run" / "manifest.json"));
  fs::remove(tmp.path / "run" / "units" / "BWC-t0" / "metrics.csv");
  CHECK(run_cli("report " + (tmp.path / "run").string()) == 2);
}
