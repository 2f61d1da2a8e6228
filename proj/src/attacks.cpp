#include "freqlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "freqlab/checkpoint.hpp"
#include "freqlab/format.hpp"
#include "freqlab/rng.hpp"

namespace freqlab::attacks {

using nlohmann::ordered_json;

const char* norm_name(Norm n) {
  switch (n) {
    case Norm::Linf: return "linf";
    case Norm::L2: return "l2";
    case Norm::L1: return "l1";
  }
  return "?";
}

Norm parse_norm(const std::string& s) {
  std::string t = s;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "linf" || t == "l-inf" || t == "inf") return Norm::Linf;
  if (t == "l2" || t == "2") return Norm::L2;
  if (t == "l1" || t == "1") return Norm::L1;
  throw Error("unknown attack norm '" + s + "' (expected linf, l2 or l1)");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error("attack config: epsilon must be positive");
  if (!(rate > 0.0) || !std::isfinite(rate)) throw Error("attack config: rate must be positive");
  if (steps == 0) throw Error("attack config: steps must be at least 1");
  if (!(pixel_lo < pixel_hi)) throw Error("attack config: empty pixel range");
}

std::string AttackConfig::name() const {
  return std::string(norm_name(norm)) + "-eps" + format_double(epsilon) + "-rate" + format_double(rate) + "-steps" +
         std::to_string(steps) + (random_start ? "-rs" : "") + (stop_on_success ? "-stop" : "");
}

double norm_value(std::span<const double> v, Norm norm) {
  double acc = 0.0;
  switch (norm) {
    case Norm::Linf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
    case Norm::L2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case Norm::L1:
      for (double x : v) acc += std::abs(x);
      return acc;
  }
  return acc;
}

void project_l1(std::span<double> delta, double epsilon) {
  if (norm_value(delta, Norm::L1) <= epsilon) return;
  std::vector<double> u(delta.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::abs(delta[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  // Largest rho with u[rho] > (sum_{i<=rho} u[i] - epsilon) / (rho + 1).
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumulative += u[i];
    const double t = (cumulative - epsilon) / static_cast<double>(i + 1);
    if (u[i] > t) theta = t;
  }
  for (double& d : delta) {
    const double m = std::max(std::abs(d) - theta, 0.0);
    d = std::copysign(m, d);
  }
}

void project(std::span<double> delta, Norm norm, double epsilon) {
  switch (norm) {
    case Norm::Linf:
      for (double& d : delta) d = std::clamp(d, -epsilon, epsilon);
      return;
    case Norm::L2: {
      const double n = norm_value(delta, Norm::L2);
      if (n > epsilon) {
        const double s = epsilon / n;
        for (double& d : delta) d *= s;
      }
      return;
    }
    case Norm::L1:
      project_l1(delta, epsilon);
      return;
  }
}

namespace {

void random_start(std::span<double> d, const AttackConfig& cfg, SplitMix64& rng) {
  switch (cfg.norm) {
    case Norm::Linf:
      for (double& v : d) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
      break;
    case Norm::L2: {
      for (double& v : d) v = rng.normal();
      const double n = norm_value(d, Norm::L2);
      const double r = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d.size()));
      for (double& v : d) v *= n > 0.0 ? r / n : 0.0;
      break;
    }
    case Norm::L1: {
      // Normalized exponentials with one slack coordinate are uniform on the simplex.
      double total = -std::log1p(-rng.uniform());
      for (double& v : d) {
        v = -std::log1p(-rng.uniform());
        total += v;
      }
      for (double& v : d) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * cfg.epsilon * v / total;
      break;
    }
  }
}

void ascend(std::span<double> d, std::span<const double> g, const AttackConfig& cfg) {
  const double step = cfg.rate * cfg.epsilon;
  if (cfg.norm == Norm::Linf) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += step * static_cast<double>((g[i] > 0.0) - (g[i] < 0.0));
    return;
  }
  const double n = norm_value(g, cfg.norm);
  if (!(n > 0.0)) return;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += step * g[i] / n;
}

/// delta <- clip(x + delta) - x, which never increases any |delta_i|. Entries
/// inside the box are left untouched so tiny budgets do not pick up rounding.
void clip_box(std::span<double> d, std::span<const double> x, const AttackConfig& cfg) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (x[i] + d[i] > cfg.pixel_hi) d[i] = cfg.pixel_hi - x[i];
    else if (x[i] + d[i] < cfg.pixel_lo) d[i] = cfg.pixel_lo - x[i];
  }
}

}  // namespace

std::vector<Perturbation> pgd_batch(const models::Model& model, const Params& params, const Tensor& images,
                                    const std::vector<std::size_t>& targets, const AttackConfig& cfg) {
  cfg.validate();
  if (images.rank() != 4) throw Error("pgd: expected images [B, C, H, W], got " + shape_str(images.shape()));
  const std::size_t B = images.dim(0);
  if (targets.size() != B) throw Error("pgd: one target per image required");
  for (double v : images.values()) {
    if (!(v >= cfg.pixel_lo && v <= cfg.pixel_hi)) throw Error("pgd: image outside the pixel range");
  }

  const auto clean = models::argmax_rows(models::predict(model, params, images));
  Tensor delta(images.shape());
  std::vector<char> done(B, 0);
  std::vector<std::size_t> taken(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    auto d = delta.row(b);
    if (cfg.random_start) {
      SplitMix64 local(derive_seed(cfg.seed, b));
      random_start(d, cfg, local);
      project(d, cfg.norm, cfg.epsilon);
      clip_box(d, images.row(b), cfg);
    }
  }

  Tensor y(Shape{B});
  for (std::size_t b = 0; b < B; ++b) y[b] = static_cast<double>(targets[b]);
  Tensor adv(images.shape());
  auto current_predictions = [&]() {
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = images[i] + delta[i];
    return models::argmax_rows(models::predict(model, params, adv));
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.stop_on_success) {
      const auto pred = current_predictions();
      bool all = true;
      for (std::size_t b = 0; b < B; ++b) {
        if (pred[b] != clean[b]) done[b] = 1;
        all = all && done[b];
      }
      if (all) break;
    }
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = images[i] + delta[i];
    const Workspace ws = evaluate(model.graph, params, {{"x", adv}, {"y", y}}, model.loss);
    const Gradients g = backward(model.graph, params, ws, model.loss, BackwardOptions{false, true});
    const Tensor& gx = g.inputs.at("x");
    if (!gx.all_finite()) throw Error("pgd: non-finite input gradient at step " + std::to_string(step));
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b]) continue;
      auto d = delta.row(b);
      ascend(d, gx.row(b), cfg);
      project(d, cfg.norm, cfg.epsilon);
      clip_box(d, images.row(b), cfg);
      ++taken[b];
    }
  }

  const auto final_pred = current_predictions();
  std::vector<Perturbation> out(B);
  Shape item(images.shape().begin() + 1, images.shape().end());
  for (std::size_t b = 0; b < B; ++b) {
    Perturbation& p = out[b];
    const auto d = delta.row(b);
    p.delta = Tensor(item, std::vector<double>(d.begin(), d.end()));
    p.final_norm = norm_value(d, cfg.norm);
    p.example = b;
    p.clean_prediction = clean[b];
    p.adversarial_prediction = final_pred[b];
    p.success = final_pred[b] != clean[b];
    p.steps_taken = taken[b];
  }
  return out;
}

Perturbation pgd(const models::Model& model, const Params& params, const Tensor& image, std::size_t label,
                 const AttackConfig& cfg) {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return pgd_batch(model, params, image.reshaped(s), {label}, cfg).front();
}

Tensor PerturbationSet::deltas(std::size_t config) const {
  std::vector<Tensor> parts;
  for (const Perturbation& p : results.at(config)) parts.push_back(p.delta);
  if (parts.empty()) return Tensor();
  return stack(parts);
}

PerturbationSet attack_suite(const models::Model& model, const Params& params, const data::Dataset& ds,
                             const std::vector<AttackConfig>& configs, std::size_t batch) {
  PerturbationSet set;
  set.configs = configs;
  if (configs.empty()) return set;
  if (batch == 0) batch = 1;
  const auto clean = ds.size() ? models::argmax_rows(models::predict(model, params, ds.images))
                               : std::vector<std::size_t>{};
  const Shape item{ds.size() ? ds.channels() : 0, ds.size() ? ds.height() : 0, ds.size() ? ds.width() : 0};
  for (const AttackConfig& cfg : configs) {
    std::vector<Perturbation> results;
    for (std::size_t b = 0; b < ds.size(); b += batch) {
      const std::size_t e = std::min(ds.size(), b + batch);
      const std::vector<std::size_t> targets(clean.begin() + static_cast<std::ptrdiff_t>(b),
                                             clean.begin() + static_cast<std::ptrdiff_t>(e));
      try {
        AttackConfig local = cfg;
        local.seed = derive_seed(cfg.seed, b);
        auto part = pgd_batch(model, params, ds.images.slice_rows(b, e), targets, local);
        for (Perturbation& p : part) {
          p.example += b;
          results.push_back(std::move(p));
        }
      } catch (const std::exception& err) {
        for (std::size_t i = b; i < e; ++i) {
          Perturbation p;
          p.delta = Tensor(item);
          p.example = i;
          p.clean_prediction = p.adversarial_prediction = clean[i];
          p.error = err.what();
          results.push_back(std::move(p));
        }
      }
    }
    SuccessRow row;
    row.config = cfg.name();
    row.attempted = results.size();
    for (const Perturbation& p : results) {
      if (!p.error.empty()) {
        ++row.failed;
        continue;
      }
      row.succeeded += p.success;
      row.mean_l1 += norm_value(p.delta.data(), Norm::L1);
      row.mean_l2 += norm_value(p.delta.data(), Norm::L2);
      row.mean_linf += norm_value(p.delta.data(), Norm::Linf);
    }
    const std::size_t ok = row.attempted - row.failed;
    if (ok) {
      row.mean_l1 /= static_cast<double>(ok);
      row.mean_l2 /= static_cast<double>(ok);
      row.mean_linf /= static_cast<double>(ok);
    }
    row.success_rate = row.attempted ? static_cast<double>(row.succeeded) / static_cast<double>(row.attempted) : 0.0;
    set.results.push_back(std::move(results));
    set.table.push_back(row);
  }
  return set;
}

namespace {

ordered_json config_json(const AttackConfig& c) {
  ordered_json j;
  j["name"] = c.name();
  j["norm"] = norm_name(c.norm);
  j["epsilon"] = c.epsilon;
  j["rate"] = c.rate;
  j["steps"] = c.steps;
  j["pixel_range"] = {c.pixel_lo, c.pixel_hi};
  j["random_start"] = c.random_start;
  j["stop_on_success"] = c.stop_on_success;
  j["seed"] = c.seed;
  return j;
}

AttackConfig config_from_json(const ordered_json& j) {
  AttackConfig c;
  c.norm = parse_norm(j.at("norm"));
  c.epsilon = j.at("epsilon");
  c.rate = j.at("rate");
  c.steps = j.at("steps");
  c.pixel_lo = j.at("pixel_range").at(0);
  c.pixel_hi = j.at("pixel_range").at(1);
  c.random_start = j.at("random_start");
  c.stop_on_success = j.at("stop_on_success");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void save_perturbations(const std::string& stem, const PerturbationSet& set) {
  std::vector<NamedTensor> named;
  ordered_json manifest;
  manifest["format"] = "freqlab-perturbations-1";
  manifest["configs"] = ordered_json::array();
  for (std::size_t c = 0; c < set.configs.size(); ++c) {
    const auto& res = set.results.at(c);
    named.push_back({set.configs[c].name(), res.empty() ? Tensor(Shape{0}) : set.deltas(c)});
    ordered_json cj = config_json(set.configs[c]);
    ordered_json ex = ordered_json::array();
    for (const Perturbation& p : res) {
      ordered_json pj;
      pj["example"] = p.example;
      pj["success"] = p.success;
      pj["clean"] = p.clean_prediction;
      pj["adversarial"] = p.adversarial_prediction;
      pj["norm"] = p.final_norm;
      pj["steps"] = p.steps_taken;
      if (!p.error.empty()) pj["error"] = p.error;
      ex.push_back(pj);
    }
    cj["examples"] = ex;
    if (c < set.table.size()) {
      const SuccessRow& r = set.table[c];
      cj["summary"] = {{"attempted", r.attempted}, {"succeeded", r.succeeded}, {"failed", r.failed},
                       {"success_rate", r.success_rate}, {"mean_l1", r.mean_l1}, {"mean_l2", r.mean_l2},
                       {"mean_linf", r.mean_linf}};
    }
    manifest["configs"].push_back(cj);
  }
  save_tensors(stem + ".bin", named);
  write_file(stem + ".json", manifest.dump(2) + "\n");
}

PerturbationSet load_perturbations(const std::string& stem) {
  PerturbationSet set;
  const auto named = load_tensors(stem + ".bin");
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(read_file(stem + ".json"));
    const auto& configs = manifest.at("configs");
    if (configs.size() != named.size()) throw Error("perturbations " + stem + ": manifest and container disagree");
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const auto& cj = configs[c];
      set.configs.push_back(config_from_json(cj));
      const Tensor& all = named[c].tensor;
      std::vector<Perturbation> res;
      const auto& ex = cj.at("examples");
      for (std::size_t i = 0; i < ex.size(); ++i) {
        Perturbation p;
        const auto& pj = ex[i];
        const auto row = all.row(i);
        p.delta = Tensor(Shape(all.shape().begin() + 1, all.shape().end()), std::vector<double>(row.begin(), row.end()));
        p.example = pj.at("example");
        p.success = pj.at("success");
        p.clean_prediction = pj.at("clean");
        p.adversarial_prediction = pj.at("adversarial");
        p.final_norm = pj.at("norm");
        p.steps_taken = pj.at("steps");
        p.error = pj.value("error", std::string());
        res.push_back(std::move(p));
      }
      set.results.push_back(std::move(res));
      if (cj.contains("summary")) {
        const auto& s = cj["summary"];
        SuccessRow r;
        r.config = set.configs.back().name();
        r.attempted = s.at("attempted");
        r.succeeded = s.at("succeeded");
        r.failed = s.at("failed");
        r.success_rate = s.at("success_rate");
        r.mean_l1 = s.at("mean_l1");
        r.mean_l2 = s.at("mean_l2");
        r.mean_linf = s.at("mean_linf");
        set.table.push_back(r);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("perturbations " + stem + ": " + e.what());
  }
  return set;
}

}  // namespace freqlab::attacks
