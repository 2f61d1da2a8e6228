#include "freqlab/data.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "freqlab/checkpoint.hpp"
#include "freqlab/format.hpp"

namespace freqlab::data {

using spectral::Complex;
using spectral::Spectrum;

// ---------------------------------------------------------------- Dataset

Tensor Dataset::image(std::size_t i) const {
  const std::size_t n = pixels();
  const auto row = images.data().subspan(i * n, n);
  return Tensor(Shape{channels(), height(), width()}, std::vector<double>(row.begin(), row.end()));
}

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.classes = classes;
  out.split = split;
  out.provenance = provenance;
  const std::size_t n = pixels();
  std::vector<double> px;
  px.reserve(indices.size() * n);
  for (std::size_t i : indices) {
    if (i >= size()) throw Error("dataset select: index " + std::to_string(i) + " out of range");
    const auto row = images.data().subspan(i * n, n);
    px.insert(px.end(), row.begin(), row.end());
    out.labels.push_back(labels[i]);
  }
  out.images = Tensor(Shape{indices.size(), channels(), height(), width()}, std::move(px));
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return select(idx);
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

std::uint64_t fnv_string(const std::string& s) {
  std::uint64_t h = kFnvOffset;
  fnv(h, s.data(), s.size());
  return h;
}

}  // namespace

std::uint64_t Dataset::hash() const {
  std::uint64_t h = kFnvOffset;
  const std::uint64_t c = classes;
  fnv(h, &c, sizeof c);
  for (std::size_t d : images.shape()) {
    const std::uint64_t v = d;
    fnv(h, &v, sizeof v);
  }
  for (std::size_t l : labels) {
    const std::uint64_t v = l;
    fnv(h, &v, sizeof v);
  }
  fnv(h, images.data().data(), images.size() * sizeof(double));
  return h;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw Error("dataset: images must be [N, C, H, W], got " + shape_str(images.shape()));
  if (images.dim(0) != labels.size()) throw Error("dataset: image and label counts differ");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw Error("dataset: label " + std::to_string(labels[i]) + " of example " + std::to_string(i) +
                  " exceeds class count " + std::to_string(classes));
    }
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset: pixel outside [0, 1]");
  }
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

// ---------------------------------------------------------------- CIFAR-10

Dataset decode_cifar10(const std::string& bytes, const std::string& source) {
  const std::size_t plane = kCifarSide * kCifarSide;
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecord;
    throw Error("cifar10 " + source + ": truncated record at byte offset " + std::to_string(offset) + " (file has " +
                std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.classes = 10;
  ds.provenance = "cifar10:" + source;
  ds.labels.resize(n);
  std::vector<double> px(n * 3 * plane);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * kCifarRecord;
    const auto label = static_cast<unsigned char>(bytes[base]);
    if (label >= 10) {
      throw Error("cifar10 " + source + ": label " + std::to_string(label) + " at byte offset " + std::to_string(base));
    }
    ds.labels[r] = label;
    for (std::size_t i = 0; i < 3 * plane; ++i) {
      px[r * 3 * plane + i] = static_cast<double>(static_cast<unsigned char>(bytes[base + 1 + i])) / 255.0;
    }
  }
  ds.images = Tensor(Shape{n, 3, kCifarSide, kCifarSide}, std::move(px));
  return ds;
}

Dataset load_cifar10(const std::string& path) {
  Dataset ds = decode_cifar10(read_file(path), path);
  ds.split = path.find("test") != std::string::npos ? "test" : "train";
  return ds;
}

Dataset load_cifar10(const std::vector<std::string>& paths, const std::string& split) {
  if (paths.empty()) throw Error("load_cifar10: no batch files given");
  std::string all, source;
  for (const auto& p : paths) {
    std::string b = read_file(p);
    if (b.size() % kCifarRecord != 0) decode_cifar10(b, p);  // reports the offset within that file
    all += b;
    source += (source.empty() ? "" : "+") + p;
  }
  Dataset ds = decode_cifar10(all, source);
  ds.split = split;
  return ds;
}

std::string encode_cifar10(const Dataset& ds) {
  if (ds.images.rank() != 4 || ds.channels() != 3 || ds.height() != kCifarSide || ds.width() != kCifarSide) {
    throw Error("encode_cifar10: expected [N, 3, 32, 32] images, got " + shape_str(ds.images.shape()));
  }
  const std::size_t per = 3 * kCifarSide * kCifarSide;
  std::string out(ds.size() * kCifarRecord, '\0');
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (ds.labels[r] > 255) throw Error("encode_cifar10: label does not fit a byte");
    out[r * kCifarRecord] = static_cast<char>(ds.labels[r]);
    for (std::size_t i = 0; i < per; ++i) {
      const double v = std::clamp(ds.images[r * per + i], 0.0, 1.0);
      out[r * kCifarRecord + 1 + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  return out;
}

Dataset to_grayscale(const Dataset& ds) {
  const std::size_t C = ds.channels();
  if (C == 1) return ds;
  if (C != 3) throw Error("to_grayscale: expected 1 or 3 channels, got " + std::to_string(C));
  const std::size_t plane = ds.height() * ds.width();
  Dataset out = ds;
  std::vector<double> px(ds.size() * plane);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const double* r = ds.images.data().data() + n * 3 * plane;
    const double* g = r + plane;
    const double* b = g + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      px[n * plane + i] = (r[i] == g[i] && g[i] == b[i]) ? r[i] : 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    }
  }
  out.images = Tensor(Shape{ds.size(), 1, ds.height(), ds.width()}, std::move(px));
  out.provenance += "+gray";
  return out;
}

Dataset downsample2(const Dataset& ds) {
  const std::size_t C = ds.channels(), H = ds.height(), W = ds.width();
  if (H % 2 || W % 2) throw Error("downsample2: extents must be even, got " + shape_str(ds.images.shape()));
  Dataset out = ds;
  out.images = Tensor(Shape{ds.size(), C, H / 2, W / 2});
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j) {
          const double* src = ds.images.data().data() + ((n * C + c) * H + 2 * i) * W + 2 * j;
          out.images[((n * C + c) * (H / 2) + i) * (W / 2) + j] = 0.25 * (src[0] + src[1] + src[W] + src[W + 1]);
        }
  out.provenance += "+down2";
  return out;
}

// ---------------------------------------------------------------- synthetic data

Spectrum hermitian_symmetrize(const Spectrum& g) {
  Spectrum out = g;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      const std::size_t mr = (g.rows - r) % g.rows, mc = (g.cols - c) % g.cols;
      out.bins[r * g.cols + c] = 0.5 * (g.bins[r * g.cols + c] + std::conj(g.bins[mr * g.cols + mc]));
    }
  return out;
}

std::vector<double> spectral_field(std::size_t rows, std::size_t cols, SplitMix64& rng,
                                   const std::function<double(double)>& envelope) {
  Spectrum s{rows, cols, std::vector<Complex>(rows * cols)};
  double power = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double a = envelope(std::hypot(static_cast<double>(s.row_freq(r)), static_cast<double>(s.col_freq(c))));
      const double re = rng.normal(), im = rng.normal();
      s.bins[r * cols + c] = a * Complex(re, im);
      power += a * a;
    }
  std::vector<double> field(rows * cols, 0.0);
  if (power <= 0.0) return field;
  // After symmetrization every bin has expected energy a^2, so the expected
  // spatial mean square is sum(a^2) / (rows cols)^2.
  const double scale = static_cast<double>(rows * cols) / std::sqrt(power);
  const auto spatial = spectral::idft2(hermitian_symmetrize(s));
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = scale * spatial[i].real();
  return field;
}

namespace {

std::string synth_describe(const SynthConfig& cfg, std::uint64_t seed) {
  std::ostringstream s;
  s << "synth:" << cfg.channels << "x" << cfg.height << "x" << cfg.width << ",classes=" << cfg.classes
    << ",alpha=" << format_double(cfg.alpha) << ",signature=" << (cfg.signature == Signature::Band ? "band" : "texture")
    << ",band=" << format_double(cfg.band_lo) << "-" << format_double(cfg.band_hi) << ",signal=" << format_double(cfg.signal)
    << ",noise=" << format_double(cfg.noise) << ",noise_alpha=" << format_double(cfg.noise_alpha)
    << ",seed=" << seed;
  return s.str();
}

double power_law(double radius, double alpha) {
  if (std::isinf(alpha)) return radius == 0.0 ? 1.0 : 0.0;
  return std::pow(1.0 + radius, -alpha);
}

}  // namespace

Split synth_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 1 || cfg.channels < 1) throw Error("synth_dataset: need at least one class and channel");
  if (cfg.height % 2 || cfg.width % 2) throw Error("synth_dataset: extents must be even");
  if (!cfg.class_bands.empty() && cfg.class_bands.size() != cfg.classes) {
    throw Error("synth_dataset: class_bands needs one entry per class");
  }
  const std::size_t H = cfg.height, W = cfg.width, C = cfg.channels, plane = H * W;
  const double max_freq = static_cast<double>(std::min(H, W)) / 2.0;

  SplitMix64 root(seed);
  SplitMix64 template_rng = root.split();
  std::vector<std::vector<double>> templates(cfg.classes);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    double lo = cfg.band_lo, hi = cfg.band_hi;
    if (!cfg.class_bands.empty()) std::tie(lo, hi) = cfg.class_bands[k];
    auto envelope = [&](double radius) {
      if (cfg.signature == Signature::Band) {
        const double rel = radius / max_freq;
        if (rel < lo || rel >= hi) return 0.0;
      }
      return power_law(radius, cfg.alpha);
    };
    for (std::size_t c = 0; c < C; ++c) {
      auto f = spectral_field(H, W, template_rng, envelope);
      templates[k].insert(templates[k].end(), f.begin(), f.end());
    }
  }
  auto noise_envelope = [&](double radius) { return power_law(radius, cfg.noise_alpha); };

  auto make = [&](std::size_t per_class, SplitMix64 rng, const char* split) {
    const std::size_t n = per_class * cfg.classes;
    Dataset ds;
    ds.classes = cfg.classes;
    ds.split = split;
    ds.provenance = synth_describe(cfg, seed);
    ds.labels.resize(n);
    std::vector<double> px(n * C * plane);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % cfg.classes;
      ds.labels[i] = k;
      for (std::size_t c = 0; c < C; ++c) {
        const auto noise = spectral_field(H, W, rng, noise_envelope);
        for (std::size_t p = 0; p < plane; ++p) {
          const double v = cfg.mean + cfg.signal * templates[k][c * plane + p] + cfg.noise * noise[p];
          px[(i * C + c) * plane + p] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    ds.images = Tensor(Shape{n, C, H, W}, std::move(px));
    return ds;
  };
  Split out;
  out.train = make(cfg.train_per_class, root.split(), "train");
  out.test = make(cfg.test_per_class, root.split(), "test");
  return out;
}

// ---------------------------------------------------------------- shortcut injection

void SteganoSpec::validate() const {
  if (mode == MaskMode::Sparse && !(rho > 0.0 && rho <= 1.0)) throw Error("stegano: rho must lie in (0, 1]");
  if (mode == MaskMode::Ring && !(r_lo >= 0.0 && r_lo < r_hi && r_hi <= 1.0)) {
    throw Error("stegano: ring radii need 0 <= r_lo < r_hi <= 1");
  }
  if (!(epsilon >= 0.0)) throw Error("stegano: epsilon must be non-negative");
}

std::string SteganoSpec::describe() const {
  std::string s = mode == MaskMode::Sparse ? "sparse(rho=" + format_double(rho) + ")"
                                           : "ring(" + format_double(r_lo) + "," + format_double(r_hi) + ")";
  return s + ",eps=" + format_double(epsilon) + ",seed=" + std::to_string(seed);
}

std::vector<char> shortcut_mask(const SteganoSpec& spec, std::size_t rows, std::size_t cols, SplitMix64& rng) {
  std::vector<char> mask(rows * cols, 0);
  const double max_freq = static_cast<double>(std::min(rows, cols)) / 2.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (spec.mode == MaskMode::Sparse) {
        mask[r * cols + c] = rng.bernoulli(spec.rho);
      } else {
        const double fu = static_cast<double>(r) - static_cast<double>(rows / 2);
        const double fv = static_cast<double>(c) - static_cast<double>(cols / 2);
        const double rel = std::hypot(fu, fv) / max_freq;
        mask[r * cols + c] = rel >= spec.r_lo && rel < spec.r_hi;
      }
    }
  return mask;
}

std::vector<std::vector<Spectrum>> shortcut_patterns(const SteganoSpec& spec, std::size_t classes, std::size_t channels,
                                                     std::size_t rows, std::size_t cols) {
  spec.validate();
  std::vector<std::vector<Spectrum>> eta(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    // One stream per class so the pattern of class k does not depend on the class count.
    SplitMix64 rng(derive_seed(spec.seed, k));
    for (std::size_t c = 0; c < channels; ++c) {
      Spectrum s{rows, cols, std::vector<Complex>(rows * cols)};
      for (auto& z : s.bins) z = spec.epsilon * rng.normal();
      const auto mask = shortcut_mask(spec, rows, cols, rng);
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) s.bins[i] = 0.0;
      eta[k].push_back(hermitian_symmetrize(s));
    }
  }
  return eta;
}

Dataset inject_shortcut(const Dataset& ds, const SteganoSpec& spec, InjectionStats* stats) {
  spec.validate();
  const std::size_t C = ds.channels(), H = ds.height(), W = ds.width(), plane = H * W;
  Dataset out = ds;
  out.provenance += "+inject:" + spec.describe() + "#" + hex64(fnv_string(spec.describe()));
  InjectionStats local;
  local.total = ds.images.size();
  if (spec.epsilon == 0.0) {
    if (stats) *stats = local;
    return out;
  }
  // Adding eta to the spectrum and inverting equals adding idft2(eta) in
  // space; doing it spatially leaves pixels of zero patterns untouched.
  const auto eta = shortcut_patterns(spec, ds.classes, C, H, W);
  std::vector<std::vector<std::vector<double>>> delta(ds.classes);
  for (std::size_t k = 0; k < ds.classes; ++k)
    for (std::size_t c = 0; c < C; ++c) {
      const auto back = spectral::idft2(eta[k][c]);
      std::vector<double> d(plane);
      for (std::size_t i = 0; i < plane; ++i) d[i] = back[i].real();
      delta[k].push_back(std::move(d));
    }
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      auto px = out.images.data().subspan((n * C + c) * plane, plane);
      const auto& d = delta[ds.labels[n]][c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = px[i] + d[i];
        const double clamped = std::clamp(v, 0.0, 1.0);
        if (clamped != v) ++local.clamped;
        px[i] = clamped;
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

std::string provenance_json(const Dataset& ds) {
  nlohmann::ordered_json j;
  j["provenance"] = ds.provenance;
  j["split"] = ds.split;
  j["count"] = ds.size();
  j["classes"] = ds.classes;
  j["shape"] = ds.images.shape();
  j["hash"] = hex64(ds.hash());
  return j.dump(2) + "\n";
}

}  // namespace freqlab::data
