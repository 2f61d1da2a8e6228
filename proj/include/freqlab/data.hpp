#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "freqlab/rng.hpp"
#include "freqlab/spectral.hpp"
#include "freqlab/tensor.hpp"

namespace freqlab::data {

struct Dataset {
  Tensor images;  // [N, C, H, W], pixels in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t classes = 10;
  std::string split;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t pixels() const { return images.size() / std::max<std::size_t>(size(), 1); }

  /// Image `i` as a [C, H, W] tensor.
  Tensor image(std::size_t i) const;
  /// Examples at the given positions, in that order.
  Dataset select(const std::vector<std::size_t>& indices) const;
  /// First `n` examples (or all if fewer).
  Dataset head(std::size_t n) const;

  /// FNV-1a over class count, labels and the raw pixel doubles.
  std::uint64_t hash() const;
  /// Checks label range, extents and pixel range; throws on violation.
  void validate() const;
};

std::string hex64(std::uint64_t v);

// ---- CIFAR-10 binary batches: 3073-byte records, label byte then the
// 1024-byte R, G and B planes (row-major 32x32).

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

Dataset decode_cifar10(const std::string& bytes, const std::string& source);
Dataset load_cifar10(const std::string& path);
/// Concatenates several batch files in the given order.
Dataset load_cifar10(const std::vector<std::string>& paths, const std::string& split);
/// Inverse of decode_cifar10 (pixels rounded to the nearest of 256 levels).
std::string encode_cifar10(const Dataset& ds);

/// ITU-R BT.601 luma; images whose channels are already equal keep their values exactly.
Dataset to_grayscale(const Dataset& ds);
/// 2x2 average pooling.
Dataset downsample2(const Dataset& ds);

// ---- synthetic data

enum class Signature { Texture, Band };

struct SynthConfig {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  /// Class templates have amplitude spectrum (1 + |f|)^-alpha; infinity keeps only DC.
  double alpha = 1.0;
  Signature signature = Signature::Texture;
  /// Band signature: template support is lo <= |f| / (extent/2) < hi.
  double band_lo = 0.5;
  double band_hi = 1.0;
  /// Optional per-class bands overriding band_lo/band_hi.
  std::vector<std::pair<double, double>> class_bands;
  /// Spatial RMS of the class template and of the per-example noise.
  double signal = 0.1;
  double noise = 0.1;
  double noise_alpha = 1.0;
  double mean = 0.5;
};

struct Split {
  Dataset train;
  Dataset test;
};

/// Class-balanced splits with labels cycling 0, 1, ..., classes-1.
Split synth_dataset(const SynthConfig& cfg, std::uint64_t seed);

/// Random-phase real field with amplitude envelope(|f|) per centered bin,
/// scaled by the deterministic factor that gives unit expected spatial RMS.
std::vector<double> spectral_field(std::size_t rows, std::size_t cols, SplitMix64& rng,
                                   const std::function<double(double)>& envelope);

// ---- shortcut injection

enum class MaskMode { Sparse, Ring };

struct SteganoSpec {
  MaskMode mode = MaskMode::Sparse;
  double rho = 0.2;    // Sparse: Bernoulli keep probability
  double r_lo = 0.0;   // Ring: radii as fractions of the max frequency (extent / 2)
  double r_hi = 0.1;
  double epsilon = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
};

/// (G(u,v) + conj(G(-u,-v))) / 2 with indices taken modulo the extents.
spectral::Spectrum hermitian_symmetrize(const spectral::Spectrum& g);

/// Centered-grid mask for one class and channel.
std::vector<char> shortcut_mask(const SteganoSpec& spec, std::size_t rows, std::size_t cols, SplitMix64& rng);

/// eta_class for every class: [classes][channel] centered spectra.
std::vector<std::vector<spectral::Spectrum>> shortcut_patterns(const SteganoSpec& spec, std::size_t classes,
                                                               std::size_t channels, std::size_t rows,
                                                               std::size_t cols);

struct InjectionStats {
  std::size_t clamped = 0;
  std::size_t total = 0;
  double clamped_fraction() const { return total ? static_cast<double>(clamped) / static_cast<double>(total) : 0.0; }
};

Dataset inject_shortcut(const Dataset& ds, const SteganoSpec& spec, InjectionStats* stats = nullptr);

/// JSON sidecar describing where a dataset came from.
std::string provenance_json(const Dataset& ds);

}  // namespace freqlab::data
