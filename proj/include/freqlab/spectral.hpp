#pragma once

// Fourier-domain measurement.
//
// Convention (used everywhere): the forward DFT is unnormalized,
//   X[u, v] = sum_{m, n} x[m, n] exp(-2 pi i (u m / H + v n / W)),
// and the inverse carries 1 / (H W). Parseval therefore reads
//   sum |X|^2 = H W sum |x|^2.
// Spectra are stored centered: bin (r, c) holds frequency
// (r - H/2, c - W/2), so zero frequency sits at (H/2, W/2).

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freqlab/tensor.hpp"

namespace freqlab::spectral {

using Complex = std::complex<double>;

struct Spectrum {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Complex> bins;  // centered, row-major

  long row_freq(std::size_t r) const { return static_cast<long>(r) - static_cast<long>(rows / 2); }
  long col_freq(std::size_t c) const { return static_cast<long>(c) - static_cast<long>(cols / 2); }
  /// Bin of signed frequency (fu, fv), taken modulo the extents.
  const Complex& at(long fu, long fv) const;
  double energy() const;
};

/// Real-valued grid on the centered frequency lattice (magnitudes or energies).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double sum() const;
};

// ---- transforms

/// In-place radix-2 FFT, unnormalized in both directions. Size must be a power of two.
void fft(std::span<Complex> data, bool inverse = false);

/// Forward 2D DFT of a real image, centered. Extents must be even; powers of
/// two take the FFT path, other even sizes a direct row/column DFT.
Spectrum dft2(std::span<const double> image, std::size_t rows, std::size_t cols);
Spectrum dft2(const Tensor& image);  // [H, W]
Spectrum dft2(std::span<const Complex> image, std::size_t rows, std::size_t cols);

/// O(N^4) direct evaluation of the defining sum; test oracle for dft2.
Spectrum dft2_naive(std::span<const double> image, std::size_t rows, std::size_t cols);

/// Inverse of dft2 (includes the 1/(H W) factor); returns the spatial grid row-major.
std::vector<Complex> idft2(const Spectrum& spectrum);

/// Centered <-> natural (zero frequency at index 0) bin order.
std::vector<Complex> uncenter(const Spectrum& spectrum);
Spectrum center(std::vector<Complex> natural, std::size_t rows, std::size_t cols);

Grid magnitude(const Spectrum& s);
Grid energy(const Spectrum& s);

/// Mean over examples of |DFT| per bin. Each tensor is [H, W] or [C, H, W];
/// channels are averaged like extra examples.
Grid mean_magnitude_spectrum(std::span<const Tensor> images);

// ---- concentration

enum class Region { Square, Disc };

struct BandEnergy {
  double inside = 0.0;
  double total = 0.0;
};

/// Energy inside the centered low-frequency region of half-width k/2
/// (max(|fu|, |fv|) <= k/2 for Square, fu^2 + fv^2 <= (k/2)^2 for Disc).
BandEnergy band_energy(const Grid& energy, double k, Region region = Region::Square);

/// Fraction of energy outside the centered low-frequency region; 0 for a zero signal.
double kappa_high(const BandEnergy& band);
double kappa_high(const Spectrum& s, double k, Region region = Region::Square);
/// 1D version over a real signal: the interval |f| <= k/2.
double kappa_high_1d(std::span<const double> signal, double k);
/// 2D version over a real image [H, W].
double kappa_high_2d(std::span<const double> image, std::size_t rows, std::size_t cols, double k,
                     Region region = Region::Square);

struct EnergyProfile {
  std::vector<double> bins;  // radial: integer radius; angular: degree sector
  double total() const;
};

/// Energy binned by rounded radius |f|; bins 0 .. max rounded radius.
EnergyProfile radial_profile(const Grid& energy);
/// Energy binned by floor(angle) in degrees, angle = atan2(fu, fv) in [0, 360).
/// The zero-frequency bin goes to sector 0.
EnergyProfile angular_profile(const Grid& energy);
/// Energy-weighted mean radius (exact radius per bin).
double radial_centroid(const Grid& energy);

// ---- norms and statistics

/// (sum |x_i|^p)^(1/p); a quasinorm for p < 1.
double pq_norm(std::span<const double> values, double p);
double pq_norm(std::span<const Complex> values, double p);

/// Spearman rank correlation with average ranks for ties; nullopt when either
/// input is constant (rank correlation undefined).
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

/// For each mask, returns prod_l ||w_l restricted to mask||_2 - ||(w_1 . ... . w_L) restricted to mask||_2,
/// the slack of the Hadamard-product norm inequality. Filters are flattened
/// spectra of equal length; masks are 0/1 selectors of that length.
std::vector<double> hadamard_bound_check(std::span<const std::vector<Complex>> filter_spectra,
                                         std::span<const std::vector<char>> masks);

// ---- export

void write_pgm(const std::string& path, const Grid& grid, bool log_view);
std::string pgm_bytes(const Grid& grid, bool log_view);
void write_csv_grid(const std::string& path, const Grid& grid);
/// Inverse of write_csv_grid; throws on ragged rows or bad numbers.
Grid read_csv_grid(const std::string& path);

}  // namespace freqlab::spectral
