#include "freqlab/spectral.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "freqlab/format.hpp"

namespace freqlab::spectral {

const Complex& Spectrum::at(long fu, long fv) const {
  const long R = static_cast<long>(rows), C = static_cast<long>(cols);
  long r = ((fu + R / 2) % R + R) % R;
  long c = ((fv + C / 2) % C + C) % C;
  return bins[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
}

double Spectrum::energy() const {
  double e = 0.0;
  for (const Complex& z : bins) e += std::norm(z);
  return e;
}

double Grid::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

double EnergyProfile::total() const { return std::accumulate(bins.begin(), bins.end(), 0.0); }

// ---------------------------------------------------------------- transforms

void fft(std::span<Complex> data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0 || !std::has_single_bit(n)) throw Error("fft: size " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles from the exact angle rather than by repeated multiplication.
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const Complex w(std::cos(angle), std::sin(angle));
      for (std::size_t i = k; i < n; i += len) {
        const Complex t = w * data[i + half];
        data[i + half] = data[i] - t;
        data[i] += t;
      }
    }
  }
}

namespace {

void dft_line(std::span<Complex> line, bool inverse) {
  if (std::has_single_bit(line.size())) {
    fft(line, inverse);
    return;
  }
  const std::size_t n = line.size();
  std::vector<Complex> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    Complex s = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
      s += line[m] * Complex(std::cos(angle), std::sin(angle));
    }
    out[k] = s;
  }
  std::copy(out.begin(), out.end(), line.begin());
}

void transform2(std::vector<Complex>& grid, std::size_t rows, std::size_t cols, bool inverse) {
  for (std::size_t r = 0; r < rows; ++r) dft_line(std::span<Complex>(grid).subspan(r * cols, cols), inverse);
  std::vector<Complex> column(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = grid[r * cols + c];
    dft_line(column, inverse);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = column[r];
  }
}

void check_extents(std::size_t rows, std::size_t cols, std::size_t len) {
  if (rows == 0 || cols == 0 || rows % 2 || cols % 2) {
    throw Error("dft2: extents " + std::to_string(rows) + "x" + std::to_string(cols) + " must be even and positive");
  }
  if (rows * cols != len) throw Error("dft2: data length does not match extents");
}

}  // namespace

Spectrum center(std::vector<Complex> natural, std::size_t rows, std::size_t cols) {
  Spectrum s{rows, cols, std::vector<Complex>(rows * cols)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      s.bins[((r + rows / 2) % rows) * cols + (c + cols / 2) % cols] = natural[r * cols + c];
  return s;
}

std::vector<Complex> uncenter(const Spectrum& s) {
  std::vector<Complex> natural(s.rows * s.cols);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c)
      natural[r * s.cols + c] = s.bins[((r + s.rows / 2) % s.rows) * s.cols + (c + s.cols / 2) % s.cols];
  return natural;
}

Spectrum dft2(std::span<const Complex> image, std::size_t rows, std::size_t cols) {
  check_extents(rows, cols, image.size());
  std::vector<Complex> grid(image.begin(), image.end());
  transform2(grid, rows, cols, false);
  return center(std::move(grid), rows, cols);
}

Spectrum dft2(std::span<const double> image, std::size_t rows, std::size_t cols) {
  check_extents(rows, cols, image.size());
  std::vector<Complex> grid(image.begin(), image.end());
  transform2(grid, rows, cols, false);
  return center(std::move(grid), rows, cols);
}

Spectrum dft2(const Tensor& image) {
  if (image.rank() != 2) throw Error("dft2: expected a [H, W] tensor, got " + shape_str(image.shape()));
  return dft2(image.data(), image.dim(0), image.dim(1));
}

Spectrum dft2_naive(std::span<const double> image, std::size_t rows, std::size_t cols) {
  check_extents(rows, cols, image.size());
  std::vector<Complex> natural(rows * cols);
  for (std::size_t u = 0; u < rows; ++u)
    for (std::size_t v = 0; v < cols; ++v) {
      Complex s = 0.0;
      for (std::size_t m = 0; m < rows; ++m)
        for (std::size_t n = 0; n < cols; ++n) {
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>((u * m) % rows) / static_cast<double>(rows) +
                                static_cast<double>((v * n) % cols) / static_cast<double>(cols));
          s += image[m * cols + n] * Complex(std::cos(phase), std::sin(phase));
        }
      natural[u * cols + v] = s;
    }
  return center(std::move(natural), rows, cols);
}

std::vector<Complex> idft2(const Spectrum& spectrum) {
  std::vector<Complex> grid = uncenter(spectrum);
  transform2(grid, spectrum.rows, spectrum.cols, true);
  const double inv = 1.0 / static_cast<double>(spectrum.rows * spectrum.cols);
  for (Complex& z : grid) z *= inv;
  return grid;
}

Grid magnitude(const Spectrum& s) {
  Grid g{s.rows, s.cols, std::vector<double>(s.bins.size())};
  for (std::size_t i = 0; i < s.bins.size(); ++i) g.values[i] = std::abs(s.bins[i]);
  return g;
}

Grid energy(const Spectrum& s) {
  Grid g{s.rows, s.cols, std::vector<double>(s.bins.size())};
  for (std::size_t i = 0; i < s.bins.size(); ++i) g.values[i] = std::norm(s.bins[i]);
  return g;
}

Grid mean_magnitude_spectrum(std::span<const Tensor> images) {
  if (images.empty()) throw Error("mean_magnitude_spectrum: empty set");
  const Shape& shape = images[0].shape();
  if (shape.size() != 2 && shape.size() != 3) {
    throw Error("mean_magnitude_spectrum: expected [H, W] or [C, H, W], got " + shape_str(shape));
  }
  const std::size_t H = shape[shape.size() - 2], W = shape[shape.size() - 1];
  const std::size_t channels = shape.size() == 3 ? shape[0] : 1;
  Grid mean{H, W, std::vector<double>(H * W, 0.0)};
  for (const Tensor& t : images) {
    if (t.shape() != shape) throw Error("mean_magnitude_spectrum: non-uniform extents");
    for (std::size_t c = 0; c < channels; ++c) {
      const Spectrum s = dft2(t.data().subspan(c * H * W, H * W), H, W);
      for (std::size_t i = 0; i < s.bins.size(); ++i) mean.values[i] += std::abs(s.bins[i]);
    }
  }
  const double inv = 1.0 / static_cast<double>(images.size() * channels);
  for (double& v : mean.values) v *= inv;
  return mean;
}

// ---------------------------------------------------------------- concentration

BandEnergy band_energy(const Grid& e, double k, Region region) {
  if (k < 0.0) throw Error("band_energy: k must be non-negative");
  const double half = k / 2.0;
  BandEnergy out;
  for (std::size_t r = 0; r < e.rows; ++r) {
    const double fu = static_cast<double>(r) - static_cast<double>(e.rows / 2);
    for (std::size_t c = 0; c < e.cols; ++c) {
      const double fv = static_cast<double>(c) - static_cast<double>(e.cols / 2);
      const double v = e.at(r, c);
      out.total += v;
      const bool inside = region == Region::Square ? std::max(std::abs(fu), std::abs(fv)) <= half
                                                   : fu * fu + fv * fv <= half * half;
      if (inside) out.inside += v;
    }
  }
  return out;
}

double kappa_high(const BandEnergy& band) {
  if (band.total <= 0.0) return 0.0;
  return std::clamp(1.0 - band.inside / band.total, 0.0, 1.0);
}

double kappa_high(const Spectrum& s, double k, Region region) { return kappa_high(band_energy(energy(s), k, region)); }

double kappa_high_1d(std::span<const double> signal, double k) {
  const std::size_t n = signal.size();
  if (n == 0 || n % 2) throw Error("kappa_high_1d: length must be even and positive");
  if (!(k >= 0.0 && k < static_cast<double>(n))) throw Error("kappa_high_1d: k must lie in [0, length)");
  std::vector<Complex> line(signal.begin(), signal.end());
  dft_line(line, false);
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const long f = i <= n / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(n);
    const double e = std::norm(line[i]);
    total += e;
    if (std::abs(static_cast<double>(f)) <= k / 2.0) inside += e;
  }
  return kappa_high(BandEnergy{inside, total});
}

double kappa_high_2d(std::span<const double> image, std::size_t rows, std::size_t cols, double k, Region region) {
  if (!(k >= 0.0 && k < static_cast<double>(std::min(rows, cols)))) throw Error("kappa_high_2d: k must lie in [0, extent)");
  return kappa_high(dft2(image, rows, cols), k, region);
}

EnergyProfile radial_profile(const Grid& e) {
  const double max_r = std::hypot(static_cast<double>(e.rows / 2), static_cast<double>(e.cols / 2));
  EnergyProfile p{std::vector<double>(static_cast<std::size_t>(std::lround(max_r)) + 1, 0.0)};
  for (std::size_t r = 0; r < e.rows; ++r)
    for (std::size_t c = 0; c < e.cols; ++c) {
      const double fu = static_cast<double>(r) - static_cast<double>(e.rows / 2);
      const double fv = static_cast<double>(c) - static_cast<double>(e.cols / 2);
      p.bins[static_cast<std::size_t>(std::lround(std::hypot(fu, fv)))] += e.at(r, c);
    }
  return p;
}

EnergyProfile angular_profile(const Grid& e) {
  EnergyProfile p{std::vector<double>(360, 0.0)};
  for (std::size_t r = 0; r < e.rows; ++r)
    for (std::size_t c = 0; c < e.cols; ++c) {
      const double fu = static_cast<double>(r) - static_cast<double>(e.rows / 2);
      const double fv = static_cast<double>(c) - static_cast<double>(e.cols / 2);
      double deg = (fu == 0.0 && fv == 0.0) ? 0.0 : std::atan2(fu, fv) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 360.0;
      const auto bin = std::min<std::size_t>(static_cast<std::size_t>(std::floor(deg)), 359);
      p.bins[bin] += e.at(r, c);
    }
  return p;
}

double radial_centroid(const Grid& e) {
  double weighted = 0.0, total = 0.0;
  for (std::size_t r = 0; r < e.rows; ++r)
    for (std::size_t c = 0; c < e.cols; ++c) {
      const double fu = static_cast<double>(r) - static_cast<double>(e.rows / 2);
      const double fv = static_cast<double>(c) - static_cast<double>(e.cols / 2);
      weighted += std::hypot(fu, fv) * e.at(r, c);
      total += e.at(r, c);
    }
  return total > 0.0 ? weighted / total : 0.0;
}

// ---------------------------------------------------------------- norms and statistics

double pq_norm(std::span<const double> values, double p) {
  if (!(p > 0.0)) throw Error("pq_norm: p must be positive");
  double s = 0.0;
  for (double v : values) s += std::pow(std::abs(v), p);
  return std::pow(s, 1.0 / p);
}

double pq_norm(std::span<const Complex> values, double p) {
  if (!(p > 0.0)) throw Error("pq_norm: p must be positive");
  double s = 0.0;
  for (const Complex& v : values) s += std::pow(std::abs(v), p);
  return std::pow(s, 1.0 / p);
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("spearman: extents differ");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> hadamard_bound_check(std::span<const std::vector<Complex>> filters,
                                         std::span<const std::vector<char>> masks) {
  if (filters.empty()) throw Error("hadamard_bound_check: no filters");
  const std::size_t n = filters[0].size();
  for (const auto& f : filters)
    if (f.size() != n) throw Error("hadamard_bound_check: filter extents differ");
  std::vector<Complex> product(n, Complex(1.0, 0.0));
  for (const auto& f : filters)
    for (std::size_t i = 0; i < n; ++i) product[i] *= f[i];

  std::vector<double> slack;
  slack.reserve(masks.size());
  for (const auto& mask : masks) {
    if (mask.size() != n) throw Error("hadamard_bound_check: mask extent differs");
    double bound = 1.0;
    for (const auto& f : filters) {
      double e = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) e += std::norm(f[i]);
      bound *= std::sqrt(e);
    }
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) e += std::norm(product[i]);
    slack.push_back(bound - std::sqrt(e));
  }
  return slack;
}

// ---------------------------------------------------------------- export

std::string pgm_bytes(const Grid& grid, bool log_view) {
  std::vector<double> v = grid.values;
  if (log_view)
    for (double& x : v) x = std::log1p(std::max(x, 0.0));
  double lo = 0.0, hi = 0.0;
  if (!v.empty()) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = *mn;
    hi = *mx;
  }
  std::string out = "P5\n" + std::to_string(grid.cols) + " " + std::to_string(grid.rows) + "\n255\n";
  for (double x : v) {
    const double t = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
  }
  return out;
}

void write_pgm(const std::string& path, const Grid& grid, bool log_view) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_pgm: cannot open " + path);
  const std::string bytes = pgm_bytes(grid, log_view);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_csv_grid(const std::string& path, const Grid& grid) {
  std::ofstream f(path);
  if (!f) throw Error("write_csv_grid: cannot open " + path);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      if (c) f << ',';
      f << format_double(grid.at(r, c));
    }
    f << '\n';
  }
}

Grid read_csv_grid(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("read_csv_grid: cannot open " + path);
  Grid g;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t cols = 0, start = 0;
    while (true) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      double v = 0.0;
      const auto r = std::from_chars(line.data() + start, line.data() + end, v);
      if (r.ec != std::errc() || r.ptr != line.data() + end) throw Error("read_csv_grid: bad number in " + path);
      g.values.push_back(v);
      ++cols;
      if (end == line.size()) break;
      start = end + 1;
    }
    if (g.rows == 0) g.cols = cols;
    if (cols != g.cols) throw Error("read_csv_grid: ragged row in " + path);
    ++g.rows;
  }
  return g;
}

}  // namespace freqlab::spectral
