#include "doctest.h"

#include <cmath>
#include <numbers>

#include "freqlab/kernels.hpp"
#include "freqlab/spectral.hpp"
#include "support.hpp"

using namespace freqlab;
using namespace freqlab::spectral;

namespace {

double max_abs(const Spectrum& a, const Spectrum& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) m = std::max(m, std::abs(a.bins[i] - b.bins[i]));
  return m;
}

}  // namespace

TEST_CASE("dft2 trivial spectra") {
  std::vector<double> ones(16, 1.0);
  Spectrum s = dft2(ones, 4, 4);
  CHECK(std::abs(s.at(0, 0)) == doctest::Approx(16.0));
  CHECK(std::abs(s.bins[2 * 4 + 2]) == doctest::Approx(16.0));  // centered DC
  for (std::size_t i = 0; i < 16; ++i)
    if (i != 10) CHECK(std::abs(s.bins[i]) < 1e-12);

  std::vector<double> impulse(64, 0.0);
  impulse[0] = 1.0;
  for (const Complex& z : dft2(impulse, 8, 8).bins) CHECK(std::abs(z) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(dft2(std::vector<double>(15), 5, 3), Error);
  CHECK_THROWS_AS(dft2(std::vector<double>(12), 4, 4), Error);
}

TEST_CASE("fast transform equals the naive DFT on every even size up to 16") {
  for (std::size_t r = 2; r <= 16; r += 2)
    for (std::size_t c = 2; c <= 16; c += 2) {
      Tensor x = testing::random_tensor({r, c}, r * 100 + c);
      CHECK(max_abs(dft2(x.data(), r, c), dft2_naive(x.data(), r, c)) < 1e-10);
    }
}

TEST_CASE("Parseval and inverse round trip") {
  for (std::size_t n : {8, 12, 16, 32}) {
    Tensor x = testing::random_tensor({n, n}, n);
    Spectrum s = dft2(x);
    double spatial = 0;
    for (double v : x.values()) spatial += v * v;
    CHECK(std::abs(s.energy() - static_cast<double>(n * n) * spatial) / s.energy() < 1e-9);
    auto back = idft2(s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(back[i].real() - x[i]) < 1e-12);
      CHECK(std::abs(back[i].imag()) < 1e-12);
    }
  }
}

TEST_CASE("circular conv2d obeys the convolution theorem") {
  for (std::size_t k : {3, 4, 7, 16}) {
    const std::size_t D = 16;
    kernels::SpatialGeom g{1, 1, 1, D, D, k, Padding::Circular};
    Tensor x = testing::random_tensor({1, 1, D, D}, k), w = testing::random_tensor({1, 1, k, k}, 50 + k);
    Tensor y(x.shape());
    kernels::conv2d(x.data(), w.data(), y.data(), g);
    // Embed the kernel on the grid: tap a sits at offset a - k/2.
    std::vector<double> emb(D * D, 0.0);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const long oa = static_cast<long>(a) - static_cast<long>(k / 2), ob = static_cast<long>(b) - static_cast<long>(k / 2);
        emb[((oa + D) % D) * D + (ob + D) % D] += w[a * k + b];
      }
    Spectrum Y = dft2(y.data(), D, D), X = dft2(x.data(), D, D), Wh = dft2(emb, D, D);
    double err = 0;
    for (std::size_t i = 0; i < D * D; ++i) err = std::max(err, std::abs(Y.bins[i] - Wh.bins[i] * X.bins[i]));
    CHECK(err < 1e-9);
  }
}

TEST_CASE("mean magnitude spectrum") {
  Tensor x = testing::random_tensor({8, 8}, 1);
  Tensor neg = x;
  neg *= -1.0;
  std::vector<Tensor> one{x}, pair{x, neg};
  Grid m1 = mean_magnitude_spectrum(one), m2 = mean_magnitude_spectrum(pair);
  Grid direct = magnitude(dft2(x));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(m1.values[i] == doctest::Approx(direct.values[i]).epsilon(1e-14));
    CHECK(m2.values[i] == doctest::Approx(direct.values[i]).epsilon(1e-14));
  }

  std::vector<Tensor> noise;
  for (int i = 0; i < 100; ++i) noise.push_back(testing::random_tensor({16, 16}, 1000 + i));
  Grid flat = mean_magnitude_spectrum(noise);
  const auto [lo, hi] = std::minmax_element(flat.values.begin(), flat.values.end());
  CHECK(*hi / *lo < 2.0);
}

TEST_CASE("kappa_high examples") {
  std::vector<double> constant(32, 0.7);
  for (double k : {0.0, 1.0, 5.0, 31.0}) CHECK(kappa_high_1d(constant, k) == 0.0);
  std::vector<double> nyquist(32);
  for (std::size_t i = 0; i < 32; ++i) nyquist[i] = i % 2 ? -1.0 : 1.0;
  CHECK(kappa_high_1d(nyquist, 15.0) == doctest::Approx(1.0));
  CHECK(kappa_high_1d(std::vector<double>(32, 0.0), 3.0) == 0.0);

  // Direct bin summation with a naive DFT.
  Tensor f = testing::random_tensor({32}, 5);
  for (double k : {0.0, 3.0, 7.0, 15.0, 16.0, 31.0}) {
    double inside = 0, total = 0;
    for (int u = 0; u < 32; ++u) {
      std::complex<double> s = 0;
      for (int m = 0; m < 32; ++m) s += f[m] * std::polar(1.0, -2.0 * std::numbers::pi * u * m / 32.0);
      const int freq = u <= 16 ? u : u - 32;
      total += std::norm(s);
      if (std::abs(freq) <= k / 2) inside += std::norm(s);
    }
    CHECK(std::abs(kappa_high_1d(f.data(), k) - (1.0 - inside / total)) < 1e-12);
  }
  CHECK_THROWS_AS(kappa_high_1d(f.data(), 32.0), Error);
}

TEST_CASE("kappa_high is nonincreasing in k") {
  Tensor img = testing::random_tensor({16, 16}, 9);
  for (Region region : {Region::Square, Region::Disc}) {
    double prev = 1.0;
    for (double k = 0; k < 16; k += 0.5) {
      const double v = kappa_high_2d(img.data(), 16, 16, k, region);
      CHECK(v >= 0.0);
      CHECK(v <= prev + 1e-15);
      prev = v;
    }
  }
}

TEST_CASE("radial and angular profiles") {
  std::vector<double> dc(256, 1.0);
  Grid e = energy(dft2(dc, 16, 16));
  EnergyProfile r = radial_profile(e);
  CHECK(r.bins[0] == doctest::Approx(e.sum()));
  CHECK(radial_centroid(e) == 0.0);

  Tensor x = testing::random_tensor({16, 16}, 3);
  Grid ex = energy(dft2(x));
  CHECK(std::abs(radial_profile(ex).total() - ex.sum()) / ex.sum() < 1e-9);
  CHECK(std::abs(angular_profile(ex).total() - ex.sum()) / ex.sum() < 1e-9);

  // Annulus of radius 5 built on the centered grid.
  for (double radius : {3.0, 5.0, 7.0}) {
    Grid ring{16, 16, std::vector<double>(256, 0.0)};
    SplitMix64 rng(static_cast<std::uint64_t>(radius));
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const double d = std::hypot(double(i) - 8.0, double(j) - 8.0);
        if (std::abs(d - radius) < 0.5) ring.values[i * 16 + j] = 0.5 + rng.uniform();
      }
    EnergyProfile p = radial_profile(ring);
    const auto c = static_cast<std::size_t>(radius);
    CHECK((p.bins[c - 1] + p.bins[c] + p.bins[c + 1]) / p.total() >= 0.99);
  }

  // A pure horizontal-frequency cosine lands in sectors 0 and 180.
  std::vector<double> wave(256);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) wave[i * 16 + j] = std::cos(2 * std::numbers::pi * 3 * double(j) / 16);
  EnergyProfile a = angular_profile(energy(dft2(wave, 16, 16)));
  CHECK((a.bins[0] + a.bins[180]) / a.total() == doctest::Approx(1.0));
}

TEST_CASE("pq_norm examples") {
  std::vector<double> onehot{0, 0, 1, 0};
  for (double p : {0.25, 2.0 / 3.0, 1.0, 2.0}) CHECK(pq_norm(onehot, p) == doctest::Approx(1.0));
  CHECK(pq_norm(std::vector<double>{3, 4}, 2.0) == doctest::Approx(5.0));
  CHECK(pq_norm(std::vector<double>{1, 1, 1}, 2.0 / 3.0) == doctest::Approx(std::pow(3.0, 1.5)).epsilon(1e-14));
  std::vector<Complex> z{{3, 4}, {0, 0}};
  CHECK(pq_norm(z, 1.0) == doctest::Approx(5.0));
  CHECK_THROWS_AS(pq_norm(onehot, 0.0), Error);
}

TEST_CASE("spearman rank correlation") {
  std::vector<double> a{1, 5, 2, 8, 3}, rev{5, 1, 4, -2, 3};
  CHECK(*spearman(a, a) == doctest::Approx(1.0));
  std::vector<double> b{5, 4, 3, 2, 1}, c{1, 2, 3, 4, 5};
  CHECK(*spearman(b, c) == doctest::Approx(-1.0));
  CHECK(!spearman(a, std::vector<double>(5, 2.0)).has_value());

  // Ties receive average ranks: scipy.stats.spearmanr([1,2,2,3],[1,3,2,4]) = 0.9486832980505138.
  CHECK(*spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 3, 2, 4}) ==
        doctest::Approx(0.9486832980505138).epsilon(1e-12));

  Tensor x = testing::random_tensor({50}, 1), y = testing::random_tensor({50}, 2);
  std::vector<double> tx(50);
  for (std::size_t i = 0; i < 50; ++i) tx[i] = std::exp(3 * x[i]) + 7;
  CHECK(*spearman(tx, y.data()) == doctest::Approx(*spearman(x.data(), y.data())).epsilon(1e-14));
}

TEST_CASE("restricted Hadamard inequality") {
  const std::size_t n = 16;
  std::vector<char> full(n, 1);
  std::vector<std::vector<char>> masks{full};

  std::vector<Complex> one(n, 0.0);
  one[3] = Complex(2.0, 1.0);
  std::vector<std::vector<Complex>> aligned{one, one, one};
  CHECK(std::abs(hadamard_bound_check(aligned, masks)[0]) < 1e-12);

  SplitMix64 rng(17);
  double worst = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<std::vector<Complex>> filters(1 + rng.below(4), std::vector<Complex>(n));
    for (auto& f : filters)
      for (auto& z : f) z = Complex(rng.normal(), rng.normal());
    std::vector<std::vector<char>> ms{full, std::vector<char>(n)};
    for (auto& m : ms[1]) m = rng.bernoulli(0.4);
    for (double s : hadamard_bound_check(filters, ms)) worst = std::min(worst, s);
  }
  CHECK(worst >= -1e-12);
}

TEST_CASE("heatmap export") {
  Grid zero{4, 4, std::vector<double>(16, 0.0)};
  const std::string bytes = pgm_bytes(zero, false);
  CHECK(bytes.substr(0, 11) == "P5\n4 4\n255\n");
  CHECK(bytes.size() == 11 + 16);
  for (std::size_t i = 11; i < bytes.size(); ++i) CHECK(bytes[i] == bytes[11]);
  CHECK(pgm_bytes(zero, true) == bytes);

  Grid ramp{1, 2, {0.0, 3.0}};
  const std::string r = pgm_bytes(ramp, false);
  CHECK(static_cast<unsigned char>(r.back()) == 255);
  CHECK(static_cast<unsigned char>(r[r.size() - 2]) == 0);
}
