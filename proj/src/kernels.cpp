#include "freqlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace freqlab::kernels {
namespace {

// Four independent partial sums let the compiler vectorize without
// reassociation flags while keeping a fixed summation order.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// dst[j] += scale * src[j - shift] with circular or zero boundary handling.
inline void add_shifted_row(double* dst, const double* src, long width, long shift, double scale,
                            Padding padding) {
  const long lo = std::max(0L, shift);
  const long hi = std::min(width, width + shift);
  for (long j = lo; j < hi; ++j) dst[j] += scale * src[j - shift];
  if (padding == Padding::Zero) return;
  for (long j = 0; j < lo; ++j) dst[j] += scale * src[j - shift + width];
  for (long j = hi; j < width; ++j) dst[j] += scale * src[j - shift - width];
}

// sum_j a[j] * src[j - shift]
inline double dot_shifted_row(const double* a, const double* src, long width, long shift, Padding padding) {
  const long lo = std::max(0L, shift);
  const long hi = std::min(width, width + shift);
  double s = dot(a + lo, src + lo - shift, static_cast<std::size_t>(std::max(0L, hi - lo)));
  if (padding == Padding::Zero) return s;
  for (long j = 0; j < lo; ++j) s += a[j] * src[j - shift + width];
  for (long j = hi; j < width; ++j) s += a[j] * src[j - shift - width];
  return s;
}

inline long half(std::size_t k) { return static_cast<long>(k / 2); }

}  // namespace

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y, std::size_t m,
            std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(m); ++r) {
    const double* xr = x.data() + r * k;
    double* yr = y.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) yr[c] = dot(xr, w.data() + c * k, k);
  }
}

void matmul_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(m); ++r) {
    double* dxr = dx.data() + r * k;
    std::fill(dxr, dxr + k, 0.0);
    const double* dyr = dy.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      if (dyr[c] != 0.0) axpy(dyr[c], w.data() + c * k, dxr, k);
    }
  }
}

void matmul_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long c = 0; c < static_cast<long>(n); ++c) {
    double* dwr = dw.data() + c * k;
    std::fill(dwr, dwr + k, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double g = dy[r * n + c];
      if (g != 0.0) axpy(g, x.data() + r * k, dwr, k);
    }
  }
}

void token_matmul(std::span<const double> x, std::span<const double> w, std::span<double> y, std::size_t batch,
                  std::size_t tokens, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long bt = 0; bt < static_cast<long>(batch * tokens); ++bt) {
    const std::size_t t = static_cast<std::size_t>(bt) % tokens;
    const double* xr = x.data() + bt * k;
    const double* wt = w.data() + t * n * k;
    double* yr = y.data() + bt * n;
    for (std::size_t c = 0; c < n; ++c) yr[c] = dot(xr, wt + c * k, k);
  }
}

void token_matmul_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                             std::size_t batch, std::size_t tokens, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long bt = 0; bt < static_cast<long>(batch * tokens); ++bt) {
    const std::size_t t = static_cast<std::size_t>(bt) % tokens;
    double* dxr = dx.data() + bt * k;
    std::fill(dxr, dxr + k, 0.0);
    const double* dyr = dy.data() + bt * n;
    for (std::size_t c = 0; c < n; ++c) axpy(dyr[c], w.data() + (t * n + c) * k, dxr, k);
  }
}

void token_matmul_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                              std::size_t batch, std::size_t tokens, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long tc = 0; tc < static_cast<long>(tokens * n); ++tc) {
    const std::size_t t = static_cast<std::size_t>(tc) / n;
    const std::size_t c = static_cast<std::size_t>(tc) % n;
    double* dwr = dw.data() + tc * k;
    std::fill(dwr, dwr + k, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t bt = b * tokens + t;
      axpy(dy[bt * n + c], x.data() + bt * k, dwr, k);
    }
  }
}

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < static_cast<long>(g.batch * g.out_channels); ++bc) {
    const std::size_t b = static_cast<std::size_t>(bc) / g.out_channels;
    const std::size_t co = static_cast<std::size_t>(bc) % g.out_channels;
    double* yp = y.data() + bc * plane;
    std::fill(yp, yp + plane, 0.0);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* xp = x.data() + (b * g.in_channels + ci) * plane;
      const double* wk = w.data() + (co * g.in_channels + ci) * K * K;
      for (std::size_t a = 0; a < K; ++a) {
        const long oa = static_cast<long>(a) - half(K);
        for (long i = 0; i < H; ++i) {
          const long r = source_index(i, oa, H, g.padding);
          if (r < 0) continue;
          for (std::size_t bb = 0; bb < K; ++bb) {
            const double wv = wk[a * K + bb];
            if (wv == 0.0) continue;
            add_shifted_row(yp + i * W, xp + r * W, W, static_cast<long>(bb) - half(K), wv, g.padding);
          }
        }
      }
    }
  }
}

void conv2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < static_cast<long>(g.batch * g.in_channels); ++bc) {
    const std::size_t b = static_cast<std::size_t>(bc) / g.in_channels;
    const std::size_t ci = static_cast<std::size_t>(bc) % g.in_channels;
    double* dxp = dx.data() + bc * plane;
    std::fill(dxp, dxp + plane, 0.0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* dyp = dy.data() + (b * g.out_channels + co) * plane;
      const double* wk = w.data() + (co * g.in_channels + ci) * K * K;
      for (std::size_t a = 0; a < K; ++a) {
        const long oa = static_cast<long>(a) - half(K);
        for (long p = 0; p < H; ++p) {
          const long r = source_index(p, -oa, H, g.padding);
          if (r < 0) continue;
          for (std::size_t bb = 0; bb < K; ++bb) {
            const double wv = wk[a * K + bb];
            if (wv == 0.0) continue;
            add_shifted_row(dxp + p * W, dyp + r * W, W, -(static_cast<long>(bb) - half(K)), wv, g.padding);
          }
        }
      }
    }
  }
}

void conv2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
#pragma omp parallel for schedule(static)
  for (long cc = 0; cc < static_cast<long>(g.out_channels * g.in_channels); ++cc) {
    const std::size_t co = static_cast<std::size_t>(cc) / g.in_channels;
    const std::size_t ci = static_cast<std::size_t>(cc) % g.in_channels;
    double* wk = dw.data() + cc * K * K;
    std::fill(wk, wk + K * K, 0.0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* dyp = dy.data() + (b * g.out_channels + co) * plane;
      const double* xp = x.data() + (b * g.in_channels + ci) * plane;
      for (std::size_t a = 0; a < K; ++a) {
        const long oa = static_cast<long>(a) - half(K);
        for (long i = 0; i < H; ++i) {
          const long r = source_index(i, oa, H, g.padding);
          if (r < 0) continue;
          for (std::size_t bb = 0; bb < K; ++bb) {
            wk[a * K + bb] +=
                dot_shifted_row(dyp + i * W, xp + r * W, W, static_cast<long>(bb) - half(K), g.padding);
          }
        }
      }
    }
  }
}

void local2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
  const std::size_t taps = g.in_channels * K * K;
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < static_cast<long>(g.batch * g.out_channels); ++bc) {
    const std::size_t b = static_cast<std::size_t>(bc) / g.out_channels;
    const std::size_t co = static_cast<std::size_t>(bc) % g.out_channels;
    double* yp = y.data() + bc * plane;
    for (long i = 0; i < H; ++i) {
      for (long j = 0; j < W; ++j) {
        const double* wp = w.data() + ((co * g.height + i) * g.width + j) * taps;
        double s = 0.0;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
          const double* xp = x.data() + (b * g.in_channels + ci) * plane;
          for (std::size_t a = 0; a < K; ++a) {
            const long r = source_index(i, static_cast<long>(a) - half(K), H, g.padding);
            if (r < 0) continue;
            for (std::size_t bb = 0; bb < K; ++bb) {
              const long c = source_index(j, static_cast<long>(bb) - half(K), W, g.padding);
              if (c < 0) continue;
              s += wp[(ci * K + a) * K + bb] * xp[r * W + c];
            }
          }
        }
        yp[i * W + j] = s;
      }
    }
  }
}

void local2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                        const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
  const std::size_t taps = g.in_channels * K * K;
#pragma omp parallel for schedule(static)
  for (long b = 0; b < static_cast<long>(g.batch); ++b) {
    double* dxb = dx.data() + b * g.in_channels * plane;
    std::fill(dxb, dxb + g.in_channels * plane, 0.0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* dyp = dy.data() + (b * g.out_channels + co) * plane;
      for (long i = 0; i < H; ++i) {
        for (long j = 0; j < W; ++j) {
          const double gy = dyp[i * W + j];
          if (gy == 0.0) continue;
          const double* wp = w.data() + ((co * g.height + i) * g.width + j) * taps;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            double* dxp = dxb + ci * plane;
            for (std::size_t a = 0; a < K; ++a) {
              const long r = source_index(i, static_cast<long>(a) - half(K), H, g.padding);
              if (r < 0) continue;
              for (std::size_t bb = 0; bb < K; ++bb) {
                const long c = source_index(j, static_cast<long>(bb) - half(K), W, g.padding);
                if (c < 0) continue;
                dxp[r * W + c] += gy * wp[(ci * K + a) * K + bb];
              }
            }
          }
        }
      }
    }
  }
}

void local2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                         const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t plane = g.height * g.width;
  const std::size_t K = g.kernel;
  const std::size_t taps = g.in_channels * K * K;
#pragma omp parallel for schedule(static)
  for (long ci_row = 0; ci_row < static_cast<long>(g.out_channels * g.height); ++ci_row) {
    const std::size_t co = static_cast<std::size_t>(ci_row) / g.height;
    const long i = ci_row % H;
    for (long j = 0; j < W; ++j) {
      double* wp = dw.data() + ((co * g.height + i) * g.width + j) * taps;
      std::fill(wp, wp + taps, 0.0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double gy = dy[(b * g.out_channels + co) * plane + i * W + j];
        if (gy == 0.0) continue;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
          const double* xp = x.data() + (b * g.in_channels + ci) * plane;
          for (std::size_t a = 0; a < K; ++a) {
            const long r = source_index(i, static_cast<long>(a) - half(K), H, g.padding);
            if (r < 0) continue;
            for (std::size_t bb = 0; bb < K; ++bb) {
              const long c = source_index(j, static_cast<long>(bb) - half(K), W, g.padding);
              if (c < 0) continue;
              wp[(ci * K + a) * K + bb] += gy * xp[r * W + c];
            }
          }
        }
      }
    }
  }
}

void attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
               std::span<double> out, std::span<double> probs, std::size_t batch, std::size_t tokens,
               std::size_t embed, std::size_t heads) {
  const std::size_t d = embed / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
#pragma omp parallel for schedule(static)
  for (long bh = 0; bh < static_cast<long>(batch * heads); ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / heads;
    const std::size_t h = static_cast<std::size_t>(bh) % heads;
    double* P = probs.data() + bh * tokens * tokens;
    std::vector<double> qrow(d), krow(d);
    for (std::size_t t = 0; t < tokens; ++t) {
      const double* qt = q.data() + (b * tokens + t) * embed + h * d;
      double* Pt = P + t * tokens;
      double mx = -INFINITY;
      for (std::size_t s = 0; s < tokens; ++s) {
        Pt[s] = scale * dot(qt, k.data() + (b * tokens + s) * embed + h * d, d);
        mx = std::max(mx, Pt[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s < tokens; ++s) {
        Pt[s] = std::exp(Pt[s] - mx);
        z += Pt[s];
      }
      for (std::size_t s = 0; s < tokens; ++s) Pt[s] /= z;
      double* ot = out.data() + (b * tokens + t) * embed + h * d;
      std::fill(ot, ot + d, 0.0);
      for (std::size_t s = 0; s < tokens; ++s) axpy(Pt[s], v.data() + (b * tokens + s) * embed + h * d, ot, d);
    }
  }
}

void attention_grad(std::span<const double> dout, std::span<const double> q, std::span<const double> k,
                    std::span<const double> v, std::span<const double> probs, std::span<double> dq,
                    std::span<double> dk, std::span<double> dv, std::size_t batch, std::size_t tokens,
                    std::size_t embed, std::size_t heads) {
  const std::size_t d = embed / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  // dq, dk, dv are written per (b, h) column block, so blocks never overlap.
#pragma omp parallel for schedule(static)
  for (long bh = 0; bh < static_cast<long>(batch * heads); ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / heads;
    const std::size_t h = static_cast<std::size_t>(bh) % heads;
    const double* P = probs.data() + bh * tokens * tokens;
    std::vector<double> dP(tokens);
    for (std::size_t t = 0; t < tokens; ++t) {
      double* dqt = dq.data() + (b * tokens + t) * embed + h * d;
      double* dkt = dk.data() + (b * tokens + t) * embed + h * d;
      double* dvt = dv.data() + (b * tokens + t) * embed + h * d;
      std::fill(dqt, dqt + d, 0.0);
      std::fill(dkt, dkt + d, 0.0);
      std::fill(dvt, dvt + d, 0.0);
    }
    for (std::size_t t = 0; t < tokens; ++t) {
      const double* got = dout.data() + (b * tokens + t) * embed + h * d;
      const double* Pt = P + t * tokens;
      double rowdot = 0.0;
      for (std::size_t s = 0; s < tokens; ++s) {
        dP[s] = dot(got, v.data() + (b * tokens + s) * embed + h * d, d);
        rowdot += dP[s] * Pt[s];
        axpy(Pt[s], got, dv.data() + (b * tokens + s) * embed + h * d, d);
      }
      const double* qt = q.data() + (b * tokens + t) * embed + h * d;
      double* dqt = dq.data() + (b * tokens + t) * embed + h * d;
      for (std::size_t s = 0; s < tokens; ++s) {
        const double ds = Pt[s] * (dP[s] - rowdot) * scale;
        if (ds == 0.0) continue;
        axpy(ds, k.data() + (b * tokens + s) * embed + h * d, dqt, d);
        axpy(ds, qt, dk.data() + (b * tokens + s) * embed + h * d, d);
      }
    }
  }
}

namespace serial {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += x[r * k + i] * w[c * k + i];
      y[r * n + c] = s;
    }
}

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), K = static_cast<long>(g.kernel);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (long a = 0; a < K; ++a)
              for (long bb = 0; bb < K; ++bb) {
                const long r = source_index(i, a - K / 2, H, g.padding);
                const long c = source_index(j, bb - K / 2, W, g.padding);
                if (r < 0 || c < 0) continue;
                s += w[((co * g.in_channels + ci) * K + a) * K + bb] *
                     x[((b * g.in_channels + ci) * H + r) * W + c];
              }
          y[((b * g.out_channels + co) * H + i) * W + j] = s;
        }
}

void conv2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), K = static_cast<long>(g.kernel);
  std::fill(dx.begin(), dx.end(), 0.0);
  // Scatter form of the adjoint: every forward product w * x contributes w * dy to dx.
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j)
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (long a = 0; a < K; ++a)
              for (long bb = 0; bb < K; ++bb) {
                const long r = source_index(i, a - K / 2, H, g.padding);
                const long c = source_index(j, bb - K / 2, W, g.padding);
                if (r < 0 || c < 0) continue;
                dx[((b * g.in_channels + ci) * H + r) * W + c] +=
                    w[((co * g.in_channels + ci) * K + a) * K + bb] * dy[((b * g.out_channels + co) * H + i) * W + j];
              }
}

void conv2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), K = static_cast<long>(g.kernel);
  std::fill(dw.begin(), dw.end(), 0.0);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j)
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (long a = 0; a < K; ++a)
              for (long bb = 0; bb < K; ++bb) {
                const long r = source_index(i, a - K / 2, H, g.padding);
                const long c = source_index(j, bb - K / 2, W, g.padding);
                if (r < 0 || c < 0) continue;
                dw[((co * g.in_channels + ci) * K + a) * K + bb] +=
                    x[((b * g.in_channels + ci) * H + r) * W + c] * dy[((b * g.out_channels + co) * H + i) * W + j];
              }
}

void local2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), K = static_cast<long>(g.kernel);
  const std::size_t Ci = g.in_channels;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (long a = 0; a < K; ++a)
              for (long bb = 0; bb < K; ++bb) {
                const long r = source_index(i, a - K / 2, H, g.padding);
                const long c = source_index(j, bb - K / 2, W, g.padding);
                if (r < 0 || c < 0) continue;
                const std::size_t widx = ((((co * H + i) * W + j) * Ci + ci) * K + a) * K + bb;
                s += w[widx] * x[((b * Ci + ci) * H + r) * W + c];
              }
          y[((b * g.out_channels + co) * H + i) * W + j] = s;
        }
}

void attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
               std::span<double> out, std::size_t batch, std::size_t tokens, std::size_t embed,
               std::size_t heads) {
  const std::size_t d = embed / heads;
  std::vector<double> scores(tokens);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t s = 0; s < tokens; ++s) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e)
            acc += q[(b * tokens + t) * embed + h * d + e] * k[(b * tokens + s) * embed + h * d + e];
          scores[s] = acc / std::sqrt(static_cast<double>(d));
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double& s : scores) z += (s = std::exp(s - mx));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0.0;
          for (std::size_t s = 0; s < tokens; ++s) acc += scores[s] / z * v[(b * tokens + s) * embed + h * d + e];
          out[(b * tokens + t) * embed + h * d + e] = acc;
        }
      }
}

}  // namespace serial
}  // namespace freqlab::kernels
