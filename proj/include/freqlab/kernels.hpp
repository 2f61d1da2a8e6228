#pragma once

// Compute kernels used by the autodiff engine.
//
// Every kernel in `freqlab::kernels` is OpenMP-parallel over an index that
// owns its output elements (batch row, output channel, weight block), so the
// summation order never depends on the thread count and results are
// bitwise reproducible. `freqlab::kernels::serial` holds straightforward
// textbook loops kept as test oracles and benchmark baselines.

#include <cstddef>
#include <span>

namespace freqlab {

enum class Padding { Circular, Zero };

namespace kernels {

/// Geometry of a square-kernel stride-1 spatial layer on [B, Cin, H, W] input.
/// Kernel tap `a` reads input row `i - (a - k/2)` for output row `i`, so a
/// delta at tap k/2 is the identity and the circular case is a true circular
/// convolution with the kernel embedded at offsets -(k/2) .. k-1-(k/2).
struct SpatialGeom {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 1;
  Padding padding = Padding::Circular;

  std::size_t in_size() const { return batch * in_channels * height * width; }
  std::size_t out_size() const { return batch * out_channels * height * width; }
  std::size_t conv_weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t local_weight_size() const {
    return out_channels * height * width * in_channels * kernel * kernel;
  }
};

/// Y[M,N] = X[M,K] * W[N,K]^T
void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t m, std::size_t k, std::size_t n);
/// dX[M,K] = dY[M,N] * W[N,K]
void matmul_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       std::size_t m, std::size_t k, std::size_t n);
/// dW[N,K] = dY[M,N]^T * X[M,K]
void matmul_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        std::size_t m, std::size_t k, std::size_t n);

/// Per-token matmul: Y[B,T,N] = X[B,T,K] * W[T,N,K]^T (each token has its own weights).
void token_matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
                  std::size_t batch, std::size_t tokens, std::size_t k, std::size_t n);
void token_matmul_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                             std::size_t batch, std::size_t tokens, std::size_t k, std::size_t n);
void token_matmul_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                              std::size_t batch, std::size_t tokens, std::size_t k, std::size_t n);

/// Weight layout [Cout, Cin, k, k].
void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g);
void conv2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       const SpatialGeom& g);
void conv2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        const SpatialGeom& g);

/// Locally connected (untied) weights, layout [Cout, H, W, Cin, k, k].
void local2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g);
void local2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                        const SpatialGeom& g);
void local2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                         const SpatialGeom& g);

/// Multi-head scaled dot-product attention on [B, T, E] inputs.
/// `probs` receives the [B, heads, T, T] attention weights for the backward pass.
void attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
               std::span<double> out, std::span<double> probs, std::size_t batch, std::size_t tokens,
               std::size_t embed, std::size_t heads);
void attention_grad(std::span<const double> dout, std::span<const double> q, std::span<const double> k,
                    std::span<const double> v, std::span<const double> probs, std::span<double> dq,
                    std::span<double> dk, std::span<double> dv, std::size_t batch, std::size_t tokens,
                    std::size_t embed, std::size_t heads);

namespace serial {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t m, std::size_t k, std::size_t n);
void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g);
void conv2d_grad_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                       const SpatialGeom& g);
void conv2d_grad_weight(std::span<const double> dy, std::span<const double> x, std::span<double> dw,
                        const SpatialGeom& g);
void local2d(std::span<const double> x, std::span<const double> w, std::span<double> y, const SpatialGeom& g);
void attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
               std::span<double> out, std::size_t batch, std::size_t tokens, std::size_t embed,
               std::size_t heads);

}  // namespace serial

/// Source coordinate for output coordinate `i` and tap offset `offset`, or -1
/// when zero padding places it outside the image.
inline long source_index(long i, long offset, long extent, Padding padding) {
  long s = i - offset;
  if (padding == Padding::Circular) {
    s %= extent;
    return s < 0 ? s + extent : s;
  }
  return (s < 0 || s >= extent) ? -1 : s;
}

}  // namespace kernels
}  // namespace freqlab
