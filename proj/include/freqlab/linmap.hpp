#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "freqlab/data.hpp"
#include "freqlab/models.hpp"
#include "freqlab/spectral.hpp"

namespace freqlab::linmap {

using Matrix = Eigen::MatrixXd;

/// Explicit end-to-end map of layers [0, upto): out-extent x in-extent,
/// acting on row-major vec(x) of the [C, H, W] input.
struct LinearMap {
  Matrix matrix;
  std::size_t upto = 0;
  std::size_t channels = 1;  // input image extents, used to read rows as images
  std::size_t height = 1;
  std::size_t width = 1;
};

// ---- building blocks

/// Dense weights [N, K] are already the matrix.
Matrix dense_matrix(const Tensor& w);
/// Block-circulant (circular padding) or block-Toeplitz (zero padding) matrix
/// of a [Cout, Cin, k, k] convolution on H x W images.
Matrix conv_matrix(const Tensor& w, std::size_t height, std::size_t width, Padding padding);
/// Matrix of a [Cout, H, W, Cin, k, k] locally connected layer.
Matrix local_matrix(const Tensor& w, std::size_t height, std::size_t width, Padding padding);

/// Matrix of layer `layer` of a model (bias of the head excluded). Fails for
/// layers with a nonlinearity or without a matrix form.
Matrix layer_to_matrix(const models::Model& model, const Params& params, std::size_t layer);

/// Product of the layer matrices of layers [0, upto) in forward order.
/// Fails naming the layer when a nonlinearity is met; callers should then use saliency_beta.
LinearMap end_to_end_beta(const models::Model& model, const Params& params, std::size_t upto);

/// Largest |matrix * vec(x) - layer(x)| over random probes, with the layer
/// evaluated by the compute kernels.
double verify_equivalence(const models::Model& model, const Params& params, std::size_t layer,
                          std::size_t probes = 4, std::uint64_t seed = 1);

// ---- saliency

enum class SaliencyTarget { TopLogit, Loss };

struct SaliencySet {
  Tensor gradients;  // [N, C, H, W]
  std::vector<std::size_t> targets;  // class used per example
  SaliencyTarget rule = SaliencyTarget::TopLogit;
};

/// d(logit of the predicted class)/dx per example, or d(cross-entropy)/dx
/// against the true label when rule == Loss.
SaliencySet saliency_beta(const models::Model& model, const Params& params, const data::Dataset& ds,
                          SaliencyTarget rule = SaliencyTarget::TopLogit);

// ---- spectra of maps

/// Rows of the map as [C, H, W] images.
std::vector<Tensor> rows_as_images(const LinearMap& map);

/// Energy inside / total of the centered low-frequency region summed over
/// all rows and channels, so kappa_high(map) is energy-weighted across rows.
spectral::BandEnergy band_energy(const LinearMap& map, double k,
                                 spectral::Region region = spectral::Region::Square);

/// Mean over rows (and channels) of |DFT| of each row image.
spectral::Grid mean_row_magnitude(const LinearMap& map);

}  // namespace freqlab::linmap
