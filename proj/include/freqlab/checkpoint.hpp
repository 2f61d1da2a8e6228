#pragma once

// Binary tensor container.
//
// Layout, all integers little-endian:
//   magic      8 bytes  "FQLTNSR1"
//   version    u32      currently 1
//   count      u32      number of tensors
//   count x entry header:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, rank x u64 extents
//   payload    for each tensor in header order, numel x f64 (IEEE-754, little-endian)
//
// A rank-0 entry holds one scalar.

#include <string>
#include <utility>
#include <vector>

#include "freqlab/tensor.hpp"

namespace freqlab {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::string encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::string& bytes);

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

/// Whole-file helpers shared by loaders and writers.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace freqlab
