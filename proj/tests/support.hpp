#pragma once

#include <cstdint>

#include "freqlab/rng.hpp"
#include "freqlab/tensor.hpp"

namespace testing {

inline freqlab::Tensor random_tensor(freqlab::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  freqlab::Tensor t(std::move(shape));
  freqlab::SplitMix64 rng(seed);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace testing
