#pragma once

#include <cmath>

#include "fet/rng.hpp"
#include "fet/tensor.hpp"

namespace fet::init {

inline Tensor trunc_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.truncated_normal(stddev);
  return t;
}

// Kaiming-normal over the fan-in of every dimension but the last. The default
// gain suits a following ReLU/GELU; layers feeding a linear path want gain 1.
inline Tensor kaiming(Shape shape, Rng& rng, double gain = std::sqrt(2.0)) {
  Tensor t(std::move(shape));
  const double fan_in = static_cast<double>(t.size() / t.shape.back());
  const double stddev = gain / std::sqrt(fan_in);
  for (auto& v : t.data) v = stddev * rng.normal();
  return t;
}

inline Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0); }

}  // namespace fet::init
