#pragma once

#include "fet/autodiff.hpp"

namespace fet::wavelet {

// One level of the orthonormal 2D Haar transform. For each 2x2 block
// [[a, b], [c, d]] (rows first):
//   LL = (a + b + c + d) / 2    texture
//   LH = (a + b - c - d) / 2    horizontal details (low-pass across columns, high-pass down rows)
//   HL = (a - b + c - d) / 2    vertical details
//   HH = (a - b - c + d) / 2    diagonal details
struct SubbandTensors {
  Tensor ll, lh, hl, hh;
  Shape source_shape;
};

struct WaveletSubbands {
  Var ll, lh, hl, hh;
  Shape source_shape;
};

// x: H x W x C with H, W even. Odd extents are rejected; pad explicitly.
SubbandTensors dwt2(const Tensor& x);
Tensor idwt2(const SubbandTensors& s);

WaveletSubbands dwt2(Var x);
Var idwt2(const WaveletSubbands& s);

}  // namespace fet::wavelet
