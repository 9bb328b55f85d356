#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fet/autodiff.hpp"

// Differentiable operations on Tape variables. Spatial tensors are H x W x C
// (channels last); token tensors are n x D with n = H * W in row-major order.
namespace fet::ops {

// Elementwise binary ops broadcast numpy-style (trailing dimensions aligned,
// extent-1 or missing dimensions stretched).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Shape broadcast_shape(const Shape& a, const Shape& b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var sigmoid(Var a);
Var gelu(Var a);  // exact erf form
Var exp(Var a);
Var log(Var a);
// Subgradient at 0 is 0.
Var relu(Var a);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, std::size_t axis, bool keepdim = false);
Var mean_axis(Var a, std::size_t axis, bool keepdim = false);

Var matmul(Var a, Var b);
// x[..., in] * w[in, out] (+ bias[out]).
Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt);

Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);
// Normalizes over the last axis.
Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-6);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};
// Cross-correlation. x: H x W x Cin, kernel: kh x kw x (Cin/groups) x Cout.
Var conv2d(Var x, Var kernel, std::optional<Var> bias = std::nullopt, Conv2dOptions opt = {});

enum class StackMode { preserve, fuse };
// x: 3 x H x W x C stack; kernel: [3] (shared) or [3, C] (per channel) taps
// along the stack axis. preserve keeps extent 3 (zero padded), fuse yields 1.
Var conv_across_axis(Var x, Var kernel, std::optional<Var> bias, StackMode mode);

Var reshape(Var x, Shape shape);
Var transpose(Var x, std::vector<std::size_t> perm);
Var transpose2d(Var x);
Var concat(const std::vector<Var>& parts, std::size_t axis);
std::vector<Var> split(Var x, std::size_t axis, const std::vector<std::size_t>& sizes);
Var flatten_spatial(Var x);
Var unflatten_spatial(Var x, std::size_t height, std::size_t width);

enum class Resample { down2_avg, up2_nearest, up2_bilinear };
Var resample(Var x, Resample mode);
// Half-pixel bilinear interpolation with border clamping.
Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);
Var pad_edge(Var x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);
Var crop(Var x, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
// Separable blur with the same 1D kernel along H and W, edge-replicate borders.
Var blur_separable(Var x, std::span<const double> kernel);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

}  // namespace fet::ops
