#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fet/tensor.hpp"

namespace fet::synth {

enum class ShapeKind { ellipse, rectangle, ring };

// Class c >= 1 is drawn as shape (c - 1) % 3; class 0 is background.
ShapeKind shape_of_class(std::size_t c);
std::vector<std::size_t> ring_classes(std::size_t classes);

struct Sample {
  Tensor image;             // H x W x 1
  std::vector<int> labels;  // H * W, row-major
};

struct SynthOptions {
  std::size_t n = 200;
  std::size_t size = 64;
  std::size_t classes = 4;
  std::uint64_t seed = 0;
};

void validate(const SynthOptions& opt);

// The k-th sample depends only on (seed, k).
Sample make_sample(const SynthOptions& opt, std::size_t k);

struct Dataset {
  std::size_t size = 0, classes = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
};

// Writes images/NNNNN.ften, labels/NNNNN.ften and index.json under dir.
void write_dataset(const std::filesystem::path& dir, const SynthOptions& opt);
Dataset read_dataset(const std::filesystem::path& dir);

std::vector<std::size_t> class_histogram(const Dataset& d);

}  // namespace fet::synth
