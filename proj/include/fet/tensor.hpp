#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fet {

using Shape = std::vector<std::size_t>;

// Error taxonomy shared by every module.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value went NaN or infinite where a module requires finite input.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage precision. f32 rounds every stored value to single precision; the
// arithmetic itself always runs in double.
enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

inline double round_to(Precision p, double v) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}
void round_to(Precision p, std::span<double> values);

/// Dense row-major array with an optional gradient buffer of the same shape.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;

  Tensor() : shape{}, data(1, 0.0) {}
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<double> values);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  double item() const;
  std::vector<double>& ensure_grad();
  void zero_grad();
  bool all_finite() const;
  double squared_norm() const;
};

std::vector<std::size_t> strides_of(const Shape& shape);

// ---- FTEN v1 --------------------------------------------------------------
// magic "FTEN", u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank, u8 reserved=0,
// rank x u64 LE extents, then the row-major payload in little endian.

enum class FtenDtype : std::uint8_t { f32 = 0, f64 = 1 };

std::vector<std::uint8_t> encode_ften(const Tensor& t, FtenDtype dtype);
Tensor decode_ften(std::span<const std::uint8_t> bytes, FtenDtype* dtype_out = nullptr);

void write_ften(const std::filesystem::path& path, const Tensor& t, FtenDtype dtype);
Tensor read_ften(const std::filesystem::path& path, FtenDtype* dtype_out = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fet
