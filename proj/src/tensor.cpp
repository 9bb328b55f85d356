#include "fet/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void round_to(Precision p, std::span<double> values) {
  if (p == Precision::f64) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                         std::to_string(shape.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<std::size_t> index) { return data[flat_index(shape, index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data[flat_index(shape, index)];
}

double Tensor::item() const {
  if (data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape));
  return data[0];
}

std::vector<double>& Tensor::ensure_grad() {
  if (!grad || grad->size() != data.size()) grad.emplace(data.size(), 0.0);
  return *grad;
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data) s += v * v;
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// ---- FTEN -------------------------------------------------------------------

namespace {
constexpr std::uint8_t kMagic[4] = {'F', 'T', 'E', 'N'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}
}  // namespace

std::vector<std::uint8_t> encode_ften(const Tensor& t, FtenDtype dtype) {
  if (t.rank() > 255) throw DimensionError("FTEN supports rank <= 255");
  std::vector<std::uint8_t> out;
  const std::size_t width = dtype == FtenDtype::f32 ? 4 : 8;
  out.reserve(8 + 8 * t.rank() + width * t.size());
  for (auto c : kMagic) out.push_back(c);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.push_back(0);
  for (auto e : t.shape) put_u64(out, e);
  for (double v : t.data) {
    if (dtype == FtenDtype::f32) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_ften(std::span<const std::uint8_t> bytes, FtenDtype* dtype_out) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not an FTEN file (bad magic)");
  }
  if (bytes[4] != kVersion) throw IoError("unsupported FTEN version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw IoError("unknown FTEN dtype " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw IoError("FTEN reserved byte must be zero");
  const auto dtype = static_cast<FtenDtype>(bytes[5]);
  const std::size_t rank = bytes[6];
  const std::size_t width = dtype == FtenDtype::f32 ? 4 : 8;
  if (bytes.size() < 8 + 8 * rank) throw IoError("truncated FTEN header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u64(bytes, 8 + 8 * i);
  const std::size_t n = numel(shape);
  const std::size_t payload = 8 + 8 * rank;
  if (bytes.size() != payload + width * n) throw IoError("FTEN payload size mismatch");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = payload + width * i;
    if (dtype == FtenDtype::f32) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[at + b]) << (8 * b);
      data[i] = static_cast<double>(std::bit_cast<float>(bits));
    } else {
      data[i] = std::bit_cast<double>(get_u64(bytes, at));
    }
  }
  if (dtype_out) *dtype_out = dtype;
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_ften(const std::filesystem::path& path, const Tensor& t, FtenDtype dtype) {
  write_file_bytes(path, encode_ften(t, dtype));
}

Tensor read_ften(const std::filesystem::path& path, FtenDtype* dtype_out) {
  const auto bytes = read_file_bytes(path);
  return decode_ften(bytes, dtype_out);
}

}  // namespace fet
