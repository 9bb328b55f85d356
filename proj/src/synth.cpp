#include "fet/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fet/checkpoint.hpp"
#include "fet/rng.hpp"

namespace fet::synth {

namespace fs = std::filesystem;

ShapeKind shape_of_class(std::size_t c) {
  if (c == 0) throw ConfigError("class 0 is background");
  switch ((c - 1) % 3) {
    case 0: return ShapeKind::ellipse;
    case 1: return ShapeKind::rectangle;
    default: return ShapeKind::ring;
  }
}

std::vector<std::size_t> ring_classes(std::size_t classes) {
  std::vector<std::size_t> out;
  for (std::size_t c = 1; c < classes; ++c) {
    if (shape_of_class(c) == ShapeKind::ring) out.push_back(c);
  }
  return out;
}

void validate(const SynthOptions& opt) {
  if (opt.n == 0) throw ConfigError("dataset needs at least one sample");
  if (opt.size == 0 || opt.size % 32 != 0) throw ConfigError("image size must be a positive multiple of 32");
  if (opt.classes < 2) throw ConfigError("need at least 2 classes");
}

namespace {

struct ShapeDesc {
  ShapeKind kind;
  double cy, cx, ry, rx, angle, thickness;
};

bool inside(const ShapeDesc& s, double y, double x) {
  const double dy = y - s.cy, dx = x - s.cx;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = c * dx + sn * dy, v = -sn * dx + c * dy;
  switch (s.kind) {
    case ShapeKind::ellipse: return (u * u) / (s.rx * s.rx) + (v * v) / (s.ry * s.ry) <= 1.0;
    case ShapeKind::rectangle: return std::abs(u) <= s.rx && std::abs(v) <= s.ry;
    case ShapeKind::ring: return std::abs(std::sqrt(dx * dx + dy * dy) - s.rx) <= s.thickness / 2.0;
  }
  return false;
}

// Fraction of a 4x4 subpixel grid inside the shape.
double coverage(const ShapeDesc& s, std::size_t i, std::size_t j) {
  int hits = 0;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      if (inside(s, i + (a + 0.5) / 4.0, j + (b + 0.5) / 4.0)) ++hits;
    }
  }
  return hits / 16.0;
}

std::string sample_name(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.ften", k);
  return buf;
}

}  // namespace

Sample make_sample(const SynthOptions& opt, std::size_t k) {
  validate(opt);
  const std::size_t N = opt.size;
  const double n = static_cast<double>(N);
  Rng rng(opt.seed, 0x73796e00ULL + k);
  Sample s;
  s.image = Tensor({N, N, 1});
  s.labels.assign(N * N, 0);

  // background: two low-frequency gratings plus a base level
  const double base = rng.uniform(0.1, 0.3);
  double f[2][3];
  for (auto& g : f) {
    g[0] = rng.uniform(1.0, 4.0) / n;
    g[1] = rng.uniform(0.0, std::numbers::pi);
    g[2] = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  auto& img = s.image.data;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double v = base;
      for (auto& g : f) {
        v += 0.08 * std::sin(2 * std::numbers::pi * g[0] * (std::cos(g[1]) * j + std::sin(g[1]) * i) + g[2]);
      }
      img[i * N + j] = v;
    }
  }

  // Shapes are placed apart so every pixel has one unambiguous owner, and each
  // class draws its level from its own band; what stays hard is the boundary.
  std::vector<std::array<double, 3>> placed;  // cy, cx, bounding radius
  const double band = 0.4 / static_cast<double>(opt.classes - 1);
  for (std::size_t c = 1; c < opt.classes; ++c) {
    ShapeDesc d{};
    d.kind = shape_of_class(c);
    d.angle = rng.uniform(0.0, std::numbers::pi);
    if (d.kind == ShapeKind::ring) {
      d.rx = d.ry = rng.uniform(0.1, 0.22) * n;
      d.thickness = rng.uniform(1.0, 2.0);
    } else {
      d.ry = rng.uniform(0.08, 0.2) * n;
      d.rx = rng.uniform(0.08, 0.2) * n;
    }
    const double radius = d.kind == ShapeKind::rectangle ? std::hypot(d.rx, d.ry) : std::max(d.rx, d.ry);
    const double margin = std::max(d.rx, d.ry) + 2.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      d.cy = rng.uniform(margin, n - margin);
      d.cx = rng.uniform(margin, n - margin);
      bool clear = true;
      for (const auto& q : placed) clear = clear && std::hypot(d.cy - q[0], d.cx - q[1]) > radius + q[2] + 2.0;
      if (clear) break;  // otherwise the last draw stands and overlaps
    }
    placed.push_back({d.cy, d.cx, radius});
    const double lo = 0.6 + band * static_cast<double>(c - 1);
    const double level = rng.uniform(lo + 0.25 * band, lo + 0.75 * band);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < N; ++j) {
        const double cov = coverage(d, i, j);
        if (cov == 0.0) continue;
        img[i * N + j] = (1.0 - cov) * img[i * N + j] + cov * level;
        if (cov >= 0.5) s.labels[i * N + j] = static_cast<int>(c);
      }
    }
  }
  for (double& v : img) v += 0.05 * rng.normal();
  return s;
}

void write_dataset(const fs::path& dir, const SynthOptions& opt) {
  validate(opt);
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (!ec) fs::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  std::vector<std::size_t> hist(opt.classes, 0);
  for (std::size_t k = 0; k < opt.n; ++k) {
    Sample s = make_sample(opt, k);
    Tensor lab({opt.size, opt.size});
    for (std::size_t p = 0; p < s.labels.size(); ++p) {
      lab.data[p] = s.labels[p];
      ++hist[static_cast<std::size_t>(s.labels[p])];
    }
    const std::string name = sample_name(k);
    write_ften(dir / "images" / name, s.image, FtenDtype::f64);
    write_ften(dir / "labels" / name, lab, FtenDtype::f64);
    files.push_back({{"image", "images/" + name}, {"label", "labels/" + name}});
  }
  nlohmann::json index{{"format", "fetnet-synth v1"},
                       {"n", opt.n},
                       {"size", opt.size},
                       {"channels", 1},
                       {"classes", opt.classes},
                       {"seed", opt.seed},
                       {"ring_classes", ring_classes(opt.classes)},
                       {"class_pixels", hist},
                       {"samples", files}};
  checkpoint::write_json(dir / "index.json", index);
}

Dataset read_dataset(const fs::path& dir) {
  const auto index = checkpoint::read_json(dir / "index.json");
  Dataset d;
  try {
    d.size = index.at("size").get<std::size_t>();
    d.classes = index.at("classes").get<std::size_t>();
    d.seed = index.at("seed").get<std::uint64_t>();
    for (const auto& e : index.at("samples")) {
      Sample s;
      s.image = read_ften(dir / e.at("image").get<std::string>());
      const Tensor lab = read_ften(dir / e.at("label").get<std::string>());
      if (s.image.shape != Shape{d.size, d.size, 1} || lab.shape != Shape{d.size, d.size}) {
        throw IoError("sample " + e.at("image").get<std::string>() + " does not match the index geometry");
      }
      s.labels.reserve(lab.size());
      for (double v : lab.data) {
        const int c = static_cast<int>(v);
        if (c < 0 || static_cast<std::size_t>(c) >= d.classes || c != v) {
          throw IoError("label value " + std::to_string(v) + " outside 0.." + std::to_string(d.classes - 1));
        }
        s.labels.push_back(c);
      }
      d.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir.string() + "/index.json: " + e.what());
  }
  return d;
}

std::vector<std::size_t> class_histogram(const Dataset& d) {
  std::vector<std::size_t> h(d.classes, 0);
  for (const auto& s : d.samples) {
    for (int c : s.labels) ++h[static_cast<std::size_t>(c)];
  }
  return h;
}

}  // namespace fet::synth
