#include "fet/analysis.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include "fet/attention.hpp"
#include "fet/autodiff.hpp"
#include "fet/fet.hpp"
#include "fet/ops.hpp"
#include "fet/rng.hpp"

namespace fet::analysis {

namespace {

using cplx = std::complex<double>;

void check_map(const Tensor& x, const char* what) {
  if (x.rank() != 2) throw DimensionError(std::string(what) + " expects an H x W map, got " + shape_str(x.shape));
}

// Unshifted DFT, row-major H x W.
std::vector<cplx> dft2(const Tensor& x) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  std::vector<cplx> tw_w(W), tw_h(H);
  for (std::size_t k = 0; k < W; ++k) tw_w[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / W);
  for (std::size_t k = 0; k < H; ++k) tw_h[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / H);
  std::vector<cplx> rows(H * W);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t v = 0; v < W; ++v) {
      cplx acc = 0.0;
      for (std::size_t j = 0; j < W; ++j) acc += x.data[i * W + j] * tw_w[(v * j) % W];
      rows[i * W + v] = acc;
    }
  }
  std::vector<cplx> out(H * W);
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      cplx acc = 0.0;
      for (std::size_t i = 0; i < H; ++i) acc += rows[i * W + v] * tw_h[(u * i) % H];
      out[u * W + v] = acc;
    }
  }
  return out;
}

// Centered position of unshifted bin (u, v).
std::size_t centered(std::size_t u, std::size_t n) { return (u + n / 2) % n; }

std::vector<Tensor> channels_of(const Tensor& feature) {
  if (feature.rank() == 2) return {feature};
  if (feature.rank() != 3) throw DimensionError("expected H x W or H x W x C, got " + shape_str(feature.shape));
  const std::size_t H = feature.dim(0), W = feature.dim(1), C = feature.dim(2);
  std::vector<Tensor> out(C, Tensor({H, W}));
  for (std::size_t p = 0; p < H * W; ++p) {
    for (std::size_t c = 0; c < C; ++c) out[c].data[p] = feature.data[p * C + c];
  }
  return out;
}

}  // namespace

Tensor dft2_magnitude(const Tensor& x) {
  check_map(x, "dft2_magnitude");
  const std::size_t H = x.dim(0), W = x.dim(1);
  const auto X = dft2(x);
  Tensor out({H, W});
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) out.data[centered(u, H) * W + centered(v, W)] = std::abs(X[u * W + v]);
  }
  return out;
}

Tensor power_spectrum(const Tensor& x) {
  Tensor m = dft2_magnitude(x);
  const double n = static_cast<double>(m.size());
  for (double& v : m.data) v = v * v / n;
  return m;
}

double radial_frequency(std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  // offsets from the centered DC bin, in units of Nyquist
  const double fu = (static_cast<double>(row) - static_cast<double>(height / 2)) / (height / 2.0);
  const double fv = (static_cast<double>(col) - static_cast<double>(width / 2)) / (width / 2.0);
  return std::sqrt(fu * fu + fv * fv);
}

double hf_energy_ratio(const Tensor& feature, double cutoff_frac) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& ch : channels_of(feature)) {
    const Tensor p = power_spectrum(ch);
    const std::size_t H = p.dim(0), W = p.dim(1);
    double total = 0.0, high = 0.0;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double e = p.data[i * W + j];
        total += e;
        if (radial_frequency(i, j, H, W) > cutoff_frac) high += e;
      }
    }
    if (total <= 0.0) continue;
    sum += high / total;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

Tensor channel_power(const Tensor& feature) {
  Tensor acc;
  for (const auto& ch : channels_of(feature)) {
    Tensor p = power_spectrum(ch);
    if (acc.shape.empty()) {
      acc = std::move(p);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += p.data[i];
    }
  }
  return acc;
}

std::vector<double> radial_profile(const Tensor& feature, std::size_t bins) {
  if (bins == 0) throw ConfigError("radial_profile needs at least one bin");
  const Tensor p = channel_power(feature);
  const std::size_t H = p.dim(0), W = p.dim(1);
  std::vector<double> out(bins, 0.0);
  const double width = std::sqrt(2.0) / static_cast<double>(bins);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      auto b = static_cast<std::size_t>(radial_frequency(i, j, H, W) / width);
      out[std::min(b, bins - 1)] += p.data[i * W + j];
    }
  }
  return out;
}

std::string block_kind_name(BlockKind k) { return k == BlockKind::fet ? "fet" : "standard"; }

BlockKind parse_block_kind(const std::string& s) {
  if (s == "fet") return BlockKind::fet;
  if (s == "standard") return BlockKind::standard;
  throw ConfigError("unknown block kind '" + s + "' (expected fet or standard)");
}

std::string probe_name(Probe p) { return p == Probe::attention ? "attention" : "layer"; }

Probe parse_probe(const std::string& s) {
  if (s == "attention") return Probe::attention;
  if (s == "layer") return Probe::layer;
  throw ConfigError("unknown probe '" + s + "' (expected attention or layer)");
}

Battery make_battery(std::size_t count, std::size_t size, std::uint64_t id) {
  if (size < 8 || size % 2 != 0) throw ConfigError("battery images need an even size >= 8");
  Battery b;
  b.id = id;
  const double n = static_cast<double>(size);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(id, 1000 + k);
    Tensor img({size, size});
    if (k < count / 2) {
      // smooth blobs, a faint grating and a little white noise
      const std::size_t blobs = 2 + rng.below(3);
      for (std::size_t m = 0; m < blobs; ++m) {
        const double cy = rng.uniform(0.2, 0.8) * n, cx = rng.uniform(0.2, 0.8) * n;
        const double s = rng.uniform(0.08, 0.2) * n, a = rng.uniform(0.5, 1.0);
        for (std::size_t i = 0; i < size; ++i) {
          for (std::size_t j = 0; j < size; ++j) {
            const double dy = i - cy, dx = j - cx;
            img.data[i * size + j] += a * std::exp(-(dy * dy + dx * dx) / (2 * s * s));
          }
        }
      }
      const double fy = rng.uniform(0.1, 0.4), fx = rng.uniform(0.1, 0.4), ph = rng.uniform(0, 2 * std::numbers::pi);
      for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
          img.data[i * size + j] +=
              0.1 * std::cos(2 * std::numbers::pi * (fy * i + fx * j) / 2 + ph) + 0.05 * rng.normal();
        }
      }
    } else {
      // 2-4 flat shapes with hard edges
      const std::size_t shapes = 2 + rng.below(3);
      for (std::size_t m = 0; m < shapes; ++m) {
        const int type = static_cast<int>(rng.below(3));
        const double cy = rng.uniform(0.2, 0.8) * n, cx = rng.uniform(0.2, 0.8) * n;
        const double ry = rng.uniform(0.1, 0.3) * n, rx = rng.uniform(0.1, 0.3) * n;
        const double a = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < size; ++i) {
          for (std::size_t j = 0; j < size; ++j) {
            const double dy = (i - cy) / ry, dx = (j - cx) / rx;
            bool in = false;
            if (type == 0) in = dy * dy + dx * dx <= 1.0;
            else if (type == 1) in = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
            else in = dy >= -1.0 && dy <= 1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
            if (in) img.data[i * size + j] = a;
          }
        }
      }
    }
    b.images.push_back(std::move(img));
  }
  return b;
}

namespace {

DepthRecord record_depth(std::size_t depth, const Tensor& feature, const SweepOptions& opt) {
  DepthRecord r;
  r.depth = depth;
  r.hf_ratio = hf_energy_ratio(feature, opt.cutoff_frac);
  r.profile = radial_profile(feature, opt.bins);
  r.spectrum = channel_power(feature);
  return r;
}

}  // namespace

std::vector<SpectrumReport> spectral_sweep(BlockKind kind, std::size_t depth, const Battery& battery,
                                           std::uint64_t seed, const SweepOptions& opt) {
  if (opt.dim == 0 || opt.dim % 4 != 0) throw ConfigError("sweep width must be a positive multiple of 4");
  // the lift depends on the seed only, so both kinds see the same inputs
  Rng lift_rng(seed, 0x6c696674ULL);
  Rng rng(seed, kind == BlockKind::fet ? 0x66657400ULL : 0x73746400ULL);
  // per channel: a nonzero scale and a circular shift; neither changes the power spectrum
  std::vector<double> scale(opt.dim);
  std::vector<std::size_t> shift_y(opt.dim), shift_x(opt.dim);
  for (std::size_t c = 0; c < opt.dim; ++c) {
    scale[c] = lift_rng.normal();
    if (std::abs(scale[c]) < 1e-3) scale[c] = 1e-3;
    shift_y[c] = c == 0 ? 0 : lift_rng.below(1 << 16);
    shift_x[c] = c == 0 ? 0 : lift_rng.below(1 << 16);
  }
  const bool layers = opt.probe == Probe::layer;
  std::vector<FetLayerParams> fet_layers;
  std::vector<StandardLayerParams> std_layers;
  std::vector<FetBlockParams> fet_blocks;
  std::vector<attention::AttentionParams> std_blocks;
  const double s = 1.0 / std::sqrt(static_cast<double>(opt.dim));
  for (std::size_t l = 0; l < depth; ++l) {
    if (kind == BlockKind::fet && layers) {
      fet_layers.push_back(init_fet_layer(opt.dim, rng, 3, 1.0, InitScheme::random_all));
    } else if (kind == BlockKind::fet) {
      fet_blocks.push_back(init_fet_block(opt.dim, rng, 3, 1.0, InitScheme::random_all));
    } else if (layers) {
      std_layers.push_back(init_standard_layer(opt.dim, opt.standard_heads, rng, InitScheme::random_all));
    } else {
      std_blocks.push_back(attention::init_attention(opt.dim, opt.standard_heads, rng, s, false));
    }
  }

  std::vector<SpectrumReport> reports;
  for (std::size_t k = 0; k < battery.images.size(); ++k) {
    const Tensor& img = battery.images[k];
    if (img.rank() != 2) throw DimensionError("battery image " + std::to_string(k) + " is not H x W");
    const std::size_t H = img.dim(0), W = img.dim(1);
    Tensor x({H, W, opt.dim});
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        for (std::size_t c = 0; c < opt.dim; ++c) {
          const std::size_t si = (i + shift_y[c]) % H, sj = (j + shift_x[c]) % W;
          x.data[(i * W + j) * opt.dim + c] = img.data[si * W + sj] * scale[c];
        }
      }
    }
    SpectrumReport rep;
    rep.kind = kind;
    rep.seed = seed;
    rep.battery_id = battery.id;
    rep.input_id = k;
    rep.depths.push_back(record_depth(0, x, opt));

    Tape tape;
    Tokens tok{ops::flatten_spatial(tape.constant(x)), H, W};
    for (std::size_t l = 0; l < depth; ++l) {
      if (layers) {
        tok = kind == BlockKind::fet ? fet_layer(tok, fet_layers[l]) : standard_layer(tok, std_layers[l]);
      } else if (kind == BlockKind::fet) {
        tok.x = ops::flatten_spatial(fet_branch(ops::unflatten_spatial(tok.x, H, W), fet_blocks[l]));
      } else {
        tok.x = attention::standard_mhsa(tok.x, std_blocks[l]);
      }
      Tensor feat = tok.x.value();
      feat.shape = {H, W, opt.dim};
      rep.depths.push_back(record_depth(l + 1, feat, opt));
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

void write_sweep_csv(std::ostream& os, const std::vector<SpectrumReport>& reports, bool header) {
  if (header) os << "kind,depth,input_id,seed,hf_ratio\n";
  char buf[64];
  for (const auto& r : reports) {
    for (const auto& d : r.depths) {
      std::snprintf(buf, sizeof buf, "%.12g", d.hf_ratio);
      os << block_kind_name(r.kind) << ',' << d.depth << ',' << r.input_id << ',' << r.seed << ',' << buf << '\n';
    }
  }
}

void write_sweep_spectra(const std::filesystem::path& dir, const std::vector<SpectrumReport>& reports) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& r : reports) {
    if (r.depths.empty()) continue;
    const std::size_t H = r.depths[0].spectrum.dim(0), W = r.depths[0].spectrum.dim(1);
    Tensor stack({r.depths.size(), H, W});
    for (std::size_t d = 0; d < r.depths.size(); ++d) {
      std::copy(r.depths[d].spectrum.data.begin(), r.depths[d].spectrum.data.end(), stack.data.begin() + d * H * W);
    }
    const std::string name = block_kind_name(r.kind) + "_seed" + std::to_string(r.seed) + "_input" +
                             std::to_string(r.input_id) + ".ften";
    write_ften(dir / name, stack, FtenDtype::f64);
  }
}

}  // namespace fet::analysis
