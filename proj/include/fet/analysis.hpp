#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "fet/tensor.hpp"

namespace fet::analysis {

// |DFT(x)| of an H x W map with the zero frequency moved to (H/2, W/2).
// Direct separable sums; meant for small maps.
Tensor dft2_magnitude(const Tensor& x);

// |X|^2 / (H W), centered like dft2_magnitude, so the entries sum to sum(x^2).
Tensor power_spectrum(const Tensor& x);

// Radial frequency of a centered bin, relative to Nyquist (0 at DC, sqrt(2) at the corner).
double radial_frequency(std::size_t row, std::size_t col, std::size_t height, std::size_t width);

// Fraction of spectral energy above cutoff_frac * Nyquist, averaged over the
// channels of an H x W x C feature (or a plain H x W map). Channels with no
// energy are skipped; an all-zero feature gives 0.
double hf_energy_ratio(const Tensor& feature, double cutoff_frac = 0.5);

// Channel-summed energy in `bins` equal radial bands over [0, sqrt(2)].
std::vector<double> radial_profile(const Tensor& feature, std::size_t bins = 8);

// Sum over channels of the centered power spectrum: H x W.
Tensor channel_power(const Tensor& feature);

enum class BlockKind { standard, fet };
std::string block_kind_name(BlockKind k);
BlockKind parse_block_kind(const std::string& s);

struct Battery {
  std::uint64_t id = 0;
  std::vector<Tensor> images;  // each H x W
};

// 8 band-limited blob images with structured noise, then 8 sharp-edged shape images.
Battery make_battery(std::size_t count = 16, std::size_t size = 32, std::uint64_t id = 0);

struct DepthRecord {
  std::size_t depth = 0;
  std::vector<double> profile;
  double hf_ratio = 0.0;
  Tensor spectrum;  // H x W channel-summed power
};

struct SpectrumReport {
  BlockKind kind = BlockKind::standard;
  std::uint64_t seed = 0;
  std::uint64_t battery_id = 0;
  std::size_t input_id = 0;
  std::vector<DepthRecord> depths;  // depth 0 is the lifted input
};

// attention: the bare attention operator per depth step (standard MHSA, or the
// FET branch), no residual, norm or FFN. layer: full residual layers.
enum class Probe { attention, layer };
std::string probe_name(Probe p);
Probe parse_probe(const std::string& s);

struct SweepOptions {
  Probe probe = Probe::attention;
  std::size_t dim = 16;
  std::size_t standard_heads = 2;
  double cutoff_frac = 0.5;
  std::size_t bins = 8;
};

// Stacks `depth` randomly initialized blocks of `kind` at width opt.dim and
// records the spectrum after every layer, for every battery image. The image
// is lifted to opt.dim channels by a random per-channel scale and circular
// shift, which leaves its hf_ratio unchanged.
std::vector<SpectrumReport> spectral_sweep(BlockKind kind, std::size_t depth, const Battery& battery,
                                           std::uint64_t seed, const SweepOptions& opt = {});

// `kind,depth,input_id,seed,hf_ratio`
void write_sweep_csv(std::ostream& os, const std::vector<SpectrumReport>& reports, bool header = true);
// One FTEN file per report: (depth+1) x H x W channel-summed power spectra.
void write_sweep_spectra(const std::filesystem::path& dir, const std::vector<SpectrumReport>& reports);

}  // namespace fet::analysis
