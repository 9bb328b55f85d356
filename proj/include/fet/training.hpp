#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fet/model.hpp"
#include "fet/synth.hpp"

namespace fet::training {

struct TrainConfig {
  model::ModelConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  std::size_t checkpoint_every = 1;  // epochs; the final epoch is always saved

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep the values already in `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0, dice = 0.0, ce = 0.0, val_dsc = 0.0;
};
nlohmann::json to_json(const EpochRecord& r);

struct EvalReport {
  std::vector<double> class_dsc;  // index 0 is background
  std::vector<double> class_hd;
  double mean_dsc = 0.0;  // over foreground classes
  double mean_hd = 0.0;
  std::size_t samples = 0;
};
nlohmann::json to_json(const EvalReport& r);

// Thrown when the loss stops being finite; a dump has been written by then.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Split {
  std::vector<std::size_t> train, val;
};
// The last round(val_fraction * n) samples (at least one when n > 1) validate.
Split split_indices(std::size_t n, double val_fraction);

// Averages per-sample DSC/HD over the given samples.
EvalReport evaluate(model::SegmentationModel& m, const synth::Dataset& data, const std::vector<std::size_t>& which,
                    Precision precision = Precision::f64);
// Same metrics for precomputed label maps.
EvalReport evaluate_labels(const std::vector<model::LabelMap>& pred, const std::vector<model::LabelMap>& target,
                           std::size_t classes);

struct TrainResult {
  std::vector<EpochRecord> history;
  EvalReport final_val;
};

// Runs SGD on combined_loss. When out_dir is set, writes metrics.jsonl,
// config.json and checkpoint/ there. `resume` points at a checkpoint directory.
TrainResult train(const TrainConfig& cfg, const synth::Dataset& data,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::optional<std::filesystem::path>& resume = std::nullopt,
                  std::optional<std::size_t> stop_after = std::nullopt);

struct AblationRow {
  std::string variant;             // "with_msce" or "without_msce"
  double mean_dsc = 0.0;           // median over seeds
  std::vector<double> per_seed;    // final validation mean DSC per seed
};
// Trains matched configs with and without the bridge on the same data and seeds.
std::vector<AblationRow> ablate_msce(const TrainConfig& base, const synth::Dataset& data,
                                     const std::vector<std::uint64_t>& seeds);
nlohmann::json to_json(const AblationRow& r);

double median(std::vector<double> v);

// Parameters, momentum buffers, config.json and state.json.
void save_checkpoint(const std::filesystem::path& dir, model::SegmentationModel& m, model::Sgd& opt,
                     const TrainConfig& cfg, std::size_t epoch);
struct LoadedCheckpoint {
  TrainConfig cfg;
  std::size_t epoch = 0;
};
// Restores parameters (and momentum buffers when opt is given) into m.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, model::SegmentationModel* m, model::Sgd* opt);
TrainConfig read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace fet::training
