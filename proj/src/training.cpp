#include "fet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fet/checkpoint.hpp"
#include "fet/rng.hpp"

namespace fet::training {

namespace fs = std::filesystem;

namespace {

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"model", model::to_json(c.model)},
                        {"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"lr", c.lr},
                        {"momentum", c.momentum},
                        {"weight_decay", c.weight_decay},
                        {"val_fraction", c.val_fraction},
                        {"seed", c.seed},
                        {"precision", precision_name(c.precision)},
                        {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    if (j.contains("model")) {
      auto merged = model::to_json(base.model);
      merged.update(j.at("model"));
      base.model = model::model_config_from_json(merged);
    }
    base.epochs = j.value("epochs", base.epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.lr = j.value("lr", base.lr);
    base.momentum = j.value("momentum", base.momentum);
    base.weight_decay = j.value("weight_decay", base.weight_decay);
    base.val_fraction = j.value("val_fraction", base.val_fraction);
    base.seed = j.value("seed", base.seed);
    if (j.contains("precision")) base.precision = parse_precision(j.at("precision").get<std::string>());
    base.checkpoint_every = j.value("checkpoint_every", base.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return base;
}

nlohmann::json to_json(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch}, {"loss", r.loss}, {"dice", r.dice}, {"ce", r.ce}, {"val_dsc", r.val_dsc}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < r.class_dsc.size(); ++c) {
    per.push_back({{"class", c}, {"dsc", r.class_dsc[c]}, {"hd", r.class_hd[c]}});
  }
  return nlohmann::json{{"samples", r.samples}, {"per_class", per}, {"mean_dsc", r.mean_dsc}, {"mean_hd", r.mean_hd}};
}

Split split_indices(std::size_t n, double val_fraction) {
  auto nv = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0 && nv == 0 && n > 1) nv = 1;
  if (nv >= n) nv = n > 1 ? n - 1 : 0;
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < n - nv ? s.train : s.val).push_back(i);
  return s;
}

EvalReport evaluate_labels(const std::vector<model::LabelMap>& pred, const std::vector<model::LabelMap>& target,
                           std::size_t classes) {
  if (pred.size() != target.size()) throw DimensionError("evaluate: prediction and target counts differ");
  if (classes < 2) throw ConfigError("evaluate: need at least 2 classes");
  EvalReport r;
  r.samples = pred.size();
  r.class_dsc.assign(classes, 0.0);
  r.class_hd.assign(classes, 0.0);
  if (pred.empty()) return r;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (std::size_t c = 0; c < classes; ++c) {
      const int cls = static_cast<int>(c);
      r.class_dsc[c] += model::metric_dsc(pred[k], target[k], cls);
      r.class_hd[c] +=
          model::metric_hausdorff(model::Mask::of_class(pred[k], cls), model::Mask::of_class(target[k], cls));
    }
  }
  const double n = static_cast<double>(pred.size());
  for (std::size_t c = 0; c < classes; ++c) {
    r.class_dsc[c] /= n;
    r.class_hd[c] /= n;
    if (c > 0) {
      r.mean_dsc += r.class_dsc[c];
      r.mean_hd += r.class_hd[c];
    }
  }
  r.mean_dsc /= static_cast<double>(classes - 1);
  r.mean_hd /= static_cast<double>(classes - 1);
  return r;
}

namespace {

void check_geometry(const model::ModelConfig& m, const synth::Dataset& data) {
  if (m.height != data.size || m.width != data.size || m.channels != 1 || m.num_classes != data.classes) {
    throw ConfigError("model expects " + std::to_string(m.height) + "x" + std::to_string(m.width) + "x" +
                      std::to_string(m.channels) + " with " + std::to_string(m.num_classes) +
                      " classes; dataset has " + std::to_string(data.size) + "x" + std::to_string(data.size) +
                      "x1 with " + std::to_string(data.classes));
  }
}

model::LabelMap target_map(const synth::Sample& s, std::size_t size) { return model::LabelMap{size, size, s.labels}; }

}  // namespace

EvalReport evaluate(model::SegmentationModel& m, const synth::Dataset& data, const std::vector<std::size_t>& which,
                    Precision precision) {
  check_geometry(m.config(), data);
  std::vector<model::LabelMap> pred, target;
  for (std::size_t idx : which) {
    const auto& s = data.samples.at(idx);
    Tape tape(precision);
    Var logits = m.forward(tape.constant(s.image));
    pred.push_back(model::argmax_labels(logits.value()));
    target.push_back(target_map(s, data.size));
  }
  return evaluate_labels(pred, target, data.classes);
}

void save_checkpoint(const fs::path& dir, model::SegmentationModel& m, model::Sgd& opt, const TrainConfig& cfg,
                     std::size_t epoch) {
  auto named = m.named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> params, buffers;
  for (std::size_t i = 0; i < named.size(); ++i) {
    params.emplace_back(named[i].first, named[i].second);
    if (i < opt.buffers().size()) buffers.emplace_back(named[i].first, &opt.buffers()[i]);
  }
  checkpoint::save_tensors(dir / "params", params, FtenDtype::f64);
  checkpoint::save_tensors(dir / "momentum", buffers, FtenDtype::f64);
  checkpoint::write_json(dir / "config.json", to_json(cfg));
  checkpoint::write_json(dir / "state.json", {{"epoch", epoch}, {"seed", cfg.seed}});
}

TrainConfig read_checkpoint_config(const fs::path& dir) {
  return train_config_from_json(checkpoint::read_json(dir / "config.json"));
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, model::SegmentationModel* m, model::Sgd* opt) {
  LoadedCheckpoint out;
  out.cfg = read_checkpoint_config(dir);
  const auto state = checkpoint::read_json(dir / "state.json");
  out.epoch = state.value("epoch", std::size_t{0});
  if (m == nullptr) return out;
  auto params = checkpoint::load_tensors(dir / "params");
  auto named = m->named_parameters();
  for (auto& [name, t] : named) {
    auto it = params.find(name);
    if (it == params.end()) throw IoError("checkpoint lacks parameter " + name);
    if (it->second.shape != t->shape) {
      throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape) + ", model wants " +
                        shape_str(t->shape));
    }
    t->data = it->second.data;
  }
  if (opt != nullptr) {
    auto buffers = checkpoint::load_tensors(dir / "momentum");
    opt->buffers().clear();
    if (!buffers.empty()) {
      for (auto& [name, t] : named) {
        auto it = buffers.find(name);
        if (it == buffers.end() || it->second.shape != t->shape) throw IoError("momentum buffer for " + name + " is missing");
        opt->buffers().push_back(it->second);
      }
    }
  }
  return out;
}

namespace {

std::vector<EpochRecord> read_history(const fs::path& path, std::size_t up_to) {
  std::vector<EpochRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochRecord r{j.at("epoch").get<std::size_t>(), j.at("loss").get<double>(), j.at("dice").get<double>(),
                    j.at("ce").get<double>(), j.at("val_dsc").get<double>()};
      if (r.epoch <= up_to) out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": bad metrics record: " + e.what());
    }
  }
  return out;
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& h) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : h) out << to_json(r).dump() << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const synth::Dataset& data, const std::optional<fs::path>& out_dir,
                  const std::optional<fs::path>& resume, std::optional<std::size_t> stop_after) {
  cfg.validate();
  check_geometry(cfg.model, data);
  if (data.samples.empty()) throw ConfigError("dataset is empty");

  model::SegmentationModel net(cfg.model, cfg.seed);
  model::Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  auto params = net.named_parameters();
  const Split split = split_indices(data.samples.size(), cfg.val_fraction);
  const auto& val = split.val.empty() ? split.train : split.val;

  TrainResult result;
  std::size_t start = 1;
  if (resume) {
    const auto loaded = load_checkpoint(*resume, &net, &opt);
    auto was = to_json(loaded.cfg), now = to_json(cfg);
    for (const char* k : {"epochs", "checkpoint_every"}) {
      was.erase(k);
      now.erase(k);
    }
    if (was != now) {
      throw ConfigError("checkpoint " + resume->string() + " was written for a different configuration");
    }
    start = loaded.epoch + 1;
    if (out_dir) result.history = read_history(*out_dir / "metrics.jsonl", loaded.epoch);
  }
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
    checkpoint::write_json(*out_dir / "config.json", to_json(cfg));
    write_history(*out_dir / "metrics.jsonl", result.history);
  }

  std::vector<Tensor> onehots;
  onehots.reserve(data.samples.size());
  for (const auto& s : data.samples) onehots.push_back(model::one_hot(s.labels, data.size, data.size, data.classes));

  const std::size_t last = stop_after ? std::min(*stop_after, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = start; epoch <= last; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng(cfg.seed, 0x65706f6368ULL + epoch).shuffle(order);
    double sum_loss = 0, sum_dice = 0, sum_ce = 0;
    std::size_t batch_no = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch_no) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (auto& [name, t] : params) t->zero_grad();
      // Module contracts reject non-finite inputs, so the input and the weights
      // are screened here to report divergence with the batch that caused it.
      auto diverge = [&](std::size_t idx, const std::string& what) {
        std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                       order.begin() + static_cast<std::ptrdiff_t>(b1));
        nlohmann::json dump{{"epoch", epoch}, {"batch", batch_no}, {"sample", idx},
                            {"batch_samples", batch}, {"reason", what}};
        if (out_dir) checkpoint::write_json(*out_dir / "nan_dump.json", dump);
        return DivergedError(what + " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                             " (sample " + std::to_string(idx) + ")");
      };
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t idx = order[k];
        if (!data.samples[idx].image.all_finite()) throw diverge(idx, "non-finite input");
        Tape tape(cfg.precision);
        Var logits;
        try {
          logits = net.forward(tape.constant(data.samples[idx].image));
        } catch (const NumericError& e) {
          throw diverge(idx, e.what());
        }
        auto loss = model::combined_loss(logits, tape.constant(onehots[idx]), cfg.model.w_dice, cfg.model.w_ce);
        const double lv = loss.total.value().item();
        if (!std::isfinite(lv)) throw diverge(idx, std::isnan(lv) ? "nan loss" : "inf loss");
        sum_loss += lv;
        sum_dice += loss.dice.value().item();
        sum_ce += loss.ce.value().item();
        tape.backward(loss.total);
        tape.accumulate_param_grads(inv);
      }
      opt.step(params, cfg.precision);
      for (const auto& [name, t] : params) {
        if (!t->all_finite()) throw diverge(order[b0], "non-finite parameter " + name);
      }
    }
    const double n = static_cast<double>(order.size());
    EpochRecord rec{epoch, sum_loss / n, sum_dice / n, sum_ce / n, 0.0};
    try {
      rec.val_dsc = evaluate(net, data, val, cfg.precision).mean_dsc;
    } catch (const NumericError& e) {
      if (out_dir) {
        checkpoint::write_json(*out_dir / "nan_dump.json",
                               {{"epoch", epoch}, {"phase", "validation"}, {"reason", e.what()}});
      }
      throw DivergedError(std::string(e.what()) + " during validation after epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (out_dir) {
      std::ofstream log(*out_dir / "metrics.jsonl", std::ios::app);
      log << to_json(rec).dump() << '\n';
      if (!log) throw IoError("cannot append to metrics.jsonl");
      if (epoch % cfg.checkpoint_every == 0 || epoch == last) {
        save_checkpoint(*out_dir / "checkpoint", net, opt, cfg, epoch);
      }
    }
  }
  result.final_val = evaluate(net, data, val, cfg.precision);
  return result;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationRow> ablate_msce(const TrainConfig& base, const synth::Dataset& data,
                                     const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationRow> rows{{"with_msce", 0.0, {}}, {"without_msce", 0.0, {}}};
  for (std::uint64_t seed : seeds) {
    for (std::size_t v = 0; v < rows.size(); ++v) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.model.use_msce = v == 0;
      rows[v].per_seed.push_back(train(cfg, data).final_val.mean_dsc);
    }
  }
  for (auto& r : rows) r.mean_dsc = median(r.per_seed);
  return rows;
}

nlohmann::json to_json(const AblationRow& r) {
  return nlohmann::json{{"variant", r.variant}, {"mean_dsc", r.mean_dsc}, {"per_seed", r.per_seed}};
}

}  // namespace fet::training
