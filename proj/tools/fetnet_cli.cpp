// fetnet command-line tool.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fet/analysis.hpp"
#include "fet/attention.hpp"
#include "fet/checkpoint.hpp"
#include "fet/checks.hpp"
#include "fet/synth.hpp"
#include "fet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> config;
  std::optional<std::string> precision;
};

// Flags shared by train and ablate-msce. Unset flags fall back to the config file.
struct TrainFlags {
  std::optional<std::size_t> epochs, batch_size, checkpoint_every;
  std::optional<double> lr, momentum, weight_decay, val_fraction;
  std::optional<std::string> layer_kind;
  bool no_msce = false;
  std::optional<std::vector<std::size_t>> depths, dims;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--epochs", f.epochs, "training epochs (default 30)");
  sub->add_option("--batch-size", f.batch_size, "samples per SGD step (default 8)");
  sub->add_option("--lr", f.lr, "learning rate (default 0.05)");
  sub->add_option("--momentum", f.momentum, "SGD momentum (default 0.9)");
  sub->add_option("--weight-decay", f.weight_decay, "L2 weight decay (default 0.0001)");
  sub->add_option("--val-fraction", f.val_fraction, "fraction of samples held out (default 0.2)");
  sub->add_option("--checkpoint-every", f.checkpoint_every, "epochs between checkpoints (default 1)");
  sub->add_option("--layer-kind", f.layer_kind, "fet or standard")->check(CLI::IsMember({"fet", "standard"}));
  sub->add_flag("--no-msce", f.no_msce, "identity skips instead of the MSCE bridge");
  sub->add_option("--depths", f.depths, "layers per stage, 4 values")->expected(4)->delimiter(',');
  sub->add_option("--dims", f.dims, "stage widths, 4 values")->expected(4)->delimiter(',');
}

json load_config(const Global& g) {
  if (!g.config) return json::object();
  // unreadable is an I/O error, unparseable a config error
  const auto bytes = fet::read_file_bytes(*g.config);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw fet::ConfigError(*g.config + ": " + e.what());
  }
  if (!j.is_object()) throw fet::ConfigError(*g.config + ": config must be a JSON object");
  return j;
}

template <class T>
T pick(const std::optional<T>& flag, const json& cfg, const char* key, T fallback) {
  if (flag) return *flag;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw fet::ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return fallback;
}

json section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object()) throw fet::ConfigError(std::string("config section '") + name + "' must be an object");
  return cfg.at(name);
}

fet::training::TrainConfig effective_train_config(const Global& g, const TrainFlags& f, const json& cfg) {
  auto tc = fet::training::train_config_from_json(section(cfg, "train"));
  if (cfg.contains("seed")) tc.seed = cfg.at("seed").get<std::uint64_t>();
  if (g.seed) tc.seed = *g.seed;
  if (g.precision) tc.precision = *g.precision == "f32" ? fet::Precision::f32 : fet::Precision::f64;
  if (f.epochs) tc.epochs = *f.epochs;
  if (f.batch_size) tc.batch_size = *f.batch_size;
  if (f.checkpoint_every) tc.checkpoint_every = *f.checkpoint_every;
  if (f.lr) tc.lr = *f.lr;
  if (f.momentum) tc.momentum = *f.momentum;
  if (f.weight_decay) tc.weight_decay = *f.weight_decay;
  if (f.val_fraction) tc.val_fraction = *f.val_fraction;
  if (f.layer_kind) tc.model.layer_kind = *f.layer_kind == "fet" ? fet::model::LayerKind::fet : fet::model::LayerKind::standard;
  if (f.no_msce) tc.model.use_msce = false;
  if (f.depths) std::copy(f.depths->begin(), f.depths->end(), tc.model.stage_depths.begin());
  if (f.dims) std::copy(f.dims->begin(), f.dims->end(), tc.model.stage_dims.begin());
  tc.validate();
  return tc;
}

fs::path out_dir(const Global& g, const char* fallback) {
  fs::path p = g.out ? fs::path(*g.out) : fs::path(fallback);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw fet::IoError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

void echo_config(const fs::path& dir, const std::string& command, json effective) {
  effective["command"] = command;
  fet::checkpoint::write_json(dir / "effective_config.json", effective);
  std::cerr << "effective config: " << effective.dump() << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw fet::IoError("cannot write " + path.string());
  out << text;
}

// Adapts the loaded dataset geometry into the model section when the config left it unset.
void fit_geometry(fet::training::TrainConfig& tc, const fet::synth::Dataset& d, const json& cfg) {
  const json model = section(section(cfg, "train"), "model");
  if (!model.contains("height")) tc.model.height = d.size;
  if (!model.contains("width")) tc.model.width = d.size;
  if (!model.contains("num_classes")) tc.model.num_classes = d.classes;
  tc.validate();
}

int cmd_gen_synth(const Global& g, std::optional<std::size_t> n, std::optional<std::size_t> size,
                  std::optional<std::size_t> classes) {
  const json cfg = load_config(g);
  const json s = section(cfg, "synth");
  fet::synth::SynthOptions opt;
  opt.n = pick(n, s, "n", opt.n);
  opt.size = pick(size, s, "size", opt.size);
  opt.classes = pick(classes, s, "classes", opt.classes);
  opt.seed = pick(g.seed, cfg, "seed", opt.seed);
  fet::synth::validate(opt);
  const fs::path dir = out_dir(g, "synth");
  echo_config(dir, "gen-synth", {{"n", opt.n}, {"size", opt.size}, {"classes", opt.classes}, {"seed", opt.seed}});
  fet::synth::write_dataset(dir, opt);
  std::cout << "wrote " << opt.n << " samples to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Global& g, const TrainFlags& f, const std::string& data, const std::optional<std::string>& resume,
              std::optional<std::size_t> stop_after) {
  const json cfg = load_config(g);
  auto tc = effective_train_config(g, f, cfg);
  const auto ds = fet::synth::read_dataset(data);
  fit_geometry(tc, ds, cfg);
  const fs::path dir = out_dir(g, "run");
  json eff = fet::training::to_json(tc);
  eff["data"] = data;
  if (resume) eff["resume"] = *resume;
  echo_config(dir, "train", eff);
  std::optional<fs::path> res;
  if (resume) res = fs::path(*resume);
  auto result = fet::training::train(tc, ds, dir, res, stop_after);
  for (const auto& r : result.history) {
    std::printf("epoch %3zu  loss %.5f  dice %.5f  ce %.5f  val_dsc %.4f\n", r.epoch, r.loss, r.dice, r.ce, r.val_dsc);
  }
  std::printf("final val mean DSC %.4f, mean HD %.3f\n", result.final_val.mean_dsc, result.final_val.mean_hd);
  return 0;
}

int cmd_eval(const Global& g, const std::string& ckpt, const std::string& data, const std::string& which) {
  auto tc = fet::training::read_checkpoint_config(ckpt);
  if (g.precision) tc.precision = *g.precision == "f32" ? fet::Precision::f32 : fet::Precision::f64;
  const auto ds = fet::synth::read_dataset(data);
  fet::model::SegmentationModel m(tc.model, tc.seed);
  fet::training::load_checkpoint(ckpt, &m, nullptr);
  const auto split = fet::training::split_indices(ds.samples.size(), tc.val_fraction);
  std::vector<std::size_t> idx;
  if (which == "val") idx = split.val;
  else if (which == "train") idx = split.train;
  else for (std::size_t i = 0; i < ds.samples.size(); ++i) idx.push_back(i);
  const auto report = fet::training::evaluate(m, ds, idx, tc.precision);
  json j = fet::training::to_json(report);
  j["split"] = which;
  const std::string text = j.dump(2) + "\n";
  if (g.out) {
    const fs::path dir = out_dir(g, ".");
    echo_config(dir, "eval", {{"checkpoint", ckpt}, {"data", data}, {"split", which}});
    write_text(dir / "metrics.json", text);
  }
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const Global& g, const std::string& target) {
  const std::uint64_t seed = g.seed.value_or(0);
  std::vector<fet::checks::CheckRow> rows;
  if (target == "ops" || target == "all") rows = fet::checks::op_suite(seed);
  if (target == "fet-block" || target == "all") rows.push_back(fet::checks::fet_block_check(seed));
  if (target == "msce" || target == "all") rows.push_back(fet::checks::msce_check(seed));
  if (target == "model") rows.push_back(fet::checks::model_check(seed));
  json out = json::array();
  bool ok = true;
  for (const auto& r : rows) {
    std::printf("%-28s max_rel %.3e  tol %.0e  checked %4zu  kinks %zu  below_noise %zu  %s\n", r.name.c_str(),
                r.result.max_rel_error, r.tol, r.result.checked, r.result.kinks_skipped, r.result.below_noise,
                r.pass() ? "PASS" : "FAIL");
    ok = ok && r.pass();
    out.push_back({{"name", r.name},
                   {"max_rel_error", r.result.max_rel_error},
                   {"tol", r.tol},
                   {"checked", r.result.checked},
                   {"kinks_skipped", r.result.kinks_skipped},
                   {"below_noise", r.result.below_noise},
                   {"pass", r.pass()}});
  }
  if (g.out) fet::checkpoint::write_json(out_dir(g, ".") / "gradcheck.json", out);
  return ok ? 0 : 1;
}

int cmd_bench(const Global& g, std::optional<std::vector<std::size_t>> n_list, std::optional<std::size_t> dim,
              std::optional<std::size_t> trials, const std::string& impl) {
  const json cfg = load_config(g);
  const json b = section(cfg, "bench");
  const auto ns = pick(n_list, b, "n_list", std::vector<std::size_t>{64, 256, 1024, 4096});
  const auto d = pick(dim, b, "dim", std::size_t{64});
  const auto t = pick(trials, b, "trials", std::size_t{5});
  const auto seed = pick(g.seed, cfg, "seed", std::uint64_t{0});
  if (ns.size() < 2 || d == 0 || t == 0) throw fet::ConfigError("bench-attn needs >= 2 sizes and positive dim/trials");
  std::vector<fet::attention::Kind> kinds;
  if (impl != "efficient") kinds.push_back(fet::attention::Kind::standard);
  if (impl != "standard") kinds.push_back(fet::attention::Kind::efficient);
  std::ostringstream csv;
  bool header = true;
  json slopes = json::object();
  for (auto k : kinds) {
    const auto rows = fet::attention::complexity_probe(k, ns, d, t, seed);
    fet::attention::write_probe_csv(csv, rows, header);
    header = false;
    const double s = fet::attention::fit_loglog_slope(rows);
    slopes[fet::attention::kind_name(k)] = s;
    std::cerr << fet::attention::kind_name(k) << " log-log slope " << s << "\n";
  }
  if (g.out) {
    const fs::path dir = out_dir(g, ".");
    echo_config(dir, "bench-attn", {{"n_list", ns}, {"dim", d}, {"trials", t}, {"seed", seed}, {"impl", impl}});
    write_text(dir / "bench_attn.csv", csv.str());
    fet::checkpoint::write_json(dir / "bench_slopes.json", slopes);
  }
  std::cout << csv.str();
  return 0;
}

int cmd_spectral(const Global& g, const std::string& kind, std::optional<std::size_t> depth,
                 std::optional<std::size_t> seeds, std::optional<std::string> probe, std::optional<std::size_t> dim,
                 std::optional<double> cutoff) {
  const json cfg = load_config(g);
  const json s = section(cfg, "spectral");
  fet::analysis::SweepOptions opt;
  opt.probe = fet::analysis::parse_probe(pick(probe, s, "probe", std::string("attention")));
  opt.dim = pick(dim, s, "dim", opt.dim);
  opt.cutoff_frac = pick(cutoff, s, "cutoff_frac", opt.cutoff_frac);
  const auto d = pick(depth, s, "depth", std::size_t{4});
  const auto n_seeds = pick(seeds, s, "seeds", std::size_t{20});
  const auto base = pick(g.seed, cfg, "seed", std::uint64_t{0});
  if (!(opt.cutoff_frac > 0)) throw fet::ConfigError("cutoff must be positive");
  const auto battery = fet::analysis::make_battery();
  std::vector<fet::analysis::BlockKind> kinds;
  if (kind != "fet") kinds.push_back(fet::analysis::BlockKind::standard);
  if (kind != "standard") kinds.push_back(fet::analysis::BlockKind::fet);

  const fs::path dir = out_dir(g, "spectral");
  echo_config(dir, "spectral",
              {{"kind", kind}, {"depth", d}, {"seeds", n_seeds}, {"seed", base}, {"probe", fet::analysis::probe_name(opt.probe)},
               {"dim", opt.dim}, {"cutoff_frac", opt.cutoff_frac}, {"bins", opt.bins}, {"battery_id", battery.id}});
  std::ofstream csv(dir / "spectral.csv", std::ios::trunc);
  if (!csv) throw fet::IoError("cannot write spectral.csv");
  json profiles = json::array();
  bool header = true;
  for (auto k : kinds) {
    for (std::size_t i = 0; i < n_seeds; ++i) {
      auto reports = fet::analysis::spectral_sweep(k, d, battery, base + i, opt);
      fet::analysis::write_sweep_csv(csv, reports, header);
      header = false;
      fet::analysis::write_sweep_spectra(dir / "spectra", reports);
      for (const auto& r : reports) {
        for (const auto& rec : r.depths) {
          profiles.push_back({{"kind", fet::analysis::block_kind_name(r.kind)},
                              {"seed", r.seed},
                              {"input_id", r.input_id},
                              {"depth", rec.depth},
                              {"hf_ratio", rec.hf_ratio},
                              {"profile", rec.profile}});
        }
      }
    }
  }
  fet::checkpoint::write_json(dir / "profiles.json", profiles);
  std::cout << "wrote " << (dir / "spectral.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const Global& g, const TrainFlags& f, const std::string& data, std::optional<std::size_t> seeds) {
  const json cfg = load_config(g);
  auto tc = effective_train_config(g, f, cfg);
  const auto ds = fet::synth::read_dataset(data);
  fit_geometry(tc, ds, cfg);
  const auto n = pick(seeds, section(cfg, "ablation"), "seeds", std::size_t{5});
  if (n == 0) throw fet::ConfigError("ablate-msce needs at least one seed");
  std::vector<std::uint64_t> list;
  for (std::size_t i = 0; i < n; ++i) list.push_back(tc.seed + i);
  const fs::path dir = out_dir(g, "ablation");
  json eff = fet::training::to_json(tc);
  eff["data"] = data;
  eff["seeds"] = list;
  echo_config(dir, "ablate-msce", eff);
  const auto rows = fet::training::ablate_msce(tc, ds, list);
  json table = json::array();
  std::printf("%-14s %s\n", "variant", "mean_dsc");
  for (const auto& r : rows) {
    table.push_back(fet::training::to_json(r));
    std::printf("%-14s %.4f\n", r.variant.c_str(), r.mean_dsc);
  }
  fet::checkpoint::write_json(dir / "ablation.json", table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fetnet: frequency-enhanced transformer segmentation toolkit"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

  std::optional<std::size_t> n, size, classes;
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic segmentation set");
  gen->add_option("--n", n, "samples (default 200)");
  gen->add_option("--size", size, "image side, multiple of 32 (default 64)");
  gen->add_option("--classes", classes, "classes including background (default 4)");

  TrainFlags tf;
  std::string data;
  std::optional<std::string> resume;
  std::optional<std::size_t> stop_after;
  auto* train = app.add_subcommand("train", "train on a synthetic dataset");
  add_train_flags(train, tf);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--resume", resume, "checkpoint directory to resume from");
  train->add_option("--stop-after", stop_after, "stop after this epoch (leaves a resumable checkpoint)");

  std::string ckpt, eval_data, which = "val";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", which, "val, train or all")->check(CLI::IsMember({"val", "train", "all"}));

  std::string target = "all";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--target", target, "ops, fet-block, msce, model or all")
      ->check(CLI::IsMember({"ops", "fet-block", "msce", "model", "all"}));

  std::optional<std::vector<std::size_t>> n_list;
  std::optional<std::size_t> bench_dim, trials;
  std::string impl = "both";
  auto* bench = app.add_subcommand("bench-attn", "time standard vs efficient attention");
  bench->add_option("--n-list", n_list, "token counts")->delimiter(',');
  bench->add_option("--dim", bench_dim, "model width (default 64)");
  bench->add_option("--trials", trials, "timings per size, median reported (default 5)");
  bench->add_option("--impl", impl, "standard, efficient or both")->check(CLI::IsMember({"standard", "efficient", "both"}));

  std::string kind = "both";
  std::optional<std::size_t> depth, seeds, sweep_dim;
  std::optional<std::string> probe;
  std::optional<double> cutoff;
  auto* spec = app.add_subcommand("spectral", "spectral response sweep over the fixed battery");
  spec->add_option("--kind", kind, "fet, standard or both")->check(CLI::IsMember({"fet", "standard", "both"}));
  spec->add_option("--depth", depth, "stacked blocks (default 4)");
  spec->add_option("--seeds", seeds, "seeds starting at --seed (default 20)");
  spec->add_option("--probe", probe, "attention or layer")->check(CLI::IsMember({"attention", "layer"}));
  spec->add_option("--dim", sweep_dim, "block width (default 16)");
  spec->add_option("--cutoff", cutoff, "high-frequency cutoff as a fraction of Nyquist (default 0.5)");

  TrainFlags af;
  std::string ab_data;
  std::optional<std::size_t> ab_seeds;
  auto* ab = app.add_subcommand("ablate-msce", "train with and without the MSCE bridge");
  add_train_flags(ab, af);
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--seeds", ab_seeds, "seeds starting at --seed (default 5)");

  for (auto* sub : {gen, train, eval, gc, bench, spec, ab}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help exits 0; every usage error maps onto the config-error code
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_synth(g, n, size, classes);
    if (*train) return cmd_train(g, tf, data, resume, stop_after);
    if (*eval) return cmd_eval(g, ckpt, eval_data, which);
    if (*gc) return cmd_gradcheck(g, target);
    if (*bench) return cmd_bench(g, n_list, bench_dim, trials, impl);
    if (*spec) return cmd_spectral(g, kind, depth, seeds, probe, sweep_dim, cutoff);
    if (*ab) return cmd_ablate(g, af, ab_data, ab_seeds);
  } catch (const fet::training::DivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const fet::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
