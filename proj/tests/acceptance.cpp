// Acceptance suite: one PASS/FAIL line per criterion.
//
//   fet_acceptance [--only 1,4,6] [--work DIR]
//
// Training runs are cached under DIR keyed by the run config and a hash of this
// executable, so criterion 7 reuses criterion 6's with-bridge runs and any
// rebuild invalidates the cache.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
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
#include "fet/wavelet.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;
std::string g_exe_hash;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::uint8_t> tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::uint8_t> all;
  for (const auto& f : files) {
    const auto rel = fs::relative(f, root).string();
    all.insert(all.end(), rel.begin(), rel.end());
    const auto b = read_file_bytes(f);
    all.insert(all.end(), b.begin(), b.end());
  }
  return all;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

// ---- 1 -----------------------------------------------------------------------

Outcome wavelet_criterion() {
  Rng rng(2024);
  double worst_rec = 0, worst_energy = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t H = 2 * (1 + rng.below(24)), W = 2 * (1 + rng.below(24)), C = 1 + rng.below(4);
    const Tensor x = oracle::random_tensor({H, W, C}, rng, -2, 2);
    const auto s = wavelet::dwt2(x);
    const Tensor back = wavelet::idwt2(s);
    worst_rec = std::max(worst_rec, oracle::max_abs_diff(back, x) / oracle::max_abs(x));
    const double e = s.ll.squared_norm() + s.lh.squared_norm() + s.hl.squared_norm() + s.hh.squared_norm();
    worst_energy = std::max(worst_energy, std::abs(e - x.squared_norm()) / x.squared_norm());
  }
  return {worst_rec <= 1e-9 && worst_energy <= 1e-9,
          "reconstruction " + fmt("%.2e", worst_rec) + ", energy " + fmt("%.2e", worst_energy) + " (tol 1e-9)"};
}

// ---- 2 -----------------------------------------------------------------------

Outcome attention_criterion() {
  Rng rng(7);
  double worst_std = 0, worst_eff = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(16), D = 1 + rng.below(16);
    std::vector<std::size_t> divisors;
    for (std::size_t h = 1; h <= D; ++h) {
      if (D % h == 0) divisors.push_back(h);
    }
    const std::size_t heads = divisors[rng.below(divisors.size())];
    attention::AttentionParams p{oracle::random_tensor({D, D}, rng), oracle::random_tensor({D, D}, rng),
                                 oracle::random_tensor({D, D}, rng), oracle::random_tensor({D, D}, rng), heads};
    const Tensor x = oracle::random_tensor({n, D}, rng, -2, 2);
    Tape tape;
    const Tensor got = attention::standard_mhsa(tape.constant(x), p).value();
    worst_std = std::max(worst_std, oracle::max_abs_diff(got, oracle::mhsa(x, p.wq, p.wk, p.wv, p.wo, heads)));

    const std::size_t nk = 1 + rng.below(16), Dv = 1 + rng.below(16);
    const Tensor q = oracle::random_tensor({n, D}, rng, -3, 3), k = oracle::random_tensor({nk, D}, rng, -3, 3),
                 v = oracle::random_tensor({nk, Dv}, rng, -3, 3);
    const Tensor eff = attention::efficient_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
    worst_eff = std::max(worst_eff, oracle::max_abs_diff(eff, oracle::efficient(q, k, v)));
  }
  return {worst_std <= 1e-10 && worst_eff <= 1e-10,
          "standard " + fmt("%.2e", worst_std) + ", efficient " + fmt("%.2e", worst_eff) + " (tol 1e-10)"};
}

// ---- 3 -----------------------------------------------------------------------

Outcome gradient_criterion() {
  double worst_op = 0, worst_block = 0, worst_msce = 0;
  std::size_t rows = 0, failed = 0;
  std::string first_fail;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& r : checks::op_suite(seed)) {
      ++rows;
      worst_op = std::max(worst_op, r.result.max_rel_error);
      if (!r.pass()) {
        ++failed;
        if (first_fail.empty()) first_fail = r.name + " seed " + std::to_string(seed);
      }
    }
  }
  bool ok = failed == 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto b = checks::fet_block_check(seed), m = checks::msce_check(seed);
    worst_block = std::max(worst_block, b.result.max_rel_error);
    worst_msce = std::max(worst_msce, m.result.max_rel_error);
    ok = ok && b.pass() && m.pass();
  }
  std::string d = std::to_string(rows) + " op checks worst " + fmt("%.2e", worst_op) + " (tol 1e-5), FET block " +
                  fmt("%.2e", worst_block) + ", MSCE " + fmt("%.2e", worst_msce) + " (tol 1e-4)";
  if (!first_fail.empty()) d += "; first failure " + first_fail;
  return {ok, d};
}

// ---- 4 -----------------------------------------------------------------------

Outcome complexity_criterion() {
  const std::vector<std::size_t> ns{64, 256, 1024, 4096};
  const auto eff = attention::complexity_probe(attention::Kind::efficient, ns, 64, 5, 0);
  const auto std_ = attention::complexity_probe(attention::Kind::standard, ns, 64, 5, 0);
  const double se = attention::fit_loglog_slope(eff), ss = attention::fit_loglog_slope(std_);
  std::ostringstream csv;
  attention::write_probe_csv(csv, std_, true);
  attention::write_probe_csv(csv, eff, false);
  std::ofstream(g_work / "bench_attn.csv") << csv.str();
  return {se <= 1.3 && ss >= 1.7, "slope efficient " + fmt("%.3f", se) + " (<= 1.3), standard " + fmt("%.3f", ss) +
                                      " (>= 1.7)"};
}

// ---- 5 -----------------------------------------------------------------------

Outcome spectral_criterion() {
  const auto battery = analysis::make_battery();
  const analysis::SweepOptions opt;
  std::size_t pairs = 0, fet_wins = 0, monotone = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = analysis::spectral_sweep(analysis::BlockKind::standard, 4, battery, seed, opt);
    const auto f = analysis::spectral_sweep(analysis::BlockKind::fet, 4, battery, seed, opt);
    for (std::size_t i = 0; i < s.size(); ++i) {
      ++pairs;
      if (f[i].depths.back().hf_ratio >= s[i].depths.back().hf_ratio) ++fet_wins;
      bool down = true;
      for (std::size_t d = 1; d < s[i].depths.size(); ++d) {
        down = down && s[i].depths[d].hf_ratio <= s[i].depths[d - 1].hf_ratio;
      }
      if (down) ++monotone;
    }
  }
  const double win = double(fet_wins) / double(pairs), mono = double(monotone) / double(pairs);
  return {win >= 0.9 && mono >= 0.8, "FET >= standard in " + fmt("%.1f%%", 100 * win) +
                                         " of pairs (>= 90%), standard non-increasing in " + fmt("%.1f%%", 100 * mono) +
                                         " (>= 80%), " + std::to_string(pairs) + " pairs"};
}

// ---- training runs shared by 6 and 7 ----------------------------------------

struct RunSummary {
  std::vector<double> losses;
  double mean_dsc = 0;
  std::vector<double> class_dsc;
};

const synth::Dataset& toy_dataset() {
  static const synth::Dataset d = [] {
    const fs::path dir = g_work / "toy_data";
    if (!fs::exists(dir / "index.json")) synth::write_dataset(dir, synth::SynthOptions{});
    return synth::read_dataset(dir);
  }();
  return d;
}

RunSummary run_cached(const training::TrainConfig& cfg) {
  const std::string key = training::to_json(cfg).dump() + "|data=default|" + g_exe_hash;
  const fs::path file =
      g_work / "runs" / (hex(fnv1a(reinterpret_cast<const std::uint8_t*>(key.data()), key.size())) + ".json");
  RunSummary r;
  if (fs::exists(file)) {
    const auto j = checkpoint::read_json(file);
    if (j.value("key", std::string()) == key) {
      r.losses = j.at("losses").get<std::vector<double>>();
      r.mean_dsc = j.at("mean_dsc").get<double>();
      r.class_dsc = j.at("class_dsc").get<std::vector<double>>();
      return r;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = training::train(cfg, toy_dataset());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& h : res.history) r.losses.push_back(h.loss);
  r.mean_dsc = res.final_val.mean_dsc;
  r.class_dsc = res.final_val.class_dsc;
  fs::create_directories(file.parent_path());
  checkpoint::write_json(file, {{"key", key},
                                {"config", training::to_json(cfg)},
                                {"losses", r.losses},
                                {"mean_dsc", r.mean_dsc},
                                {"class_dsc", r.class_dsc},
                                {"seconds", secs}});
  std::fprintf(stderr, "  trained %s seed %llu: mean DSC %.4f (%.0f s)\n",
               cfg.model.layer_kind == model::LayerKind::fet ? (cfg.model.use_msce ? "fet" : "fet/no-msce")
                                                             : "standard",
               static_cast<unsigned long long>(cfg.seed), r.mean_dsc, secs);
  return r;
}

training::TrainConfig toy_config(std::uint64_t seed, model::LayerKind kind, bool msce) {
  training::TrainConfig c;
  c.seed = seed;
  c.model.layer_kind = kind;
  c.model.use_msce = msce;
  return c;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt("%.4f", v[i]);
  return s + "]";
}

// ---- 6 -----------------------------------------------------------------------

Outcome segmentation_criterion() {
  const auto rings = synth::ring_classes(toy_dataset().classes);
  auto ring_dsc = [&](const RunSummary& r) {
    double s = 0;
    for (auto c : rings) s += r.class_dsc[c];
    return s / double(rings.size());
  };
  std::vector<double> fet_dsc, fet_ring, std_ring, loss_ratio;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = run_cached(toy_config(seed, model::LayerKind::fet, true));
    const auto s = run_cached(toy_config(seed, model::LayerKind::standard, true));
    fet_dsc.push_back(f.mean_dsc);
    fet_ring.push_back(ring_dsc(f));
    std_ring.push_back(ring_dsc(s));
    loss_ratio.push_back(f.losses.back() / f.losses.front());
  }
  const double dsc = training::median(fet_dsc);
  const double margin = training::median(fet_ring) - training::median(std_ring);
  const double ratio = training::median(loss_ratio);
  std::printf("  detail: FET val DSC per seed %s\n", list(fet_dsc).c_str());
  std::printf("  detail: ring DSC per seed FET %s, standard %s\n", list(fet_ring).c_str(), list(std_ring).c_str());
  std::printf("  detail: loss epoch 30 / epoch 1 median %.4f (< 0.5) %s\n", ratio, ratio < 0.5 ? "PASS" : "FAIL");
  return {dsc >= 0.85 && margin >= 0.02, "median FET val DSC " + fmt("%.4f", dsc) + " (>= 0.85), ring margin " +
                                             fmt("%+.4f", margin) + " (>= 0.02)"};
}

// ---- 7 -----------------------------------------------------------------------

Outcome ablation_criterion() {
  std::vector<training::AblationRow> rows{{"with_msce", 0, {}}, {"without_msce", 0, {}}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    rows[0].per_seed.push_back(run_cached(toy_config(seed, model::LayerKind::fet, true)).mean_dsc);
    rows[1].per_seed.push_back(run_cached(toy_config(seed, model::LayerKind::fet, false)).mean_dsc);
  }
  json table = json::array();
  std::printf("  %-14s %s\n", "variant", "mean_dsc");
  for (auto& r : rows) {
    r.mean_dsc = training::median(r.per_seed);
    table.push_back(training::to_json(r));
    std::printf("  %-14s %.4f  per seed %s\n", r.variant.c_str(), r.mean_dsc, list(r.per_seed).c_str());
  }
  checkpoint::write_json(g_work / "ablation.json", table);
  const double diff = rows[0].mean_dsc - rows[1].mean_dsc;
  return {diff >= -0.01, "with - without = " + fmt("%+.4f", diff) + " (>= -0.01)"};
}

// ---- 8 and 9 share a small end-to-end run --------------------------------------

training::TrainConfig small_config() {
  training::TrainConfig c;
  c.epochs = 3;
  c.seed = 3;
  return c;
}
const synth::SynthOptions kSmallData{.n = 20, .size = 64, .classes = 4, .seed = 5};

struct Artifacts {
  fs::path data, run;
  std::string eval;
};

std::string eval_text(const fs::path& ckpt, const synth::Dataset& d) {
  const auto cfg = training::read_checkpoint_config(ckpt);
  model::SegmentationModel m(cfg.model, cfg.seed);
  training::load_checkpoint(ckpt, &m, nullptr);
  const auto split = training::split_indices(d.samples.size(), cfg.val_fraction);
  return training::to_json(training::evaluate(m, d, split.val)).dump(2) + "\n";
}

Artifacts produce(const std::string& tag) {
  Artifacts a{g_work / ("e2e_" + tag) / "data", g_work / ("e2e_" + tag) / "run", {}};
  fs::remove_all(a.data.parent_path());
  synth::write_dataset(a.data, kSmallData);
  const auto d = synth::read_dataset(a.data);
  training::train(small_config(), d, a.run);
  a.eval = eval_text(a.run / "checkpoint", d);
  return a;
}

Outcome determinism_criterion() {
  const auto a = produce("a"), b = produce("b");
  const bool data = tree_bytes(a.data) == tree_bytes(b.data);
  const bool log = slurp(a.run / "metrics.jsonl") == slurp(b.run / "metrics.jsonl");
  const bool ckpt = tree_bytes(a.run / "checkpoint") == tree_bytes(b.run / "checkpoint");
  const bool eval = a.eval == b.eval;

  const fs::path r = g_work / "e2e_resume";
  fs::remove_all(r);
  const auto d = synth::read_dataset(a.data);
  training::train(small_config(), d, r, std::nullopt, 1);
  training::train(small_config(), d, r, r / "checkpoint");
  const bool resume_log = slurp(r / "metrics.jsonl") == slurp(a.run / "metrics.jsonl");
  const bool resume_ckpt = tree_bytes(r / "checkpoint") == tree_bytes(a.run / "checkpoint");
  const bool resume_eval = eval_text(r / "checkpoint", d) == a.eval;

  auto yn = [](bool v) { return v ? "same" : "DIFFERENT"; };
  return {data && log && ckpt && eval && resume_log && resume_ckpt && resume_eval,
          std::string("dataset ") + yn(data) + ", metrics log " + yn(log) + ", checkpoint " + yn(ckpt) + ", eval " +
              yn(eval) + "; resumed log " + yn(resume_log) + ", checkpoint " + yn(resume_ckpt) + ", eval " +
              yn(resume_eval)};
}

// Minimal schema checks: required keys with JSON types.
using Schema = std::map<std::string, json::value_t>;

bool same_kind(json::value_t want, const json& v) {
  if (want == json::value_t::number_float) return v.is_number();
  if (want == json::value_t::number_unsigned) return v.is_number_unsigned() || v.is_number_integer();
  return v.type() == want;
}

void require(const json& j, const Schema& s, const std::string& where, std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": not an object");
    return;
  }
  for (const auto& [k, t] : s) {
    if (!j.contains(k)) errors.push_back(where + ": missing '" + k + "'");
    else if (!same_kind(t, j.at(k))) errors.push_back(where + ": '" + k + "' has the wrong type");
  }
}

void require_csv(const fs::path& p, const std::string& header, std::size_t numeric_from,
                 std::vector<std::string>& errors) {
  std::ifstream in(p);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    errors.push_back(p.filename().string() + ": header '" + line + "'");
    return;
  }
  const auto cols = std::count(header.begin(), header.end(), ',') + 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (static_cast<long>(f.size()) != cols) {
      errors.push_back(p.filename().string() + ": row " + std::to_string(rows) + " has " + std::to_string(f.size()) +
                       " fields");
      continue;
    }
    for (std::size_t i = numeric_from; i < f.size(); ++i) {
      char* end = nullptr;
      std::strtod(f[i].c_str(), &end);
      if (f[i].empty() || *end != '\0') errors.push_back(p.filename().string() + ": non-numeric '" + f[i] + "'");
    }
  }
  if (rows == 0) errors.push_back(p.filename().string() + ": no rows");
}

Outcome format_criterion() {
  using T = json::value_t;
  const auto a = produce("fmt");
  std::vector<std::string> errors;
  std::size_t ften = 0;

  // spectra and probe CSVs come from the library writers
  const auto battery = analysis::make_battery(2, 16, 0);
  analysis::SweepOptions so;
  so.dim = 8;
  const auto reports = analysis::spectral_sweep(analysis::BlockKind::fet, 1, battery, 0, so);
  analysis::write_sweep_spectra(a.run.parent_path() / "spectra", reports);
  {
    std::ofstream csv(a.run.parent_path() / "spectral.csv");
    analysis::write_sweep_csv(csv, reports);
    std::ofstream probe(a.run.parent_path() / "bench_attn.csv");
    attention::write_probe_csv(probe, attention::complexity_probe(attention::Kind::efficient, {8, 16, 32, 64}, 8, 1));
  }

  for (const auto& e : fs::recursive_directory_iterator(a.run.parent_path())) {
    if (!e.is_regular_file() || e.path().extension() != ".ften") continue;
    ++ften;
    const auto bytes = read_file_bytes(e.path());
    try {
      FtenDtype dt;
      const Tensor t = decode_ften(bytes, &dt);
      if (encode_ften(t, dt) != bytes) errors.push_back(e.path().string() + ": re-encode differs");
      if (bytes.size() != 8 + 8 * t.rank() + (dt == FtenDtype::f32 ? 4 : 8) * t.size()) {
        errors.push_back(e.path().string() + ": trailing bytes");
      }
    } catch (const IoError& ex) {
      errors.push_back(e.path().string() + ": " + ex.what());
    }
  }

  const auto index = checkpoint::read_json(a.data / "index.json");
  require(index, {{"format", T::string}, {"n", T::number_unsigned}, {"size", T::number_unsigned},
                  {"channels", T::number_unsigned}, {"classes", T::number_unsigned}, {"seed", T::number_unsigned},
                  {"ring_classes", T::array}, {"class_pixels", T::array}, {"samples", T::array}},
          "index.json", errors);
  if (index.contains("samples") && index.at("samples").size() != kSmallData.n) errors.push_back("index.json: count");
  for (const auto& s : index.value("samples", json::array())) {
    require(s, {{"image", T::string}, {"label", T::string}}, "index.json sample", errors);
  }

  std::ifstream log(a.run / "metrics.jsonl");
  std::size_t records = 0;
  for (std::string line; std::getline(log, line); ++records) {
    try {
      require(json::parse(line),
              {{"epoch", T::number_unsigned}, {"loss", T::number_float}, {"dice", T::number_float},
               {"ce", T::number_float}, {"val_dsc", T::number_float}},
              "metrics.jsonl", errors);
    } catch (const json::parse_error& e) {
      errors.push_back(std::string("metrics.jsonl: ") + e.what());
    }
  }
  if (records != small_config().epochs) errors.push_back("metrics.jsonl: " + std::to_string(records) + " records");

  for (const auto& cfg_file : {a.run / "config.json", a.run / "checkpoint" / "config.json"}) {
    const auto j = checkpoint::read_json(cfg_file);
    require(j, {{"model", T::object}, {"epochs", T::number_unsigned}, {"batch_size", T::number_unsigned},
                {"lr", T::number_float}, {"momentum", T::number_float}, {"weight_decay", T::number_float},
                {"seed", T::number_unsigned}, {"precision", T::string}},
            cfg_file.filename().string(), errors);
    if (training::to_json(training::train_config_from_json(j)) != j) errors.push_back("config.json: no round trip");
  }
  require(checkpoint::read_json(a.run / "checkpoint" / "state.json"),
          {{"epoch", T::number_unsigned}, {"seed", T::number_unsigned}}, "state.json", errors);
  for (const auto& e : fs::recursive_directory_iterator(a.run / "checkpoint")) {
    if (e.path().filename() == "manifest.json") {
      require(checkpoint::read_json(e.path()), {{"format", T::string}, {"dtype", T::string}, {"tensors", T::object}},
              "manifest.json", errors);
    }
  }

  const auto ev = json::parse(a.eval);
  require(ev, {{"samples", T::number_unsigned}, {"per_class", T::array}, {"mean_dsc", T::number_float},
               {"mean_hd", T::number_float}},
          "eval", errors);
  for (const auto& c : ev.value("per_class", json::array())) {
    require(c, {{"class", T::number_unsigned}, {"dsc", T::number_float}, {"hd", T::number_float}}, "eval class",
            errors);
  }

  const auto ab = training::to_json(training::AblationRow{"with_msce", 0.5, {0.5}});
  require(ab, {{"variant", T::string}, {"mean_dsc", T::number_float}}, "ablation row", errors);

  require_csv(a.run.parent_path() / "bench_attn.csv", "impl,n,D,median_seconds", 1, errors);
  require_csv(a.run.parent_path() / "spectral.csv", "kind,depth,input_id,seed,hf_ratio", 1, errors);

  std::string d = std::to_string(ften) + " FTEN files round-trip, JSON/CSV schemas checked";
  if (ften == 0) errors.push_back("no FTEN files found");
  if (!errors.empty()) d = std::to_string(errors.size()) + " problems, first: " + errors.front();
  return {errors.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fetnet acceptance suite"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--work", work, "scratch directory for datasets, runs and tables");
  CLI11_PARSE(app, argc, argv);

  g_work = work;
  fs::create_directories(g_work);
  {
    const auto self = read_file_bytes("/proc/self/exe");
    g_exe_hash = hex(fnv1a(self.data(), self.size()));
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"wavelet reconstruction and energy", wavelet_criterion},
      {"attention oracle equivalence", attention_criterion},
      {"gradient integrity", gradient_criterion},
      {"attention complexity slopes", complexity_criterion},
      {"spectral response", spectral_criterion},
      {"toy segmentation", segmentation_criterion},
      {"MSCE ablation direction", ablation_criterion},
      {"determinism", determinism_criterion},
      {"format conformance", format_criterion},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
