#include "tica/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tica/checkpoint.hpp"
#include "tica/png_io.hpp"

namespace tica::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Key separating model initialisation from other uses of a seed.
constexpr std::uint64_t kInitStream = 0x1a17;

const std::vector<std::string> kRows{"none", "fc-only", "bc-only", "tica", "tent", "bn", "eta"};

void say(std::ostream* log, const std::string& msg) {
  if (log != nullptr) *log << msg << std::endl;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

fs::path with_suffix(fs::path p, const std::string& suffix) {
  p.replace_extension();
  p += suffix;
  return p;
}

std::vector<SamplePair> load_split(const RunConfig& cfg, const fs::path& data, const std::string& split) {
  const fs::path root = data / split;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset split not found: " + root.string());
  return load_dataset(root, cfg.model.input_size);
}

CheckpointMeta meta_for(const RunConfig& cfg, const std::string& method, std::uint64_t seed, std::uint64_t step) {
  CheckpointMeta m;
  m.train_step = step;
  m.method = method;
  m.seed = seed;
  m.config_json = config_to_json(cfg, false);
  m.config_hash = config_hash(cfg);
  return m;
}

Checkpoint load_checked(const RunConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.model.config() == cfg.model)) {
    throw std::runtime_error("checkpoint " + path.string() + " was built for a different model configuration");
  }
  return ck;
}

std::string train_trace(const RunConfig& cfg, const TrainResult& r) {
  std::string out = json{{"config_hash", config_hash(cfg)}, {"kind", "train"}}.dump() + "\n";
  for (const auto& s : r.trace) {
    out += json{{"epoch", s.epoch}, {"batch", s.batch}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}}.dump() + "\n";
  }
  return out;
}

std::string adapt_trace(const RunConfig& cfg, const AdaptResult& r) {
  std::string out = json{{"config_hash", config_hash(cfg)}, {"kind", "adapt"}}.dump() + "\n";
  for (const auto& s : r.trace) {
    out += json{{"epoch", s.epoch}, {"batch", s.batch}, {"method", s.method}, {"loss", s.loss}, {"fg", s.fg},
                {"bg", s.bg}, {"selected", s.selected}}
               .dump() +
           "\n";
  }
  return out;
}

void write_report(const fs::path& out, const BerReport& r) {
  write_file(out, report_to_json(r) + "\n");
  write_file(with_suffix(out, ".txt"), render_report(r));
  // validate what landed on disk
  const BerReport back = report_from_json(read_file(out));
  if (back.counts != r.counts || back.config_hash != r.config_hash) {
    throw std::runtime_error("report " + out.string() + " failed validation");
  }
}

std::string mask_name(const std::string& id) {
  std::string s = id;
  std::replace(s.begin(), s.end(), '/', '_');
  return s + ".png";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kInitStream));
  return Model(cfg, rng);
}

GenDataResult cmd_gen_data(const RunConfig& cfg, const GenDataOptions& opts) {
  cfg.data.validate();
  const fs::path root = opts.out.empty() ? cfg.output_root / "data" : opts.out;
  say(opts.log, "generating " + std::to_string(cfg.data.train_count) + " train / " +
                    std::to_string(cfg.data.test_count) + " test scenes (seed " + std::to_string(cfg.data.seed) + ")");
  const SyntheticDataset ds = generate_synthetic(cfg.data);
  GenDataResult r{root, save_synthetic(ds, cfg.data, root)};
  json manifest = json::parse(read_file(root / "manifest.json"));
  manifest["config_hash"] = config_hash(cfg);
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  say(opts.log, "wrote " + root.string() + "  digest " + r.digest);
  return r;
}

TrainOutcome cmd_train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const fs::path data = opts.data.empty() ? cfg.output_root / "data" : opts.data;
  const fs::path out = opts.out.empty() ? cfg.output_root / "model.ckpt" : opts.out;
  const auto train = load_split(cfg, data, "train");

  TrainState state;
  Model model = make_model(cfg.model, cfg.train.seed);
  if (opts.resume) {
    Checkpoint ck = load_checked(cfg, *opts.resume);
    if (!ck.optimizer) throw std::runtime_error("checkpoint " + opts.resume->string() + " has no optimizer state");
    model = std::move(ck.model);
    AdamConfig ac;
    ac.lr = cfg.train.lr;
    ac.weight_decay = cfg.train.weight_decay;
    ac.grad_clip = cfg.train.grad_clip;
    state.optimizer.emplace(model.store(), ac, UpdateScope::All);
    state.optimizer->restore(ck.optimizer->step, std::move(ck.optimizer->first), std::move(ck.optimizer->second));
    state.step = ck.meta.train_step;
    say(opts.log, "resuming at step " + std::to_string(state.step));
  }
  say(opts.log, "training on " + std::to_string(train.size()) + " samples for " + std::to_string(cfg.train.epochs) +
                    " epochs");
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome o;
  o.result = train_supervised(model, train, cfg.train, state);
  for (std::size_t e = 0; e < o.result.epoch_loss.size(); ++e) {
    std::ostringstream line;
    line << "epoch " << (cfg.train.epochs - o.result.epoch_loss.size() + e + 1) << " loss " << std::setprecision(6)
         << o.result.epoch_loss[e];
    say(opts.log, line.str());
  }
  o.checkpoint = out;
  o.trace = with_suffix(out, ".trace.jsonl");
  save_checkpoint(out, model, meta_for(cfg, "train", cfg.train.seed, state.step),
                  state.optimizer ? &*state.optimizer : nullptr);
  write_file(o.trace, train_trace(cfg, o.result));
  load_checkpoint(out);
  std::ostringstream done;
  done << "wrote " << out.string() << " (" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)";
  say(opts.log, done.str());
  return o;
}

AdaptOutcome cmd_adapt(const RunConfig& cfg, const AdaptOptions& opts) {
  cfg.validate();
  if (opts.checkpoint.empty()) throw std::invalid_argument("adapt: a checkpoint is required");
  const fs::path data = opts.data.empty() ? cfg.output_root / "data" : opts.data;
  const fs::path out =
      opts.out.empty() ? cfg.output_root / (std::string("adapted_") + to_string(cfg.adapt.method) + ".ckpt") : opts.out;
  AdaptOutcome o;
  o.checkpoint = out;
  o.trace = with_suffix(out, ".trace.jsonl");

  if (cfg.adapt.method == AdaptMethod::None) {
    load_checked(cfg, opts.checkpoint);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::copy_file(opts.checkpoint, out, fs::copy_options::overwrite_existing);
    write_file(o.trace, adapt_trace(cfg, o.result));
    say(opts.log, "method none: copied " + opts.checkpoint.string() + " to " + out.string());
    return o;
  }

  Checkpoint ck = load_checked(cfg, opts.checkpoint);
  const auto test = load_split(cfg, data, "test");
  const auto images = images_of(test);
  say(opts.log, std::string("adapting with ") + to_string(cfg.adapt.method) + " (" + to_string(cfg.adapt.mode) + ", " +
                    std::to_string(cfg.adapt.epochs) + " epochs) on " + std::to_string(images.size()) + " images");
  o.result = adapt(ck.model, images, cfg.adapt, [&](int epoch, const Model&) {
    say(opts.log, "  epoch " + std::to_string(epoch) + " done");
  });
  save_checkpoint(out, ck.model, meta_for(cfg, to_string(cfg.adapt.method), cfg.adapt.seed, ck.meta.train_step));
  write_file(o.trace, adapt_trace(cfg, o.result));
  if (cfg.adapt.mode == AdaptMode::Episodic) {
    BerReport r = evaluate_predictions(o.result.predictions, test, cfg.eval_threshold);
    r.method = std::string(to_string(cfg.adapt.method)) + "/episodic";
    r.config_hash = config_hash(cfg);
    r.seed = cfg.adapt.seed;
    o.report = with_suffix(out, ".report.json");
    write_report(*o.report, r);
    say(opts.log, "episodic BER " + std::to_string(r.ber * 100.0));
  }
  load_checkpoint(out);
  say(opts.log, "wrote " + out.string());
  return o;
}

BerReport cmd_eval(const RunConfig& cfg, const EvalOptions& opts) {
  cfg.validate();
  if (opts.split != "train" && opts.split != "test") throw std::invalid_argument("eval: split must be train or test");
  const fs::path data = opts.data.empty() ? cfg.output_root / "data" : opts.data;
  const fs::path out = opts.out.empty() ? cfg.output_root / "report.json" : opts.out;
  const auto pairs = load_split(cfg, data, opts.split);

  std::vector<ShadowMask> preds;
  std::string method = "oracle";
  std::uint64_t seed = 0;
  if (opts.oracle) {
    for (const auto& p : pairs) preds.push_back(p.mask);
  } else {
    if (opts.checkpoint.empty()) throw std::invalid_argument("eval: a checkpoint is required (or --oracle)");
    const Checkpoint ck = load_checked(cfg, opts.checkpoint);
    preds = predict(ck.model, images_of(pairs));
    method = ck.meta.method;
    seed = ck.meta.seed;
  }
  BerReport r = evaluate_predictions(preds, pairs, cfg.eval_threshold);
  r.method = method;
  r.config_hash = config_hash(cfg);
  r.seed = seed;
  write_report(out, r);
  if (opts.dump_masks) {
    fs::create_directories(*opts.dump_masks);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      write_png(*opts.dump_masks / mask_name(pairs[i].id), image_cast<float>(preds[i]));
    }
    say(opts.log, "dumped " + std::to_string(preds.size()) + " masks to " + opts.dump_masks->string());
  }
  say(opts.log, render_report(r));
  return r;
}

const CompareCell& CompareTable::cell(const std::string& method, std::uint64_t seed) const {
  for (const auto& c : cells)
    if (c.method == method && c.seed == seed) return c;
  throw std::out_of_range("compare: no cell for " + method + " / seed " + std::to_string(seed));
}

double CompareTable::mean_ber(const std::string& method) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : cells)
    if (c.method == method) {
      sum += c.ber;
      ++n;
    }
  if (n == 0) throw std::out_of_range("compare: no cells for " + method);
  return sum / n;
}

std::vector<std::string> normalize_methods(const std::vector<std::string>& requested, std::ostream* log) {
  std::vector<std::string> out;
  for (const auto& m : requested) {
    if (std::find(kRows.begin(), kRows.end(), m) == kRows.end()) {
      throw std::invalid_argument("unknown comparison method '" + m +
                                  "' (expected none, fc-only, bc-only, tica, tent, bn or eta)");
    }
    if (std::find(out.begin(), out.end(), m) != out.end()) {
      say(log, "warning: duplicate method '" + m + "' ignored");
      continue;
    }
    out.push_back(m);
  }
  if (out.empty()) throw std::invalid_argument("compare: no methods requested");
  return out;
}

AdaptConfig row_config(const AdaptConfig& base, const std::string& row) {
  AdaptConfig a = base;
  if (row == "fc-only") {
    a.method = AdaptMethod::Tica;
    a.weights.lambda_bg = 0.0;
  } else if (row == "bc-only") {
    a.method = AdaptMethod::Tica;
    a.weights.lambda_fg = 0.0;
  } else {
    a.method = parse_adapt_method(row);
  }
  return a;
}

CompareTable cmd_compare(const RunConfig& cfg, const CompareOptions& opts) {
  cfg.validate();
  if (opts.epoch_sweep < 0) throw std::invalid_argument("compare: epoch sweep must be >= 0");
  CompareTable t;
  t.methods = normalize_methods(opts.methods, opts.log);
  t.seeds = cfg.seeds;
  t.epoch_sweep = opts.epoch_sweep;
  t.config_hash = config_hash(cfg);
  const fs::path data = opts.data.empty() ? cfg.output_root / "data" : opts.data;
  const fs::path out = opts.out.empty() ? cfg.output_root / "compare.json" : opts.out;
  const auto test = load_split(cfg, data, "test");
  const auto images = images_of(test);

  for (std::uint64_t seed : t.seeds) {
    fs::path ckpt_path;
    if (opts.checkpoints) {
      ckpt_path = *opts.checkpoints / ("seed_" + std::to_string(seed) + ".ckpt");
    } else {
      ckpt_path = cfg.output_root / "compare" / ("seed_" + std::to_string(seed)) / "model.ckpt";
      if (!fs::exists(ckpt_path)) {
        RunConfig seeded = cfg;
        seeded.train.seed = seed;
        say(opts.log, "training seed " + std::to_string(seed));
        cmd_train(seeded, TrainOptions{data, ckpt_path, std::nullopt, opts.log});
      }
    }
    const Checkpoint trained = load_checked(cfg, ckpt_path);
    for (const auto& row : t.methods) {
      AdaptConfig ac = row_config(cfg.adapt, row);
      ac.seed = seed;
      const int wanted = ac.epochs;
      if (opts.epoch_sweep > 0) ac.epochs = std::max(ac.epochs, opts.epoch_sweep);
      CompareCell c;
      c.method = row;
      c.seed = seed;
      Model model = trained.model;
      std::optional<BerReport> at_wanted;
      const auto t0 = std::chrono::steady_clock::now();
      const AdaptResult res = adapt(model, images, ac, [&](int epoch, const Model& m) {
        if (epoch > opts.epoch_sweep && epoch != wanted) return;
        const BerReport r = evaluate(m, test, cfg.eval_threshold);
        if (epoch <= opts.epoch_sweep) c.curve.push_back(r.ber);
        if (epoch == wanted) at_wanted = r;
      });
      c.seconds = seconds_since(t0);
      BerReport final_report;
      if (ac.mode == AdaptMode::Episodic) {
        final_report = evaluate_predictions(res.predictions, test, cfg.eval_threshold);
      } else if (at_wanted) {
        final_report = *at_wanted;
      } else {
        final_report = evaluate(model, test, cfg.eval_threshold);
      }
      c.ber = final_report.ber;
      c.ber_shadow = final_report.ber_shadow;
      c.ber_nonshadow = final_report.ber_nonshadow;
      std::ostringstream line;
      line << "  seed " << seed << "  " << std::left << std::setw(8) << row << " BER " << std::fixed
           << std::setprecision(2) << c.ber * 100.0 << "  (" << std::setprecision(1) << c.seconds << " s)";
      say(opts.log, line.str());
      t.cells.push_back(std::move(c));
    }
  }
  write_file(out, compare_to_json(t, cfg) + "\n");
  write_file(with_suffix(out, ".txt"), render_compare(t));
  const CompareTable back = compare_from_json(read_file(out));
  if (back.cells.size() != t.methods.size() * t.seeds.size()) {
    throw std::runtime_error("compare table " + out.string() + " failed validation");
  }
  say(opts.log, render_compare(t));
  return t;
}

std::string compare_to_json(const CompareTable& t, const RunConfig& cfg) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"method", c.method},
                     {"seed", c.seed},
                     {"ber", c.ber},
                     {"ber_shadow", c.ber_shadow},
                     {"ber_nonshadow", c.ber_nonshadow},
                     {"curve", c.curve},
                     {"seconds", c.seconds}});
  }
  json summary = json::array();
  for (const auto& m : t.methods) summary.push_back({{"method", m}, {"mean_ber", t.mean_ber(m)}});
  json j{{"config_hash", t.config_hash},
         {"config", json::parse(config_to_json(cfg, false))},
         {"methods", t.methods},
         {"seeds", t.seeds},
         {"epoch_sweep", t.epoch_sweep},
         {"cells", cells},
         {"summary", summary}};
  return j.dump(2);
}

CompareTable compare_from_json(const std::string& text) {
  CompareTable t;
  try {
    const json j = json::parse(text);
    t.config_hash = j.at("config_hash").get<std::string>();
    t.methods = j.at("methods").get<std::vector<std::string>>();
    t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    t.epoch_sweep = j.at("epoch_sweep").get<int>();
    for (const auto& c : j.at("cells")) {
      CompareCell cell;
      cell.method = c.at("method").get<std::string>();
      cell.seed = c.at("seed").get<std::uint64_t>();
      cell.ber = c.at("ber").get<double>();
      cell.ber_shadow = c.at("ber_shadow").get<double>();
      cell.ber_nonshadow = c.at("ber_nonshadow").get<double>();
      cell.curve = c.at("curve").get<std::vector<double>>();
      cell.seconds = c.at("seconds").get<double>();
      t.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("compare_from_json: ") + e.what());
  }
  return t;
}

std::string render_compare(const CompareTable& t) {
  std::ostringstream os;
  os << "BER x 100 (config " << t.config_hash.substr(0, 12) << ")\n";
  os << std::left << std::setw(10) << "method";
  for (auto s : t.seeds) os << std::right << std::setw(9) << ("seed " + std::to_string(s));
  os << std::right << std::setw(9) << "mean" << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& m : t.methods) {
    os << std::left << std::setw(10) << m;
    for (auto s : t.seeds) os << std::right << std::setw(9) << t.cell(m, s).ber * 100.0;
    os << std::right << std::setw(9) << t.mean_ber(m) * 100.0 << "\n";
  }
  if (t.epoch_sweep > 0) {
    os << "\nmean BER x 100 after each epoch\n" << std::left << std::setw(10) << "method";
    for (int e = 1; e <= t.epoch_sweep; ++e) os << std::right << std::setw(7) << e;
    os << "\n";
    for (const auto& m : t.methods) {
      os << std::left << std::setw(10) << m;
      for (int e = 0; e < t.epoch_sweep; ++e) {
        double sum = 0.0;
        int n = 0;
        for (auto s : t.seeds) {
          const auto& c = t.cell(m, s);
          if (static_cast<std::size_t>(e) < c.curve.size()) {
            sum += c.curve[e];
            ++n;
          }
        }
        os << std::right << std::setw(7);
        if (n > 0) os << sum / n * 100.0;
        else os << "-";
      }
      os << "\n";
    }
  }
  return os.str();
}

std::string render_report(const BerReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(16) << "method" << r.method << "\n"
     << std::setw(16) << "BER x 100" << r.ber * 100.0 << "\n"
     << std::setw(16) << "shadow" << r.ber_shadow * 100.0 << (r.shadow_degenerate ? "  (no shadow pixels)" : "")
     << "\n"
     << std::setw(16) << "non-shadow" << r.ber_nonshadow * 100.0
     << (r.nonshadow_degenerate ? "  (no non-shadow pixels)" : "") << "\n"
     << std::setw(16) << "counts"
     << "tp " << r.counts.tp << "  fp " << r.counts.fp << "  tn " << r.counts.tn << "  fn " << r.counts.fn << "\n"
     << std::setw(16) << "images" << r.per_image_ber.size() << "\n"
     << std::setw(16) << "config" << r.config_hash << "\n";
  return os.str();
}

}  // namespace tica::cli
