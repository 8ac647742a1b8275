#include "tica/cli/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "tica/digest.hpp"

namespace tica::cli {
namespace {

using nlohmann::json;

json pair(int a, int b) { return json::array({a, b}); }
json pair(double a, double b) { return json::array({a, b}); }

json model_json(const ModelConfig& m) {
  return {{"input_size", pair(m.input_size.rows, m.input_size.cols)},
          {"in_channels", m.in_channels},
          {"widths", m.widths},
          {"decoder_width", m.decoder_width},
          {"norm_momentum", m.norm_momentum},
          {"norm_eps", m.norm_eps}};
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"cosine", t.cosine},
          {"augment", t.augment},
          {"bbce_literal", t.weighting == BbceWeighting::Literal},
          {"grad_clip", t.grad_clip},
          {"seed", t.seed}};
}

json adapt_json(const AdaptConfig& a) {
  return {{"method", to_string(a.method)},
          {"epochs", a.epochs},
          {"batch_size", a.batch_size},
          {"lr", a.lr},
          {"lambda_fg", a.weights.lambda_fg},
          {"lambda_bg", a.weights.lambda_bg},
          {"threshold", a.threshold},
          {"update_scope", a.update_scope ? to_string(*a.update_scope) : "default"},
          {"kl_mode", to_string(a.kl_mode)},
          {"detach_target", a.detach_target},
          {"eta_entropy_threshold", a.eta_entropy_threshold},
          {"mode", to_string(a.mode)},
          {"eval_stats", a.eval_stats},
          {"grad_clip", a.grad_clip},
          {"seed", a.seed}};
}

json data_json(const SynthConfig& d) {
  json families = json::array();
  for (ShapeFamily f : d.shape_families) families.push_back(to_string(f));
  return {{"canvas", pair(d.canvas.rows, d.canvas.cols)},
          {"channels", d.channels},
          {"noise_octaves", d.noise_octaves},
          {"texture_contrast", d.texture_contrast},
          {"shadow_count", pair(d.shadow_count.lo, d.shadow_count.hi)},
          {"shape_families", families},
          {"shadow_radius", pair(d.shadow_radius.lo, d.shadow_radius.hi)},
          {"alpha", pair(d.alpha.lo, d.alpha.hi)},
          {"penumbra_sigma", pair(d.penumbra_sigma.lo, d.penumbra_sigma.hi)},
          {"distractor_count", pair(d.distractor_count.lo, d.distractor_count.hi)},
          {"distractor_radius", pair(d.distractor_radius.lo, d.distractor_radius.hi)},
          {"distractor_albedo", pair(d.distractor_albedo.lo, d.distractor_albedo.hi)},
          {"gain", d.gain},
          {"gamma", d.gamma},
          {"train_count", d.train_count},
          {"test_count", d.test_count},
          {"seed", d.seed}};
}

json to_json_value(const RunConfig& c, bool with_paths) {
  json j = {{"model", model_json(c.model)},
            {"train", train_json(c.train)},
            {"adapt", adapt_json(c.adapt)},
            {"data", data_json(c.data)},
            {"eval", {{"threshold", c.eval_threshold}}},
            {"seeds", c.seeds}};
  if (with_paths) j["output_root"] = c.output_root.string();
  return j;
}

[[noreturn]] void bad_key(const std::string& where, const std::string& key) {
  throw std::invalid_argument("config: unknown key '" + where + key + "'");
}

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + key + "': " + v.dump());
  }
}

template <typename T>
void read_pair(const json& v, const std::string& key, T& lo, T& hi) {
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument("config: '" + key + "' must be a 2-element array");
  lo = as<T>(v[0], key);
  hi = as<T>(v[1], key);
}

void read_model(const json& j, ModelConfig& m) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "model." + k;
    if (k == "input_size") read_pair(v, key, m.input_size.rows, m.input_size.cols);
    else if (k == "in_channels") m.in_channels = as<int>(v, key);
    else if (k == "widths") {
      const auto w = as<std::vector<int>>(v, key);
      if (w.size() != 4) throw std::invalid_argument("config: 'model.widths' needs 4 entries");
      std::copy(w.begin(), w.end(), m.widths.begin());
    } else if (k == "decoder_width") m.decoder_width = as<int>(v, key);
    else if (k == "norm_momentum") m.norm_momentum = as<double>(v, key);
    else if (k == "norm_eps") m.norm_eps = as<double>(v, key);
    else bad_key("model.", k);
  }
}

void read_train(const json& j, TrainConfig& t) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "train." + k;
    if (k == "epochs") t.epochs = as<int>(v, key);
    else if (k == "batch_size") t.batch_size = as<int>(v, key);
    else if (k == "lr") t.lr = as<double>(v, key);
    else if (k == "weight_decay") t.weight_decay = as<double>(v, key);
    else if (k == "cosine") t.cosine = as<bool>(v, key);
    else if (k == "augment") t.augment = as<bool>(v, key);
    else if (k == "bbce_literal") t.weighting = as<bool>(v, key) ? BbceWeighting::Literal : BbceWeighting::InverseFrequency;
    else if (k == "grad_clip") t.grad_clip = as<double>(v, key);
    else if (k == "seed") t.seed = as<std::uint64_t>(v, key);
    else bad_key("train.", k);
  }
}

void read_adapt(const json& j, AdaptConfig& a) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "adapt." + k;
    if (k == "method") a.method = parse_adapt_method(as<std::string>(v, key));
    else if (k == "epochs") a.epochs = as<int>(v, key);
    else if (k == "batch_size") a.batch_size = as<int>(v, key);
    else if (k == "lr") a.lr = as<double>(v, key);
    else if (k == "lambda_fg") a.weights.lambda_fg = as<double>(v, key);
    else if (k == "lambda_bg") a.weights.lambda_bg = as<double>(v, key);
    else if (k == "threshold") a.threshold = as<double>(v, key);
    else if (k == "update_scope") {
      const auto s = as<std::string>(v, key);
      if (s == "default") a.update_scope.reset();
      else a.update_scope = parse_update_scope(s);
    } else if (k == "kl_mode") a.kl_mode = parse_kl_mode(as<std::string>(v, key));
    else if (k == "detach_target") a.detach_target = as<bool>(v, key);
    else if (k == "eta_entropy_threshold") a.eta_entropy_threshold = as<double>(v, key);
    else if (k == "mode") a.mode = parse_adapt_mode(as<std::string>(v, key));
    else if (k == "eval_stats") a.eval_stats = as<bool>(v, key);
    else if (k == "grad_clip") a.grad_clip = as<double>(v, key);
    else if (k == "seed") a.seed = as<std::uint64_t>(v, key);
    else bad_key("adapt.", k);
  }
}

void read_data(const json& j, SynthConfig& d) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "data." + k;
    if (k == "canvas") read_pair(v, key, d.canvas.rows, d.canvas.cols);
    else if (k == "channels") d.channels = as<int>(v, key);
    else if (k == "noise_octaves") d.noise_octaves = as<int>(v, key);
    else if (k == "texture_contrast") d.texture_contrast = as<double>(v, key);
    else if (k == "shadow_count") read_pair(v, key, d.shadow_count.lo, d.shadow_count.hi);
    else if (k == "shape_families") {
      d.shape_families.clear();
      for (const auto& s : as<std::vector<std::string>>(v, key)) d.shape_families.push_back(parse_shape_family(s));
    } else if (k == "shadow_radius") read_pair(v, key, d.shadow_radius.lo, d.shadow_radius.hi);
    else if (k == "alpha") read_pair(v, key, d.alpha.lo, d.alpha.hi);
    else if (k == "penumbra_sigma") read_pair(v, key, d.penumbra_sigma.lo, d.penumbra_sigma.hi);
    else if (k == "distractor_count") read_pair(v, key, d.distractor_count.lo, d.distractor_count.hi);
    else if (k == "distractor_radius") read_pair(v, key, d.distractor_radius.lo, d.distractor_radius.hi);
    else if (k == "distractor_albedo") read_pair(v, key, d.distractor_albedo.lo, d.distractor_albedo.hi);
    else if (k == "gain") d.gain = as<double>(v, key);
    else if (k == "gamma") d.gamma = as<double>(v, key);
    else if (k == "train_count") d.train_count = as<int>(v, key);
    else if (k == "test_count") d.test_count = as<int>(v, key);
    else if (k == "seed") d.seed = as<std::uint64_t>(v, key);
    else bad_key("data.", k);
  }
}

void read_all(const json& j, RunConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "model") read_model(v, c.model);
    else if (k == "train") read_train(v, c.train);
    else if (k == "adapt") read_adapt(v, c.adapt);
    else if (k == "data") read_data(v, c.data);
    else if (k == "eval") {
      for (const auto& [ek, ev] : v.items()) {
        if (ek == "threshold") c.eval_threshold = as<double>(ev, "eval.threshold");
        else bad_key("eval.", ek);
      }
    } else if (k == "seeds") c.seeds = as<std::vector<std::uint64_t>>(v, "seeds");
    else if (k == "output_root") c.output_root = as<std::string>(v, "output_root");
    else bad_key("", k);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  adapt.validate();
  data.validate();
  if (!(eval_threshold > 0.0 && eval_threshold < 1.0)) throw std::invalid_argument("config: eval.threshold must lie in (0, 1)");
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (data.canvas != model.input_size) {
    throw std::invalid_argument("config: data.canvas " + to_string(data.canvas) + " differs from model.input_size " +
                                to_string(model.input_size));
  }
  if (data.channels != model.in_channels) throw std::invalid_argument("config: data.channels differs from model.in_channels");
}

std::string config_to_json(const RunConfig& cfg, bool with_paths) { return to_json_value(cfg, with_paths).dump(2); }

RunConfig config_from_json(const std::string& text, RunConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  read_all(j, base);
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::move(base));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch;
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    patch[path] = value;
  } else {
    patch[path.substr(0, dot)][path.substr(dot + 1)] = value;
  }
  read_all(patch, cfg);
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json_value(cfg, false).dump()); }

}  // namespace tica::cli
