#include "tica/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace tica {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'I', 'C', 'A', 'C', 'K', 'P', 'T'};

json arch_to_json(const ModelConfig& c) {
  return json{{"input_rows", c.input_size.rows},
              {"input_cols", c.input_size.cols},
              {"in_channels", c.in_channels},
              {"widths", std::vector<int>(c.widths.begin(), c.widths.end())},
              {"decoder_width", c.decoder_width},
              {"norm_momentum", c.norm_momentum},
              {"norm_eps", c.norm_eps}};
}

ModelConfig arch_from_json(const json& j) {
  ModelConfig c;
  c.input_size = {j.at("input_rows").get<int>(), j.at("input_cols").get<int>()};
  c.in_channels = j.at("in_channels").get<int>();
  const auto w = j.at("widths").get<std::vector<int>>();
  if (w.size() != 4) throw std::runtime_error("checkpoint: architecture must list 4 widths");
  std::copy(w.begin(), w.end(), c.widths.begin());
  c.decoder_width = j.at("decoder_width").get<int>();
  c.norm_momentum = j.at("norm_momentum").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.validate();
  return c;
}

template <typename V>
void append_raw(std::string& payload, const V& values) {
  const auto* p = reinterpret_cast<const char*>(values.data());
  payload.append(p, values.size() * sizeof(typename V::value_type));
}

template <typename T>
void read_raw(const std::string& payload, std::size_t offset, std::size_t count, std::vector<T>& out) {
  if (offset > payload.size() || count > (payload.size() - offset) / sizeof(T)) {
    throw std::runtime_error("checkpoint: tensor data runs past the end of the file");
  }
  out.resize(count);
  std::memcpy(out.data(), payload.data() + offset, count * sizeof(T));
}

std::size_t shape_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

std::string serialize_checkpoint(const Model& model, const CheckpointMeta& meta, const Adam* optimizer) {
  std::string payload;
  json tensors = json::array();
  for (const auto& p : model.store().params()) {
    tensors.push_back({{"name", p.name},
                       {"role", "param"},
                       {"group", to_string(p.group)},
                       {"kind", to_string(p.kind)},
                       {"dtype", "f32"},
                       {"shape", p.shape},
                       {"offset", payload.size()}});
    append_raw(payload, p.value);
  }
  for (const auto& s : model.store().states()) {
    tensors.push_back({{"name", s.name},
                       {"role", "state"},
                       {"group", to_string(s.group)},
                       {"dtype", "f32"},
                       {"shape", s.shape},
                       {"offset", payload.size()}});
    append_raw(payload, s.value);
  }
  json header{{"format", "tica-checkpoint"},
              {"arch", arch_to_json(model.config())},
              {"train_step", meta.train_step},
              {"method", meta.method},
              {"seed", meta.seed},
              {"config", meta.config_json},
              {"config_hash", meta.config_hash}};
  if (optimizer != nullptr) {
    const auto& params = model.store().params();
    const auto& m = optimizer->first_moments();
    const auto& v = optimizer->second_moments();
    if (m.size() != params.size()) throw std::invalid_argument("serialize_checkpoint: optimizer does not match model");
    json opt{{"step", optimizer->step_count()}, {"scope", to_string(optimizer->scope())}};
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m[i].empty()) continue;
      for (int which = 0; which < 2; ++which) {
        const auto& buf = which == 0 ? m[i] : v[i];
        tensors.push_back({{"name", std::string(which == 0 ? "adam.m." : "adam.v.") + params[i].name},
                           {"role", "optimizer"},
                           {"dtype", "f64"},
                           {"shape", params[i].shape},
                           {"offset", payload.size()}});
        append_raw(payload, buf);
      }
    }
    header["optimizer"] = opt;
  }
  header["tensors"] = tensors;
  header["payload_bytes"] = payload.size();

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof(version));
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  constexpr std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: not a checkpoint file (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(len));
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  if (len > bytes.size() - prefix) throw std::runtime_error("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + len));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
  }
  const std::string payload = bytes.substr(prefix + len);
  if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
    throw std::runtime_error("checkpoint: payload size mismatch (truncated or padded file)");
  }

  Checkpoint ck;
  Rng init(0);
  ck.model = Model(arch_from_json(header.at("arch")), init);
  ck.meta.train_step = header.at("train_step").get<std::uint64_t>();
  ck.meta.method = header.at("method").get<std::string>();
  ck.meta.seed = header.at("seed").get<std::uint64_t>();
  ck.meta.config_json = header.at("config").get<std::string>();
  ck.meta.config_hash = header.at("config_hash").get<std::string>();

  auto& params = ck.model.store().params();
  auto& states = ck.model.store().states();
  std::vector<bool> seen_param(params.size(), false), seen_state(states.size(), false);
  std::vector<std::vector<double>> m(params.size()), v(params.size());

  auto find_param = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name == name) return i;
    }
    throw std::runtime_error("checkpoint: unknown tensor '" + name + "' for this architecture");
  };

  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::string role = t.at("role").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<int>>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    if (role == "param") {
      const std::size_t i = find_param(name);
      if (shape != params[i].shape) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
      if (parse_param_group(t.at("group").get<std::string>()) != params[i].group ||
          parse_param_kind(t.at("kind").get<std::string>()) != params[i].kind) {
        throw std::runtime_error("checkpoint: group/kind mismatch for '" + name + "'");
      }
      read_raw(payload, offset, shape_count(shape), params[i].value);
      seen_param[i] = true;
    } else if (role == "state") {
      std::size_t i = 0;
      while (i < states.size() && states[i].name != name) ++i;
      if (i == states.size()) throw std::runtime_error("checkpoint: unknown state tensor '" + name + "'");
      if (shape != states[i].shape) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
      read_raw(payload, offset, shape_count(shape), states[i].value);
      seen_state[i] = true;
    } else if (role == "optimizer") {
      const bool first = name.rfind("adam.m.", 0) == 0;
      if (!first && name.rfind("adam.v.", 0) != 0) throw std::runtime_error("checkpoint: bad optimizer tensor '" + name + "'");
      const std::size_t i = find_param(name.substr(7));
      read_raw(payload, offset, shape_count(shape), first ? m[i] : v[i]);
    } else {
      throw std::runtime_error("checkpoint: unknown tensor role '" + role + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!seen_param[i]) throw std::runtime_error("checkpoint: missing tensor '" + params[i].name + "'");
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!seen_state[i]) throw std::runtime_error("checkpoint: missing state '" + states[i].name + "'");
  }
  if (header.contains("optimizer")) {
    OptimizerSnapshot snap;
    snap.step = header["optimizer"].at("step").get<std::uint64_t>();
    snap.first = std::move(m);
    snap.second = std::move(v);
    ck.optimizer = std::move(snap);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const Adam* optimizer) {
  const std::string bytes = serialize_checkpoint(model, meta, optimizer);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

namespace {

template <typename A, typename B>
bool bits_equal(const A& a, const B& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(typename A::value_type)) == 0;
}

}  // namespace

bool same_parameters(const Model& a, const Model& b) {
  const auto& pa = a.store().params();
  const auto& pb = b.store().params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || !bits_equal(pa[i].value, pb[i].value)) return false;
  }
  return true;
}

bool same_states(const Model& a, const Model& b) {
  const auto& sa = a.store().states();
  const auto& sb = b.store().states();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].name != sb[i].name || !bits_equal(sa[i].value, sb[i].value)) return false;
  }
  return true;
}

std::vector<std::string> changed_parameters(const Model& before, const Model& after) {
  const auto& pa = before.store().params();
  const auto& pb = after.store().params();
  if (pa.size() != pb.size()) throw std::invalid_argument("changed_parameters: models differ in layout");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bits_equal(pa[i].value, pb[i].value)) out.push_back(pa[i].name);
  }
  return out;
}

}  // namespace tica
