#pragma once

#include <accept/encoders.hpp>
#include <accept/util.hpp>

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

namespace accept {

/// Dual encoder plus the learnable temperature (tau = exp(log_tau)) and the
/// feature statistics the operational encoder was trained with.
struct Model {
  SimEncoder sim;
  OpEncoder op;
  double log_tau = std::log(0.07);
  FeatureNormalizer normalizer;

  double tau() const { return std::exp(log_tau); }

  static Model create(const SimEncoderConfig& sc, const OpEncoderConfig& oc, std::uint64_t seed) {
    Model m{SimEncoder(sc), OpEncoder(oc), std::log(0.07), {}};
    if (sc.embed_dim != oc.embed_dim) throw Error(ErrorKind::config, "encoders must share the embedding dimension");
    Rng rng(seed);
    m.sim.initialize(rng);
    m.op.initialize(rng);
    return m;
  }

  std::size_t embed_dim() const { return sim.config().embed_dim; }

  Embedding embed_curve(std::span<const double> curve) const { return normalize(sim.encode(curve)); }
  Embedding embed_window(const OperationalWindow& w) const { return normalize(op.encode(w, normalizer)); }
};

inline bool same_weights(const Model& a, const Model& b) {
  return a.sim.config() == b.sim.config() && a.op.config() == b.op.config() && a.sim.weights() == b.sim.weights() &&
         a.op.weights() == b.op.weights() && std::memcmp(&a.log_tau, &b.log_tau, sizeof(double)) == 0 &&
         a.normalizer == b.normalizer;
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   "ACCCKPT\0" | u32 version | u64 header_len | JSON header | tensors
// The JSON header holds both encoder configs, the normaliser, log_tau and the
// tensor index (name, rows, cols); tensor payloads follow in index order as
// column-major little-endian float64. Scalars in the header are stored as
// hexadecimal float strings so they round-trip exactly.

inline constexpr char checkpoint_magic[8] = {'A', 'C', 'C', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t checkpoint_format_version = 2;

namespace detail {

inline std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hexfloat(const nlohmann::json& j) {
  const auto s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (*end != '\0') throw Error(ErrorKind::parse, "bad float in checkpoint: " + s);
  return v;
}

inline nlohmann::json to_json(const SimEncoderConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.layers) layers.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  return {{"input_length", c.input_length}, {"position_channel", c.position_channel},
          {"input_shift", hexfloat(c.input_shift)}, {"input_scale", hexfloat(c.input_scale)},
          {"layers", layers}, {"embed_dim", c.embed_dim}};
}

inline SimEncoderConfig sim_config_from_json(const nlohmann::json& j) {
  SimEncoderConfig c;
  c.input_length = j.at("input_length").get<std::size_t>();
  c.position_channel = j.at("position_channel").get<bool>();
  c.input_shift = parse_hexfloat(j.at("input_shift"));
  c.input_scale = parse_hexfloat(j.at("input_scale"));
  c.layers.clear();
  for (const auto& l : j.at("layers"))
    c.layers.push_back({l.at("channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(), l.at("stride").get<std::size_t>()});
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  return c;
}

inline nlohmann::json to_json(const OpEncoderConfig& c) {
  return {{"chemistries", c.chemistries}, {"chem_dim", c.chem_dim}, {"hidden", c.hidden},
          {"heads", c.heads}, {"embed_dim", c.embed_dim}};
}

inline OpEncoderConfig op_config_from_json(const nlohmann::json& j) {
  OpEncoderConfig c;
  c.chemistries = j.at("chemistries").get<std::vector<std::string>>();
  c.chem_dim = j.at("chem_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  return c;
}

inline nlohmann::json to_json(const FeatureNormalizer& n) {
  nlohmann::json mean = nlohmann::json::array(), stdev = nlohmann::json::array();
  for (double v : n.mean) mean.push_back(hexfloat(v));
  for (double v : n.stdev) stdev.push_back(hexfloat(v));
  return {{"channels", {"temp_c", "chg_crate", "dis_crate", "voltage_v"}},
          {"mean", mean}, {"stdev", stdev},
          {"capacity_mean", hexfloat(n.capacity_mean)}, {"capacity_std", hexfloat(n.capacity_std)},
          {"cycle_scale", hexfloat(n.cycle_scale)}};
}

inline FeatureNormalizer normalizer_from_json(const nlohmann::json& j) {
  FeatureNormalizer n;
  for (std::size_t i = 0; i < 4; ++i) {
    n.mean[i] = parse_hexfloat(j.at("mean").at(i));
    n.stdev[i] = parse_hexfloat(j.at("stdev").at(i));
  }
  n.capacity_mean = parse_hexfloat(j.at("capacity_mean"));
  n.capacity_std = parse_hexfloat(j.at("capacity_std"));
  n.cycle_scale = parse_hexfloat(j.at("cycle_scale"));
  return n;
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Model& m) {
  nlohmann::json header;
  header["format"] = "accept-checkpoint";
  header["sim_encoder"] = detail::to_json(m.sim.config());
  header["op_encoder"] = detail::to_json(m.op.config());
  header["normalizer"] = detail::to_json(m.normalizer);
  header["log_tau"] = detail::hexfloat(m.log_tau);
  nlohmann::json index = nlohmann::json::array();
  for (const NamedTensors* set : {&m.sim.weights(), &m.op.weights()})
    for (std::size_t i = 0; i < set->size(); ++i)
      index.push_back({{"name", set->names[i]}, {"rows", (*set)[i].rows()}, {"cols", (*set)[i].cols()}});
  header["tensors"] = index;
  const std::string text = header.dump();

  std::ostringstream os(std::ios::binary);
  os.write(checkpoint_magic, sizeof checkpoint_magic);
  io::write_u32(os, checkpoint_format_version);
  io::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const NamedTensors* set : {&m.sim.weights(), &m.op.weights()})
    for (const auto& t : set->values)
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  return os.str();
}

inline Model checkpoint_from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, checkpoint_magic, sizeof magic) != 0)
    throw Error(ErrorKind::parse, "not a checkpoint file");
  const auto version = io::read_u32(is, "checkpoint version");
  if (version != checkpoint_format_version)
    throw Error(ErrorKind::parse, "unsupported checkpoint version " + std::to_string(version));
  const auto len = io::read_u64(is, "checkpoint header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw Error(ErrorKind::parse, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::parse, std::string("checkpoint header: ") + e.what());
  }
  Model m{SimEncoder(detail::sim_config_from_json(header.at("sim_encoder"))),
          OpEncoder(detail::op_config_from_json(header.at("op_encoder"))),
          detail::parse_hexfloat(header.at("log_tau")), detail::normalizer_from_json(header.at("normalizer"))};
  const auto& index = header.at("tensors");
  std::size_t k = 0;
  for (NamedTensors* set : {&m.sim.mutable_weights(), &m.op.mutable_weights()}) {
    for (std::size_t i = 0; i < set->size(); ++i, ++k) {
      if (k >= index.size()) throw Error(ErrorKind::parse, "checkpoint tensor index too short");
      const auto& entry = index.at(k);
      auto& t = (*set)[i];
      if (entry.at("name").get<std::string>() != set->names[i] || entry.at("rows").get<Eigen::Index>() != t.rows() ||
          entry.at("cols").get<Eigen::Index>() != t.cols())
        throw Error(ErrorKind::parse, "checkpoint tensor " + set->names[i] + " does not match the configuration");
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
      if (!is) throw Error(ErrorKind::parse, "truncated tensor " + set->names[i]);
    }
  }
  if (k != index.size()) throw Error(ErrorKind::parse, "checkpoint has unexpected tensors");
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::parse, "trailing bytes in checkpoint");
  if (m.sim.config().embed_dim != m.op.config().embed_dim)
    throw Error(ErrorKind::config, "checkpoint encoders disagree on embedding dimension");
  return m;
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, checkpoint_to_bytes(m));
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(io::read_file(path));
}

inline std::uint64_t checkpoint_hash(const Model& m) { return io::fnv1a(checkpoint_to_bytes(m)); }

}  // namespace accept
