#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphsnn/data.hpp"
#include "morphsnn/network.hpp"
#include "morphsnn/training.hpp"

namespace morphsnn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Event-frame files
//
//   "MSNN" | u16 version | u32 T, C, H, W | u32 samples | u32 classes
//   per sample: u32 label, then T*C*H*W bytes in {0,1}
//
// All integers little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kEventFrameVersion = 1;

struct EventFrameFile {
  StreamDims dims;
  std::uint32_t classes = 0;
  std::vector<SynthStream> samples;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw DataError(path_ + ": truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) + " more)");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace detail

inline std::string encode_event_frames(const EventFrameFile& f) {
  std::string out = "MSNN";
  detail::put_u16(out, kEventFrameVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.dims.timesteps));
  detail::put_u32(out, static_cast<std::uint32_t>(f.dims.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(f.dims.height));
  detail::put_u32(out, static_cast<std::uint32_t>(f.dims.width));
  detail::put_u32(out, static_cast<std::uint32_t>(f.samples.size()));
  detail::put_u32(out, f.classes);
  const MapShape frame{f.dims.channels, f.dims.height, f.dims.width};
  for (const SynthStream& s : f.samples) {
    if (s.frames.timesteps() != f.dims.timesteps || s.frames.frame_shape() != frame) {
      throw DimensionError("event frames: sample " + s.frames.dims_string() + " does not match file dims");
    }
    if (s.label >= f.classes) throw DataError("event frames: label " + std::to_string(s.label) + " >= class count");
    detail::put_u32(out, static_cast<std::uint32_t>(s.label));
    for (auto v : s.frames.raw()) out.push_back(static_cast<char>(v));
  }
  return out;
}

inline EventFrameFile decode_event_frames(const std::string& bytes, const std::string& path = "<memory>") {
  detail::ByteReader r(bytes, path);
  const auto* magic = r.take(4);
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "MSNN") throw DataError(path + ": bad magic");
  const std::uint16_t version = r.u16();
  if (version != kEventFrameVersion) throw DataError(path + ": unsupported version " + std::to_string(version));
  EventFrameFile f;
  f.dims.timesteps = r.u32();
  f.dims.channels = r.u32();
  f.dims.height = r.u32();
  f.dims.width = r.u32();
  const std::uint32_t n = r.u32();
  f.classes = r.u32();
  if (f.dims.timesteps == 0 || f.dims.channels == 0 || f.dims.height == 0 || f.dims.width == 0) {
    throw DataError(path + ": zero dimension in header");
  }
  const std::size_t elems = f.dims.timesteps * f.dims.channels * f.dims.height * f.dims.width;
  if (r.remaining() != static_cast<std::size_t>(n) * (4 + elems)) {
    throw DataError(path + ": body is " + std::to_string(r.remaining()) + " bytes, header declares " +
                    std::to_string(static_cast<std::size_t>(n) * (4 + elems)));
  }
  f.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    SynthStream s;
    s.label = r.u32();
    if (s.label >= f.classes) throw DataError(path + ": sample " + std::to_string(i) + " label out of range");
    s.frames = SpikeTensor(f.dims.timesteps, f.dims.channels, f.dims.height, f.dims.width);
    const auto* p = r.take(elems);
    auto raw = s.frames.raw();
    for (std::size_t k = 0; k < elems; ++k) {
      if (p[k] > 1) throw DataError(path + ": sample " + std::to_string(i) + " has a non-binary byte");
      raw[k] = p[k];
    }
    f.samples.push_back(std::move(s));
  }
  return f;
}

inline void write_event_frames(const std::string& path, const EventFrameFile& f) {
  detail::write_file(path, encode_event_frames(f));
}

inline EventFrameFile read_event_frames(const std::string& path) {
  return decode_event_frames(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ParameterError(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw ParameterError(what + ": unknown key '" + it.key() + "' (known: " + list + ")");
    }
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline json to_json(const NetworkConfig& c) {
  return json{{"input_channels", c.input_channels},
              {"height", c.height},
              {"width", c.width},
              {"channels", c.channels},
              {"layers", c.layers},
              {"nodes", c.nodes},
              {"classes", c.classes},
              {"timesteps", c.timesteps},
              {"diffusion_steps", c.diffusion_steps},
              {"topk", c.topk},
              {"heads", c.heads},
              {"beta", c.beta},
              {"trace_lambda", c.trace_lambda},
              {"tau_softmax", c.tau_softmax},
              {"dropout", c.dropout},
              {"tau_decay", c.lif.tau_decay},
              {"v_th", c.lif.v_th},
              {"surrogate_alpha", c.lif.surrogate_alpha},
              {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"input_channels", "height", "width", "channels", "layers", "nodes", "classes",
                                  "timesteps", "diffusion_steps", "topk", "heads", "beta", "trace_lambda",
                                  "tau_softmax", "dropout", "tau_decay", "v_th", "surrogate_alpha", "seed"},
                              "network config");
  NetworkConfig c;
  detail::read_key(j, "input_channels", c.input_channels);
  detail::read_key(j, "height", c.height);
  detail::read_key(j, "width", c.width);
  detail::read_key(j, "channels", c.channels);
  detail::read_key(j, "layers", c.layers);
  detail::read_key(j, "nodes", c.nodes);
  detail::read_key(j, "classes", c.classes);
  detail::read_key(j, "timesteps", c.timesteps);
  detail::read_key(j, "diffusion_steps", c.diffusion_steps);
  detail::read_key(j, "topk", c.topk);
  detail::read_key(j, "heads", c.heads);
  detail::read_key(j, "beta", c.beta);
  detail::read_key(j, "trace_lambda", c.trace_lambda);
  detail::read_key(j, "tau_softmax", c.tau_softmax);
  detail::read_key(j, "dropout", c.dropout);
  detail::read_key(j, "tau_decay", c.lif.tau_decay);
  detail::read_key(j, "v_th", c.lif.v_th);
  detail::read_key(j, "surrogate_alpha", c.lif.surrogate_alpha);
  detail::read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

/// Training config: flat keys. Input dims and class count come from the data.
inline TrainConfig train_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"epochs", "batch_size", "lr", "schedule", "momentum", "weight_decay", "step_size",
                                  "step_gamma", "target_train_acc", "static", "seed", "nodes", "diffusion_steps",
                                  "topk", "trace_lambda", "beta", "heads", "channels", "layers", "tau_softmax",
                                  "dropout", "tau_decay", "v_th", "surrogate_alpha"},
                              "train config");
  TrainConfig c;
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "lr", c.lr);
  std::string schedule = to_string(c.schedule);
  detail::read_key(j, "schedule", schedule);
  c.schedule = parse_schedule(schedule);
  detail::read_key(j, "momentum", c.momentum);
  detail::read_key(j, "weight_decay", c.weight_decay);
  detail::read_key(j, "step_size", c.step_size);
  detail::read_key(j, "step_gamma", c.step_gamma);
  detail::read_key(j, "target_train_acc", c.target_train_acc);
  detail::read_key(j, "static", c.static_graph);
  detail::read_key(j, "seed", c.network.seed);
  detail::read_key(j, "nodes", c.network.nodes);
  detail::read_key(j, "diffusion_steps", c.network.diffusion_steps);
  detail::read_key(j, "topk", c.network.topk);
  detail::read_key(j, "trace_lambda", c.network.trace_lambda);
  detail::read_key(j, "beta", c.network.beta);
  detail::read_key(j, "heads", c.network.heads);
  detail::read_key(j, "channels", c.network.channels);
  detail::read_key(j, "layers", c.network.layers);
  detail::read_key(j, "tau_softmax", c.network.tau_softmax);
  detail::read_key(j, "dropout", c.network.dropout);
  detail::read_key(j, "tau_decay", c.network.lif.tau_decay);
  detail::read_key(j, "v_th", c.network.lif.v_th);
  detail::read_key(j, "surrogate_alpha", c.network.lif.surrogate_alpha);
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"schedule", to_string(c.schedule)},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"step_size", c.step_size},
              {"step_gamma", c.step_gamma},
              {"target_train_acc", c.target_train_acc},
              {"static", c.static_graph},
              {"seed", c.network.seed},
              {"nodes", c.network.nodes},
              {"diffusion_steps", c.network.diffusion_steps},
              {"topk", c.network.topk},
              {"trace_lambda", c.network.trace_lambda},
              {"beta", c.network.beta},
              {"heads", c.network.heads},
              {"channels", c.network.channels},
              {"layers", c.network.layers},
              {"tau_softmax", c.network.tau_softmax},
              {"dropout", c.network.dropout},
              {"tau_decay", c.network.lif.tau_decay},
              {"v_th", c.network.lif.v_th},
              {"surrogate_alpha", c.network.lif.surrogate_alpha}};
}

inline TrainConfig read_train_config(const std::string& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParameterError(path + ": " + e.what());
  }
  return train_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw DataError("checkpoint: " + what + " has wrong value count");
  return Matrix(rows, cols, std::move(data));
}

inline std::string node_key(const ConvBnSnNode& n) {
  const std::string& w = n.weight.name;
  const std::string suffix = ".conv.weight";
  return w.size() > suffix.size() ? w.substr(0, w.size() - suffix.size()) : w;
}

}  // namespace detail

inline json checkpoint_json(MorphNet& net) {
  json params = json::object();
  net.visit_parameters([&](Parameter& p) { params[p.name] = detail::matrix_json(p.value); });
  json buffers = json::object();
  net.visit_nodes([&](ConvBnSnNode& n) {
    buffers[detail::node_key(n)] = json{{"running_mean", detail::matrix_json(n.bn.running_mean)},
                                        {"running_var", detail::matrix_json(n.bn.running_var)}};
  });
  return json{{"format_version", kCheckpointVersion},
              {"config", to_json(net.config)},
              {"parameters", params},
              {"bn_buffers", buffers}};
}

inline MorphNet net_from_checkpoint(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) throw DataError("checkpoint: unsupported format_version");
    MorphNet net(network_config_from_json(j.at("config")));
    const json& params = j.at("parameters");
    std::size_t seen = 0;
    net.visit_parameters([&](Parameter& p) {
      if (!params.contains(p.name)) throw DataError("checkpoint: missing parameter " + p.name);
      Matrix m = detail::matrix_from_json(params.at(p.name), p.name);
      if (!m.same_shape(p.value)) throw DataError("checkpoint: parameter " + p.name + " has shape " + m.shape());
      p.value = std::move(m);
      p.zero_grad();
      ++seen;
    });
    if (seen != params.size()) throw DataError("checkpoint: unexpected extra parameters");
    const json& buffers = j.at("bn_buffers");
    net.visit_nodes([&](ConvBnSnNode& n) {
      const std::string key = detail::node_key(n);
      if (!buffers.contains(key)) throw DataError("checkpoint: missing BN buffers for " + key);
      n.bn.running_mean = detail::matrix_from_json(buffers.at(key).at("running_mean"), key + ".running_mean");
      n.bn.running_var = detail::matrix_from_json(buffers.at(key).at("running_var"), key + ".running_var");
    });
    return net;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, MorphNet& net) {
  detail::write_file(path, checkpoint_json(net).dump(1) + "\n");
}

inline MorphNet load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  return net_from_checkpoint(j);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Row-at-a-time CSV builder; write() emits the header plus rows.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw DimensionError("csv: row has " + std::to_string(row.size()) + " cells");
    rows_.push_back(std::move(row));
  }

  [[nodiscard]] std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
      out += "\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::string& path) const { detail::write_file(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace morphsnn
