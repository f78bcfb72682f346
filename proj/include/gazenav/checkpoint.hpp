#pragma once

// Network checkpoints.
//
// Binary layout, version 1, all integers and reals little-endian:
//   char[8]  magic "GZNVCKPT"
//   u32      version (= 1)
//   u32      flags (bit 0: optimizer slots present)
//   u32      net count
//   per net:
//     u32 name length, name bytes (UTF-8)
//     i64 optimizer step count
//     u32 layer count
//     per layer: u8 kind, u8 bias, u32 in, u32 out, f64 dropout p
//   per net, per layer with weights, per tensor (weight then bias):
//     f64[rows*cols] value, row-major
//     if flags bit 0: f64[rows*cols] first moment, f64[rows*cols] second moment
//
// A JSON sidecar (`<path>.json`) repeats the layer dims and step counts and
// carries free-form metadata.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/nn.hpp"

namespace gazenav::nn {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpoint : public Error {
 public:
  using Error::Error;
};

inline constexpr char kCheckpointMagic[8] = {'G', 'Z', 'N', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kFlagOptimizer = 1;

struct NamedNetwork {
  std::string name;
  Network net;
};

namespace detail {

inline void put_u(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::ostream& os, double d) { put_u(os, std::bit_cast<std::uint64_t>(d), 8); }

inline std::uint64_t get_u(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw CheckpointError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u(is, 8)); }

inline void put_matrix(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}
inline void get_matrix(std::istream& is, Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedNetwork>& nets,
                             bool with_optimizer) {
  using namespace detail;
  os.write(kCheckpointMagic, 8);
  put_u(os, kCheckpointVersion, 4);
  put_u(os, with_optimizer ? kFlagOptimizer : 0, 4);
  put_u(os, nets.size(), 4);
  for (const auto& n : nets) {
    put_u(os, n.name.size(), 4);
    os.write(n.name.data(), static_cast<std::streamsize>(n.name.size()));
    put_u(os, static_cast<std::uint64_t>(n.net.params.step), 8);
    put_u(os, n.net.specs.size(), 4);
    for (const auto& s : n.net.specs) {
      put_u(os, static_cast<std::uint8_t>(s.kind), 1);
      put_u(os, s.bias ? 1 : 0, 1);
      put_u(os, static_cast<std::uint64_t>(s.in), 4);
      put_u(os, static_cast<std::uint64_t>(s.out), 4);
      put_f64(os, s.p);
    }
  }
  for (const auto& n : nets) {
    n.net.params.for_each_tensor([&](const Tensor& t) {
      put_matrix(os, t.value);
      if (with_optimizer) {
        put_matrix(os, t.m);
        put_matrix(os, t.v);
      }
    });
  }
}

inline std::vector<NamedNetwork> read_checkpoint(std::istream& is) {
  using namespace detail;
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = get_u(is, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const bool with_optimizer = (get_u(is, 4) & kFlagOptimizer) != 0;
  const auto count = get_u(is, 4);
  if (count > 1024) throw CheckpointError("implausible net count");
  std::vector<NamedNetwork> nets(count);
  for (auto& n : nets) {
    const auto len = get_u(is, 4);
    if (len > 4096) throw CheckpointError("implausible name length");
    n.name.resize(len);
    is.read(n.name.data(), static_cast<std::streamsize>(len));
    n.net.params.step = static_cast<std::int64_t>(get_u(is, 8));
    const auto layers = get_u(is, 4);
    if (layers > 4096) throw CheckpointError("implausible layer count");
    for (std::uint64_t i = 0; i < layers; ++i) {
      LayerSpec s;
      const auto kind = get_u(is, 1);
      if (kind > static_cast<std::uint64_t>(LayerKind::Dropout)) throw CheckpointError("unknown layer kind");
      s.kind = static_cast<LayerKind>(kind);
      s.bias = get_u(is, 1) != 0;
      s.in = static_cast<Index>(get_u(is, 4));
      s.out = static_cast<Index>(get_u(is, 4));
      s.p = get_f64(is);
      n.net.specs.push_back(s);
    }
    validate_specs(n.net.specs);
    for (const auto& s : n.net.specs) {
      LayerParams lp;
      if (s.has_weights()) {
        lp.weight = Tensor::zeros(s.in, s.out);
        if (s.bias) lp.bias = Tensor::zeros(1, s.out);
      }
      n.net.params.layers.push_back(std::move(lp));
    }
  }
  for (auto& n : nets) {
    n.net.params.for_each_tensor([&](Tensor& t) {
      get_matrix(is, t.value);
      if (with_optimizer) {
        get_matrix(is, t.m);
        get_matrix(is, t.v);
      }
      if (!t.value.allFinite()) throw CheckpointError("non-finite weight in checkpoint");
    });
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
  return nets;
}

inline nlohmann::json checkpoint_metadata(const std::vector<NamedNetwork>& nets,
                                          const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "gazenav-checkpoint";
  j["version"] = kCheckpointVersion;
  j["nets"] = nlohmann::json::array();
  for (const auto& n : nets) {
    nlohmann::json net{{"name", n.name}, {"step", n.net.params.step}};
    net["layers"] = nlohmann::json::array();
    for (const auto& s : n.net.specs)
      net["layers"].push_back(
          {{"kind", std::string(to_string(s.kind))}, {"in", s.in}, {"out", s.out}, {"bias", s.bias}, {"p", s.p}});
    j["nets"].push_back(std::move(net));
  }
  j["meta"] = extra;
  return j;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes `<path>` and `<path>.json`; returns the checkpoint hash (hex FNV-1a of the bytes).
inline std::string save_checkpoint(const std::string& path, const std::vector<NamedNetwork>& nets,
                                   bool with_optimizer,
                                   const nlohmann::json& extra = nlohmann::json::object()) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, nets, with_optimizer);
  const std::string bytes = buf.str();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  auto meta = checkpoint_metadata(nets, extra);
  const std::string hash = hex64(fnv1a64(bytes));
  meta["hash"] = hash;
  std::ofstream side(path + ".json");
  if (!side) throw Error("cannot write " + path + ".json");
  side << meta.dump(2) << '\n';
  return hash;
}

struct LoadedCheckpoint {
  std::vector<NamedNetwork> nets;
  nlohmann::json metadata;  // sidecar contents, empty object when absent
  std::string hash;

  const Network& get(const std::string& name) const {
    for (const auto& n : nets)
      if (n.name == name) return n.net;
    throw IncompatibleCheckpoint("checkpoint has no network named '" + name + "'");
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  const std::string bytes = read_file_bytes(path);
  std::istringstream is(bytes, std::ios::binary);
  out.nets = read_checkpoint(is);
  out.hash = hex64(fnv1a64(bytes));
  std::ifstream side(path + ".json");
  out.metadata = side ? nlohmann::json::parse(side) : nlohmann::json::object();
  return out;
}

}  // namespace gazenav::nn
