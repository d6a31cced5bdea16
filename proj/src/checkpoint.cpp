#include "bclab/checkpoint.hpp"

#include <cstring>
#include <map>

#include <zlib.h>

#include "bclab/report.hpp"

namespace bclab {

namespace {

constexpr char kMagic[8] = {'B', 'C', 'L', 'A', 'B', 'C', 'K', 'P'};

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::conv, LayerKind::maxpool, LayerKind::relu, LayerKind::batchnorm,
                 LayerKind::dropout, LayerKind::fc, LayerKind::flatten}) {
    if (to_string(k) == s) return k;
  }
  throw CheckpointError("unknown layer kind '" + s + "'");
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t limit) : b_(b), limit_(limit) {}
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(std::size_t n) {
    need(n);
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(c);
}

}  // namespace

nlohmann::json config_to_json(const NetworkConfig& config) {
  nlohmann::json j;
  j["preset"] = config.preset;
  j["input_shape"] = config.input_shape;
  j["num_classes"] = config.num_classes;
  for (const auto& l : config.layers) {
    j["layers"].push_back({{"kind", to_string(l.kind)},
                           {"name", l.name},
                           {"ksize", l.ksize},
                           {"stride", l.stride},
                           {"pad", l.pad},
                           {"filters", l.filters},
                           {"units", l.units},
                           {"drop", l.drop}});
  }
  for (const auto& t : config.taps) j["taps"].push_back({{"name", t.name}, {"boundary", t.boundary}});
  return j;
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.preset = j.at("preset").get<std::string>();
    c.input_shape = j.at("input_shape").get<Shape>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.kind = parse_layer_kind(l.at("kind").get<std::string>());
      s.name = l.at("name").get<std::string>();
      s.ksize = l.at("ksize").get<std::size_t>();
      s.stride = l.at("stride").get<std::size_t>();
      s.pad = l.at("pad").get<std::size_t>();
      s.filters = l.at("filters").get<std::size_t>();
      s.units = l.at("units").get<std::size_t>();
      s.drop = l.at("drop").get<double>();
      c.layers.push_back(std::move(s));
    }
    for (const auto& t : j.at("taps")) {
      c.taps.push_back({t.at("name").get<std::string>(), t.at("boundary").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string encode_checkpoint(const Parameters<float>& params, const nlohmann::json& metadata) {
  const auto tensors = params.all_tensors();
  nlohmann::json header;
  header["format"] = "bclab-checkpoint";
  header["config"] = config_to_json(params.config);
  header["metadata"] = metadata;
  header["parameter_version"] = params.version;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"dtype", "float32"}, {"shape", t->shape()}});
  }

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.str(header.dump());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.le<std::uint8_t>(1);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.le<std::uint64_t>(d);
    for (float v : t->data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      w.le<std::uint32_t>(bits);
    }
  }
  const std::uint32_t sum = crc(w.buffer().data(), w.buffer().size());
  w.le<std::uint32_t>(sum);
  return std::move(w.buffer());
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8) throw CheckpointError("checkpoint too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 4;
  {
    Reader tail(bytes, bytes.size());
    tail.take(body);
    const auto stored = tail.le<std::uint32_t>();
    if (stored != crc(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch");
  }
  Reader r(bytes, body);
  r.take(sizeof kMagic);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  LoadedCheckpoint out;
  Rng unused(0);
  out.params = init_weights<float>(config_from_json(header.at("config")), unused);
  out.params.version = header.value("parameter_version", std::uint64_t{0});
  out.params.mode = Mode::eval;
  out.metadata = header.value("metadata", nlohmann::json::object());

  std::map<std::string, Tensor32*> slots;
  for (auto& [name, t] : out.params.all_tensors()) slots[name] = t;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint64_t>();
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) +
                            ", network expects " + shape_str(it->second->shape()));
    }
    Tensor32& dst = *it->second;
    if (dtype == 1) {
      for (auto& v : dst.data()) {
        const auto bits = r.le<std::uint32_t>();
        std::memcpy(&v, &bits, sizeof v);
      }
    } else if (dtype == 2) {
      for (auto& v : dst.data()) {
        const auto bits = r.le<std::uint64_t>();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        v = static_cast<float>(d);
      }
    } else {
      throw CheckpointError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    slots.erase(it);
  }
  if (!slots.empty()) throw CheckpointError("checkpoint lacks tensor '" + slots.begin()->first + "'");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const nlohmann::json& metadata) {
  write_file_atomic(path, encode_checkpoint(params, metadata));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace bclab
