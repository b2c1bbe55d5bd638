#include "fedrefine/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "fedrefine/errors.hpp"

namespace fedrefine {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'R', 'F'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kKindModel = 0;
constexpr uint8_t kKindFuser = 1;

void write_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u8(std::ofstream& out, uint8_t v) { write_bytes(out, &v, 1); }
void write_u32(std::ofstream& out, uint32_t v) { write_bytes(out, &v, 4); }
void write_u64(std::ofstream& out, uint64_t v) { write_bytes(out, &v, 8); }

void write_string(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  write_bytes(out, s.data(), s.size());
}

void write_config(std::ofstream& out, const ModelConfig& cfg) {
  write_u64(out, cfg.n_layers);
  write_u64(out, cfg.n_heads);
  write_u64(out, cfg.n_kv_heads);
  write_u64(out, cfg.head_dim);
  write_u64(out, cfg.d_model);
  write_u64(out, cfg.vocab_size);
  write_u64(out, cfg.max_seq);
  write_string(out, cfg.model_id);
}

void write_params(std::ofstream& out, const ParamRefs& refs) {
  write_u64(out, refs.size());
  for (const ParamBlock& b : refs) {
    write_string(out, b.name);
    write_u64(out, b.count);
    write_bytes(out, b.data, b.count * sizeof(double));
  }
}

struct Reader {
  std::ifstream in;
  std::string path;

  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw MissingArtifactError("checkpoint file not found: " + p);
  }

  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw ConfigError("truncated checkpoint: " + path);
  }

  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }

  std::string str() {
    uint64_t n = u64();
    if (n > (1u << 20)) throw ConfigError("implausible string length in checkpoint: " + path);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  ModelConfig config() {
    ModelConfig cfg;
    cfg.n_layers = u64();
    cfg.n_heads = u64();
    cfg.n_kv_heads = u64();
    cfg.head_dim = u64();
    cfg.d_model = u64();
    cfg.vocab_size = u64();
    cfg.max_seq = u64();
    cfg.model_id = str();
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("checkpoint " + path + " holds an invalid config: " + e.what());
    }
    return cfg;
  }

  // Reads stored blocks into a prebuilt skeleton, insisting that every name
  // and size matches the skeleton's declared layout.
  void params_into(ParamRefs refs) {
    uint64_t n = u64();
    if (n != refs.size())
      throw ConfigError("checkpoint " + path + " holds " + std::to_string(n) +
                        " weight blocks, expected " + std::to_string(refs.size()));
    for (ParamBlock& b : refs) {
      std::string name = str();
      uint64_t count = u64();
      if (name != b.name || count != b.count)
        throw ConfigError("checkpoint " + path + " block '" + name + "' (" +
                          std::to_string(count) + " values) does not match expected '" +
                          b.name + "' (" + std::to_string(b.count) + " values)");
      bytes(b.data, b.count * sizeof(double));
    }
  }

  void header(uint8_t expected_kind) {
    char magic[4];
    bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
      throw ConfigError("bad magic bytes, not a checkpoint: " + path);
    uint32_t version = u32();
    if (version != kVersion)
      throw ConfigError("unsupported checkpoint version " + std::to_string(version) + ": " +
                        path);
    uint8_t kind = u8();
    if (kind != expected_kind)
      throw ConfigError("checkpoint " + path + " holds kind " + std::to_string(kind) +
                        ", expected " + std::to_string(expected_kind));
  }

  void done() {
    in.peek();
    if (!in.eof()) throw ConfigError("trailing bytes after checkpoint payload: " + path);
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

}  // namespace

void save_model(const TransformerModel& m, const std::string& path) {
  m.validate();
  std::ofstream out = open_out(path);
  write_bytes(out, kMagic, 4);
  write_u32(out, kVersion);
  write_u8(out, kKindModel);
  write_config(out, m.config);
  TransformerModel& mut = const_cast<TransformerModel&>(m);  // params() needs mutability
  write_params(out, mut.params());
  if (!out) throw std::runtime_error("write failed: " + path);
}

TransformerModel load_model(const std::string& path) {
  Reader r(path);
  r.header(kKindModel);
  ModelConfig cfg = r.config();
  TransformerModel m = init_model(cfg, 0);
  r.params_into(m.params());
  r.done();
  return m;
}

void save_fuser(const Fuser& f, const std::string& path) {
  f.validate();
  std::ofstream out = open_out(path);
  write_bytes(out, kMagic, 4);
  write_u32(out, kVersion);
  write_u8(out, kKindFuser);
  write_config(out, f.sender_cfg);
  write_config(out, f.receiver_cfg);
  write_u8(out, f.mode == FuseMode::Mix ? 0 : 1);
  write_u64(out, config_digest(f.sender_cfg));
  write_u64(out, config_digest(f.receiver_cfg));
  write_u64(out, f.alignment.sender_layer.size());
  for (size_t l : f.alignment.sender_layer) write_u64(out, l);
  Fuser& mut = const_cast<Fuser&>(f);
  write_params(out, mut.params());
  if (!out) throw std::runtime_error("write failed: " + path);
}

Fuser load_fuser(const std::string& path) {
  Reader r(path);
  r.header(kKindFuser);
  ModelConfig sender = r.config();
  ModelConfig receiver = r.config();
  uint8_t mode_byte = r.u8();
  if (mode_byte > 1) throw ConfigError("unknown fuse mode in checkpoint: " + path);
  FuseMode mode = mode_byte == 0 ? FuseMode::Mix : FuseMode::Concat;
  uint64_t sender_digest = r.u64();
  uint64_t receiver_digest = r.u64();
  if (sender_digest != config_digest(sender) || receiver_digest != config_digest(receiver))
    throw ConfigError("checkpoint " + path +
                      " config digests do not match the stored configs (corrupt or tampered)");
  Fuser f = make_fuser(sender, receiver, mode, 0);
  uint64_t n_align = r.u64();
  if (n_align != f.alignment.sender_layer.size())
    throw ConfigError("checkpoint " + path + " alignment length mismatch");
  for (size_t i = 0; i < n_align; ++i) {
    uint64_t l = r.u64();
    if (l != f.alignment.sender_layer[i])
      throw ConfigError("checkpoint " + path +
                        " alignment disagrees with the configured geometries");
  }
  r.params_into(f.params());
  r.done();
  f.validate();
  return f;
}

}  // namespace fedrefine
