#include "semiseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "semiseg/errors.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Cnn1: return "cnn1";
    case Stage::Cnn2: return "cnn2";
    case Stage::Cnn3: return "cnn3";
  }
  throw ConfigError("bad stage");
}

Stage stage_from_string(const std::string& s) {
  if (s == "cnn1") return Stage::Cnn1;
  if (s == "cnn2") return Stage::Cnn2;
  if (s == "cnn3") return Stage::Cnn3;
  throw ConfigError("unknown stage: " + s);
}

namespace {

constexpr char kMagic[4] = {'S', 'S', 'L', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

struct Reader {
  const std::vector<unsigned char>& b;
  size_t pos = 0;
  const std::string& origin;

  void need(size_t n) const {
    if (pos + n > b.size()) throw IoError("truncated checkpoint: " + origin);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  std::vector<unsigned char> bytes(size_t n) {
    need(n);
    std::vector<unsigned char> out(b.begin() + static_cast<int64_t>(pos),
                                   b.begin() + static_cast<int64_t>(pos + n));
    pos += n;
    return out;
  }
};

template <class S>
void encode_scalars(const std::vector<S>& vals, std::vector<unsigned char>& out) {
  using U = std::conditional_t<sizeof(S) == 4, uint32_t, uint64_t>;
  out.reserve(out.size() + vals.size() * sizeof(S));
  for (S v : vals) {
    U u;
    std::memcpy(&u, &v, sizeof(S));
    for (size_t i = 0; i < sizeof(S); ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
  }
}

template <class S>
void decode_scalars(const std::vector<unsigned char>& raw, std::vector<S>& out) {
  using U = std::conditional_t<sizeof(S) == 4, uint32_t, uint64_t>;
  for (size_t e = 0; e < out.size(); ++e) {
    U u = 0;
    for (size_t i = 0; i < sizeof(S); ++i)
      u |= static_cast<U>(raw[e * sizeof(S) + i]) << (8 * i);
    std::memcpy(&out[e], &u, sizeof(S));
  }
}

size_t dtype_size(uint8_t code, const std::string& origin) {
  if (code == dtype_traits<float>::code) return 4;
  if (code == dtype_traits<double>::code) return 8;
  throw IoError("unknown tensor dtype code in checkpoint: " + origin);
}

}  // namespace

std::vector<unsigned char> Checkpoint::serialize() const {
  std::vector<unsigned char> b;
  b.insert(b.end(), kMagic, kMagic + 4);
  put_u32(b, kVersion);
  std::string meta = metadata.dump();
  put_u64(b, meta.size());
  b.insert(b.end(), meta.begin(), meta.end());
  put_u64(b, tensors.size());
  for (const auto& [name, blob] : tensors) {
    put_u32(b, static_cast<uint32_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(blob.dtype);
    b.push_back(static_cast<unsigned char>(blob.dims.size()));
    for (int64_t d : blob.dims) put_u64(b, static_cast<uint64_t>(d));
    put_u64(b, blob.raw.size());
    b.insert(b.end(), blob.raw.begin(), blob.raw.end());
  }
  return b;
}

Checkpoint Checkpoint::deserialize(const std::vector<unsigned char>& bytes, const std::string& origin) {
  Reader r{bytes, 0, origin};
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw IoError("bad checkpoint magic: " + origin);
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + origin);
  Checkpoint c;
  uint64_t mlen = r.u64();
  auto mbytes = r.bytes(mlen);
  try {
    c.metadata = json::parse(mbytes.begin(), mbytes.end());
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint metadata in " + origin + ": " + e.what());
  }
  uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = r.u32();
    auto nbytes = r.bytes(nlen);
    std::string name(nbytes.begin(), nbytes.end());
    TensorBlob blob;
    blob.dtype = r.bytes(1)[0];
    uint8_t rank = r.bytes(1)[0];
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      int64_t dim = static_cast<int64_t>(r.u64());
      blob.dims.push_back(dim);
      numel *= dim;
    }
    uint64_t rlen = r.u64();
    if (rlen != static_cast<uint64_t>(numel) * dtype_size(blob.dtype, origin))
      throw IoError("tensor payload size mismatch in checkpoint: " + origin);
    blob.raw = r.bytes(rlen);
    c.tensors.emplace_back(std::move(name), std::move(blob));
  }
  if (r.pos != bytes.size()) throw IoError("trailing bytes in checkpoint: " + origin);
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

uint64_t Checkpoint::content_hash() const {
  auto bytes = serialize();
  return fnv1a64_bytes(bytes.data(), bytes.size());
}

template <class S>
Checkpoint checkpoint_from_graph(const Graph<S>& g, json metadata) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const auto& p : g.params()) {
    TensorBlob blob;
    blob.dtype = dtype_traits<S>::code;
    blob.dims = p.value.shape;
    encode_scalars(p.value.data, blob.raw);
    c.tensors.emplace_back(p.name, std::move(blob));
  }
  return c;
}

template <class S>
void load_checkpoint_into(const Checkpoint& ckpt, Graph<S>& g) {
  std::map<std::string, const TensorBlob*> by_name;
  for (const auto& [name, blob] : ckpt.tensors) by_name[name] = &blob;
  for (auto& p : g.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    const TensorBlob& blob = *it->second;
    if (blob.dtype != dtype_traits<S>::code)
      throw ConfigError("checkpoint precision differs from graph precision for '" + p.name + "'");
    if (blob.dims != p.value.shape)
      throw ShapeError("checkpoint shape mismatch for '" + p.name + "': expected " +
                       shape_str(p.value.shape) + ", got " + shape_str(blob.dims));
    decode_scalars(blob.raw, p.value.data);
  }
}

template <class S>
void transfer_trunk(const Checkpoint& src, Graph<S>& dst, const ModelConfig& dst_cfg, Stage dst_stage) {
  std::string src_stage = src.stage();
  if (src_stage != "cnn1")
    throw StageError("refusing to initialize stage " + std::string(to_string(dst_stage)) + " from a '" +
                     src_stage +
                     "' checkpoint: a network selected on labeled validation data would leak label "
                     "information into this stage; transfer from the restoration checkpoint (cnn1)");
  json src_sig = src.model_config().trunk_signature();
  json dst_sig = dst_cfg.trunk_signature();
  if (src_sig != dst_sig)
    throw ConfigError("trunk structure mismatch: source " + src_sig.dump() + " vs target " + dst_sig.dump());
  std::map<std::string, const TensorBlob*> by_name;
  for (const auto& [name, blob] : src.tensors)
    if (!is_head_param(name)) by_name[name] = &blob;
  size_t copied = 0;
  for (auto& p : dst.params()) {
    if (is_head_param(p.name)) continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("source checkpoint lacks trunk parameter '" + p.name + "'");
    const TensorBlob& blob = *it->second;
    if (blob.dtype != dtype_traits<S>::code)
      throw ConfigError("checkpoint precision differs from graph precision for '" + p.name + "'");
    if (blob.dims != p.value.shape)
      throw ShapeError("trunk shape mismatch for '" + p.name + "'");
    decode_scalars(blob.raw, p.value.data);
    ++copied;
  }
  if (copied != by_name.size())
    throw ConfigError("source checkpoint has trunk parameters unknown to the target model");
}

template Checkpoint checkpoint_from_graph<float>(const Graph<float>&, json);
template Checkpoint checkpoint_from_graph<double>(const Graph<double>&, json);
template void load_checkpoint_into<float>(const Checkpoint&, Graph<float>&);
template void load_checkpoint_into<double>(const Checkpoint&, Graph<double>&);
template void transfer_trunk<float>(const Checkpoint&, Graph<float>&, const ModelConfig&, Stage);
template void transfer_trunk<double>(const Checkpoint&, Graph<double>&, const ModelConfig&, Stage);

}  // namespace semiseg
