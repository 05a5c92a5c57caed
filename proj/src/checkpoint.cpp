#include "sc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sc/error.hpp"

namespace sc {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'C', 'K'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("checkpoint: write failed on '" + path_ + "'");
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("checkpoint: cannot open '" + path + "'");
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw DataError("checkpoint: '" + path_ + "' truncated at byte offset " +
                      std::to_string(offset_));
    offset_ += n;
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
  size_t offset() const { return offset_; }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::string path_;
  std::ifstream in_;
  size_t offset_ = 0;
};

void write_record(Writer& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<uint32_t>(t.dim(i)));
  w.bytes(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
}

std::pair<std::string, Tensor> read_record(Reader& r) {
  const uint32_t name_len = r.u32();
  if (name_len > 4096)
    throw DataError("checkpoint: implausible name length " + std::to_string(name_len) +
                    " at byte offset " + std::to_string(r.offset() - 4));
  std::string name(name_len, '\0');
  r.bytes(name.data(), name_len);
  const uint32_t rank = r.u32();
  if (rank > 8)
    throw DataError("checkpoint: implausible rank " + std::to_string(rank) + " for '" + name + "'");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
  Tensor t = Tensor::zeros(shape);
  r.bytes(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  return {std::move(name), std::move(t)};
}

}  // namespace

Tensor Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  for (const auto& [n, t] : state)
    if (n == name) return t;
  throw DataError("checkpoint: no record named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return true;
  for (const auto& [n, t] : state)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(ckpt.version);
  w.u64(ckpt.model_hash);
  w.u32(static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) write_record(w, name, t);
  w.u32(static_cast<uint32_t>(ckpt.state.size()));
  for (const auto& [name, t] : ckpt.state) write_record(w, name, t);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: '" + path + "' has bad magic at byte offset 0 (want SCCK)");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kVersion)
    throw DataError("checkpoint: '" + path + "' has unsupported version " +
                    std::to_string(ckpt.version));
  ckpt.model_hash = r.u64();
  const uint32_t n_params = r.u32();
  for (uint32_t i = 0; i < n_params; ++i) ckpt.params.push_back(read_record(r));
  const uint32_t n_state = r.u32();
  for (uint32_t i = 0; i < n_state; ++i) ckpt.state.push_back(read_record(r));
  if (!r.at_eof())
    throw DataError("checkpoint: '" + path + "' has trailing bytes after offset " +
                    std::to_string(r.offset()));
  return ckpt;
}

Checkpoint checkpoint_from_model(const Model& model,
                                 const std::vector<std::pair<std::string, Tensor>>& extra_state) {
  Checkpoint ckpt;
  ckpt.model_hash = model.spec_hash();
  ckpt.params = model.parameters();
  ckpt.state = model.state_tensors();
  for (const auto& kv : extra_state) ckpt.state.push_back(kv);
  return ckpt;
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt, bool trunk_only) {
  if (ckpt.model_hash != model.spec_hash())
    throw DataError("checkpoint: model hash mismatch (checkpoint " +
                    std::to_string(ckpt.model_hash) + ", model " +
                    std::to_string(model.spec_hash()) + ")");
  auto copy_into = [](const Tensor& src, Tensor dst, const std::string& name) {
    if (src.shape() != dst.shape())
      throw DataError("checkpoint: shape mismatch for '" + name + "': " + shape_str(src.shape()) +
                      " vs model " + shape_str(dst.shape()));
    std::memcpy(dst.data(), src.data(), sizeof(float) * static_cast<size_t>(src.numel()));
  };
  const auto targets = trunk_only ? model.trunk_parameters() : model.parameters();
  for (const auto& [name, t] : targets) copy_into(ckpt.find(name), t, name);

  const int tap = model.spec().tap_index();
  for (const auto& [name, t] : model.state_tensors()) {
    const int layer = std::stoi(name.substr(1, 2));
    if (trunk_only && layer > tap) continue;
    if (ckpt.has(name)) copy_into(ckpt.find(name), t, name);
  }
}

}  // namespace sc
