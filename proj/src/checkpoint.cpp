#include "stiformer/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace stif {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'I', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint32_t u32() {
    const std::uint8_t* p = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    const std::uint8_t* p = need(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::uint8_t* need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& contents) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(contents.metadata.size()));
  w.raw(contents.metadata.data(), contents.metadata.size());
  w.u32(static_cast<std::uint32_t>(contents.tensors.size()));
  for (const NamedTensor& t : contents.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' payload does not match its shape");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(kDtypeFloat64);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t extent : t.shape) w.u64(extent);
    for (double v : t.values) w.f64(v);
  }
  return w.take();
}

CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointContents out;
  out.metadata = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeFloat64) {
      throw CheckpointError("tensor '" + t.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.u64()));
    t.values.resize(shape_numel(t.shape));
    for (double& v : t.values) v = r.f64();
    out.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams& params) {
  CheckpointContents contents;
  contents.metadata = config.to_text();
  for (const auto& [name, tensor] : params.named()) {
    contents.tensors.push_back(
        {name, tensor.shape(), std::vector<double>(tensor.data().begin(), tensor.data().end())});
  }
  const std::vector<std::uint8_t> bytes = encode_checkpoint(contents);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  CheckpointContents contents = decode_checkpoint(bytes);

  LoadedModel loaded;
  loaded.config = ModelConfig::from_text(contents.metadata);
  loaded.params = ModelParams::init(loaded.config, 0);

  std::map<std::string, NamedTensor*> by_name;
  for (NamedTensor& t : contents.tensors) by_name[t.name] = &t;
  std::size_t used = 0;
  for (auto& [name, tensor] : loaded.params.named()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != tensor.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                            ", expected " + shape_str(tensor.shape()));
    }
    auto dst = tensor.mutable_data();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    ++used;
  }
  if (used != contents.tensors.size()) throw CheckpointError("checkpoint has unexpected tensors");
  return loaded;
}

}  // namespace stif
