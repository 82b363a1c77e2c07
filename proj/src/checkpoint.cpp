#include "msdepth/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include "msdepth/digest.hpp"
#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kTrailer = 64;

enum class Code : std::uint8_t { F32 = 1, F64 = 2, I64 = 3 };

Code code_of(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return Code::F32;
    case torch::kFloat64: return Code::F64;
    case torch::kInt64: return Code::I64;
    default: throw InterfaceError("unsupported tensor dtype in checkpoint");
  }
}

torch::Dtype dtype_of(std::uint8_t c) {
  switch (static_cast<Code>(c)) {
    case Code::F32: return torch::kFloat32;
    case Code::F64: return torch::kFloat64;
    case Code::I64: return torch::kInt64;
  }
  throw CorruptionError("unknown dtype code in checkpoint");
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  Cursor(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CorruptionError("checkpoint is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == end_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string serialize_tensors(const NamedTensors& tensors) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    const torch::Tensor t = value.detach().to(torch::kCPU).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(code_of(t.scalar_type())));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (std::int64_t d : t.sizes()) put<std::int64_t>(out, d);
    const auto nbytes = static_cast<std::uint64_t>(t.nbytes());
    put<std::uint64_t>(out, nbytes);
    out.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  return out;
}

nlohmann::json header_of(const Checkpoint& c) {
  nlohmann::json h = {{"format", "msdepth-checkpoint"},
                      {"stage", to_string(c.stage)},
                      {"seed", c.seed},
                      {"epoch", c.epoch},
                      {"config", c.config},
                      {"config_digest", c.config_digest},
                      {"payload_digest", c.payload_digest}};
  if (c.stage == Stage::Fuse) h["align_ckpt_hash"] = c.align_ckpt_hash;
  return h;
}

}  // namespace

NamedTensors module_state(const torch::nn::Module& module) {
  NamedTensors out;
  for (const auto& item : module.named_parameters(true)) {
    out.emplace_back(item.key(), item.value().detach().to(torch::kCPU).clone().contiguous());
  }
  for (const auto& item : module.named_buffers(true)) {
    out.emplace_back(item.key(), item.value().detach().to(torch::kCPU).clone().contiguous());
  }
  return out;
}

void load_module_state(torch::nn::Module& module, const NamedTensors& tensors) {
  std::map<std::string, torch::Tensor> targets;
  for (const auto& item : module.named_parameters(true)) targets.emplace(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) targets.emplace(item.key(), item.value());
  if (targets.size() != tensors.size()) {
    throw InterfaceError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, module expects " +
                         std::to_string(targets.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& [name, value] : tensors) {
    const auto it = targets.find(name);
    if (it == targets.end()) throw InterfaceError("checkpoint tensor '" + name + "' has no place in the module");
    if (it->second.sizes() != value.sizes() || it->second.scalar_type() != value.scalar_type()) {
      throw InterfaceError("checkpoint tensor '" + name + "' has the wrong shape or dtype");
    }
    it->second.copy_(value);
  }
}

std::string payload_digest(const NamedTensors& tensors) { return sha256_hex(serialize_tensors(tensors)); }

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt) {
  const std::string payload = serialize_tensors(ckpt.tensors);
  ckpt.payload_digest = sha256_hex(payload);
  const std::string header = header_of(ckpt).dump();

  std::string bytes(kMagic, sizeof(kMagic));
  put<std::uint32_t>(bytes, kVersion);
  put<std::uint64_t>(bytes, header.size());
  bytes.append(header);
  bytes.append(payload);
  bytes.append(sha256_hex(bytes));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
  ckpt.file_digest = sha256_hex(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + kTrailer || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptionError(path.string() + " is not a checkpoint or is truncated");
  }
  const std::size_t body = bytes.size() - kTrailer;
  if (sha256_hex(std::string_view(bytes.data(), body)) != std::string_view(bytes.data() + body, kTrailer)) {
    throw CorruptionError(path.string() + " failed its integrity digest (truncated or modified)");
  }

  Cursor cur(bytes, body);
  cur.take(sizeof(kMagic));
  if (cur.get<std::uint32_t>() != kVersion) throw CorruptionError("unsupported checkpoint version");
  const auto header_len = cur.get<std::uint64_t>();
  if (header_len > body) throw CorruptionError("checkpoint header length is out of range");
  const char* hp = cur.take(header_len);

  Checkpoint c;
  try {
    const nlohmann::json h = nlohmann::json::parse(hp, hp + header_len);
    if (h.at("format") != "msdepth-checkpoint") throw CorruptionError("unknown checkpoint format");
    c.stage = parse_stage(h.at("stage").get<std::string>());
    c.seed = h.at("seed").get<std::uint64_t>();
    c.epoch = h.at("epoch").get<int>();
    c.config = h.at("config");
    c.config_digest = h.at("config_digest").get<std::string>();
    c.payload_digest = h.at("payload_digest").get<std::string>();
    if (c.stage == Stage::Fuse) c.align_ckpt_hash = h.at("align_ckpt_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("malformed checkpoint header: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw CorruptionError("malformed checkpoint header: " + std::string(e.what()));
  }

  const auto count = cur.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = cur.get<std::uint32_t>();
    std::string name(cur.take(name_len), name_len);
    const torch::Dtype dtype = dtype_of(cur.get<std::uint8_t>());
    const auto rank = cur.get<std::uint32_t>();
    if (rank > 8) throw CorruptionError("tensor rank out of range");
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = cur.get<std::int64_t>();
    const auto nbytes = cur.get<std::uint64_t>();
    torch::Tensor t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.nbytes()) != nbytes) throw CorruptionError("tensor byte count mismatch");
    std::memcpy(t.data_ptr(), cur.take(nbytes), nbytes);
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!cur.at_end()) throw CorruptionError("trailing bytes after the tensor records");
  if (payload_digest(c.tensors) != c.payload_digest) throw CorruptionError("payload digest mismatch");
  c.file_digest = sha256_hex(bytes);
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected) {
  Checkpoint c = load_checkpoint(path);
  if (c.stage != expected) {
    throw InterfaceError(path.string() + " is a " + std::string(to_string(c.stage)) + " checkpoint, expected " +
                         std::string(to_string(expected)));
  }
  return c;
}

void verify_provenance(const Checkpoint& fuse, const Checkpoint& align) {
  if (fuse.stage != Stage::Fuse || align.stage != Stage::Align) {
    throw InterfaceError("provenance check needs a fuse and an align checkpoint");
  }
  if (fuse.align_ckpt_hash != align.file_digest) {
    throw CorruptionError("fuse checkpoint was trained on align checkpoint " + fuse.align_ckpt_hash + ", got " +
                          align.file_digest);
  }
}

}  // namespace msdepth
