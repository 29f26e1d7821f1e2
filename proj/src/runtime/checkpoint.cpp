#include "wmmoe/runtime/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "wmmoe/nd/rng.hpp"

namespace wmmoe::runtime {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace {

constexpr char kMagic[8] = {'W', 'M', 'M', 'O', 'E', 'C', 'K', 'P'};

std::uint64_t fnv(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw CheckpointError(std::string("checkpoint truncated in ") + what);
  return v;
}

template <typename Dst, typename Src>
std::vector<Dst> decode(const std::uint8_t* bytes, std::size_t n) {
  std::vector<Dst> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Src s;
    std::memcpy(&s, bytes + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<Dst>(s);
  }
  return out;
}

}  // namespace

std::uint64_t Checkpoint::checksum() const { return fnv(payload.data(), payload.size()); }

template <typename T>
Checkpoint capture(const nd::ParamStore<T>& store, const TrainConfig& config, RngState rng) {
  Checkpoint c;
  c.config = config;
  c.rng = rng;
  for (const auto* p : store.all()) {
    TensorEntry e;
    e.name = p->name;
    e.shape = p->value.shape();
    e.dtype = dtype_name<T>();
    e.offset = c.payload.size();
    e.nbytes = static_cast<std::uint64_t>(p->value.size()) * sizeof(T);
    e.frozen = p->frozen;
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(p->value.ptr());
    c.payload.insert(c.payload.end(), bytes, bytes + e.nbytes);
    c.manifest.push_back(std::move(e));
  }
  return c;
}

template <typename T>
void restore(const Checkpoint& ckpt, nd::ParamStore<T>& store) {
  std::vector<std::pair<nd::Parameter<T>*, const TensorEntry*>> plan;
  for (const auto& e : ckpt.manifest) {
    auto* p = store.find(e.name);
    if (p == nullptr) throw CheckpointError("checkpoint: no parameter named " + e.name + " in the model");
    if (p->value.shape() != e.shape) {
      throw CheckpointError("checkpoint: " + e.name + " has shape " + nd::to_string(e.shape) + ", model expects " +
                            nd::to_string(p->value.shape()));
    }
    const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
    if (width == 0) throw CheckpointError("checkpoint: " + e.name + " has unknown dtype " + e.dtype);
    if (e.nbytes != static_cast<std::uint64_t>(nd::numel(e.shape)) * width || e.offset > ckpt.payload.size() ||
        e.nbytes > ckpt.payload.size() - e.offset) {
      throw CheckpointError("checkpoint: " + e.name + " lies outside the payload");
    }
    plan.emplace_back(p, &e);
  }
  if (plan.size() != store.all().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(plan.size()) + " tensors, model has " +
                          std::to_string(store.all().size()));
  }
  for (auto [p, e] : plan) {
    const auto* bytes = ckpt.payload.data() + e->offset;
    const auto n = static_cast<std::size_t>(nd::numel(e->shape));
    auto data = e->dtype == "f32" ? decode<T, float>(bytes, n) : decode<T, double>(bytes, n);
    p->value = nd::Array<T>(e->shape, std::move(data));
    p->frozen = e->frozen;
    p->grad.clear();
  }
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  nlohmann::json h;
  h["config"] = to_json(ckpt.config);
  h["rng"] = {{"seed", ckpt.rng.seed}, {"epoch", ckpt.rng.epoch}};
  auto& m = h["manifest"] = nlohmann::json::array();
  for (const auto& e : ckpt.manifest) {
    m.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", e.dtype}, {"offset", e.offset},
                 {"nbytes", e.nbytes}, {"frozen", e.frozen}});
  }
  h["payload_bytes"] = ckpt.payload.size();
  h["payload_checksum"] = ckpt.checksum();
  const std::string header = h.dump();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  put<std::uint64_t>(out, fnv(header.data(), header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(ckpt.payload.data()), static_cast<std::streamsize>(ckpt.payload.size()));
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto hlen = get<std::uint64_t>(in, "header length");
  const auto hsum = get<std::uint64_t>(in, "header checksum");
  if (hlen > (1ULL << 30)) throw CheckpointError("checkpoint: implausible header length");
  std::string header(hlen, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(hlen))) throw CheckpointError("checkpoint truncated in header");
  if (fnv(header.data(), header.size()) != hsum) throw CheckpointError("checkpoint: header checksum mismatch");

  Checkpoint c;
  std::uint64_t bytes = 0, sum = 0;
  try {
    const auto h = nlohmann::json::parse(header);
    c.config = config_from_json(h.at("config"));
    c.rng.seed = h.at("rng").at("seed").get<std::uint64_t>();
    c.rng.epoch = h.at("rng").at("epoch").get<int>();
    for (const auto& e : h.at("manifest")) {
      c.manifest.push_back({e.at("name").get<std::string>(), e.at("shape").get<nd::Shape>(),
                            e.at("dtype").get<std::string>(), e.at("offset").get<std::uint64_t>(),
                            e.at("nbytes").get<std::uint64_t>(), e.at("frozen").get<bool>()});
    }
    bytes = h.at("payload_bytes").get<std::uint64_t>();
    sum = h.at("payload_checksum").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  c.payload.resize(bytes);
  if (!in.read(reinterpret_cast<char*>(c.payload.data()), static_cast<std::streamsize>(bytes)) ||
      static_cast<std::uint64_t>(in.gcount()) != bytes) {
    throw CheckpointError("checkpoint truncated in payload (expected " + std::to_string(bytes) + " bytes)");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes after payload");
  if (c.checksum() != sum) throw CheckpointError("checkpoint: payload checksum mismatch");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& e : c.manifest) {
    if (e.offset > bytes || e.nbytes > bytes - e.offset) throw CheckpointError("checkpoint: " + e.name + " lies outside the payload");
    spans.emplace_back(e.offset, e.nbytes);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i - 1].first + spans[i - 1].second > spans[i].first) throw CheckpointError("checkpoint: overlapping tensors");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return read_checkpoint(in);
}

template <typename T>
std::uint64_t store_checksum(const nd::ParamStore<T>& store) {
  std::map<std::string, const nd::Parameter<T>*> sorted;
  for (const auto* p : store.all()) sorted[p->name] = p;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : sorted) {
    h = fnv(name.data(), name.size(), h);
    for (auto d : p->value.shape()) h = fnv(&d, sizeof(d), h);
    h = fnv(p->value.ptr(), static_cast<std::size_t>(p->value.size()) * sizeof(T), h);
  }
  return h;
}

template Checkpoint capture(const nd::ParamStore<float>&, const TrainConfig&, RngState);
template Checkpoint capture(const nd::ParamStore<double>&, const TrainConfig&, RngState);
template void restore(const Checkpoint&, nd::ParamStore<float>&);
template void restore(const Checkpoint&, nd::ParamStore<double>&);
template std::uint64_t store_checksum(const nd::ParamStore<float>&);
template std::uint64_t store_checksum(const nd::ParamStore<double>&);

}  // namespace wmmoe::runtime
