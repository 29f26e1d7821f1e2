#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmmoe/nd/nn.hpp"
#include "wmmoe/runtime/config.hpp"

namespace wmmoe::runtime {

/// Version mismatch, truncation, checksum failure or a manifest that does not
/// match the target store.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  nd::Shape shape;
  std::string dtype;  // "f32" or "f64"
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
  bool frozen = false;
};

/// Training position recorded with the parameters; the shuffle and dropout
/// streams are functions of (seed, epoch, batch), so these fully restore them.
struct RngState {
  std::uint64_t seed = 0;
  int epoch = 0;
};

/// Parameters as raw little-endian bytes plus their manifest.
struct Checkpoint {
  TrainConfig config;
  RngState rng;
  std::vector<TensorEntry> manifest;
  std::vector<std::uint8_t> payload;

  /// FNV-1a over the payload.
  std::uint64_t checksum() const;
};

template <typename T>
Checkpoint capture(const nd::ParamStore<T>& store, const TrainConfig& config, RngState rng = {});

/// Copies every manifest entry into the same-named parameter, converting
/// between f32 and f64. Validates the whole manifest against the store
/// before writing anything. Frozen entries are restored with the frozen flag
/// set so optimizers skip them.
template <typename T>
void restore(const Checkpoint& ckpt, nd::ParamStore<T>& store);

/// Layout: "WMMOECKP", u32 version, u64 header length, u64 header checksum,
/// JSON header (config, rng, manifest, payload size and checksum), payload.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

/// FNV-1a over parameter names, shapes and values in name order.
template <typename T>
std::uint64_t store_checksum(const nd::ParamStore<T>& store);

}  // namespace wmmoe::runtime
