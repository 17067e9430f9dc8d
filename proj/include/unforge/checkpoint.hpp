#pragma once

#include "unforge/model.hpp"
#include "unforge/param_store.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace unforge {

// File layout, all integers little-endian:
//   0   "MOXCKPT1"
//   8   u32 format version
//   12  u64 header length in bytes
//   20  header (UTF-8 JSON, fixed key order)
//   ... payload: one f32 per parameter in manifest order
inline constexpr std::string_view kCheckpointMagic = "MOXCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Provenance : std::uint8_t { Ref, Mem, For, Oracle, Baseline };
std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);

struct CheckpointMeta {
  ModelConfig model;
  Provenance provenance = Provenance::Ref;
  // Free-form creation metadata, written in this order.
  std::vector<std::pair<std::string, std::string>> info;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  ParamStore theta;
  CheckpointMeta meta;
};

// Rounds every value through f32, the precision stored on disk.
ParamStore quantize(const ParamStore& theta);

void write_checkpoint(std::ostream& out, const ParamStore& theta, const CheckpointMeta& meta);
// Throws FormatError carrying the offset of the first bad byte.
Checkpoint read_checkpoint(std::istream& in);

// File wrappers; IoError when the path cannot be opened or written.
void save_checkpoint(const ParamStore& theta, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unforge
