#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace multidiff {

// Single-file layout:
//   8 bytes   magic "MDIFFCKP"
//   u32 LE    format version
//   u64 LE    manifest length in bytes
//   manifest  UTF-8 text, one record per line:
//               meta <key> <value...>
//               tensor <name> f32 <d0,d1,...> <byte offset> <byte length>
//   u64 LE    payload length in bytes
//   payload   raw little-endian float32 data, offsets relative to payload start
inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'I', 'F', 'F', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, inconsistent };

  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(CheckpointError::Kind kind);

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  [[nodiscard]] const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint_file(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData read_checkpoint_file(const std::filesystem::path& path);

}  // namespace multidiff
