#include "multidiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace multidiff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const char* to_string(CheckpointError::Kind kind) {
  switch (kind) {
    case CheckpointError::Kind::io: return "io";
    case CheckpointError::Kind::bad_magic: return "bad_magic";
    case CheckpointError::Kind::version_mismatch: return "version_mismatch";
    case CheckpointError::Kind::truncated: return "truncated";
    case CheckpointError::Kind::inconsistent: return "inconsistent";
  }
  return "unknown";
}

const NamedTensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

template <typename U>
void put(std::string& out, U value) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  out.append(bytes, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t pos) {
  U value;
  std::memcpy(&value, in.data() + pos, sizeof(U));
  return value;
}

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

bool valid_token(const std::string& s) {
  return !s.empty() && s.find_first_of(" \t\r\n") == std::string::npos;
}

}  // namespace

void write_checkpoint_file(const CheckpointData& data, const std::filesystem::path& path) {
  std::ostringstream manifest;
  for (const auto& [key, value] : data.meta) {
    if (!valid_token(key) || value.find('\n') != std::string::npos)
      throw CheckpointError(CheckpointError::Kind::inconsistent, "invalid meta entry: " + key);
    manifest << "meta " << key << ' ' << value << '\n';
  }
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (!valid_token(t.name))
      throw CheckpointError(CheckpointError::Kind::inconsistent, "invalid tensor name: " + t.name);
    if (element_count(t.shape) != t.data.size())
      throw CheckpointError(CheckpointError::Kind::inconsistent,
                            "tensor " + t.name + " shape does not match its data");
    manifest << "tensor " << t.name << " f32 ";
    for (std::size_t i = 0; i < t.shape.size(); ++i) manifest << (i ? "," : "") << t.shape[i];
    if (t.shape.empty()) manifest << "-";
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    manifest << ' ' << offset << ' ' << bytes << '\n';
    offset += bytes;
  }
  const std::string manifest_text = manifest.str();

  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest_text.size());
  out += manifest_text;
  put<std::uint64_t>(out, offset);
  for (const auto& t : data.tensors)
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError(CheckpointError::Kind::io, "cannot open for writing: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path.string());
}

CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError(Kind::io, "cannot open checkpoint: " + path.string());
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (in.size() < sizeof(kCheckpointMagic))
    throw CheckpointError(Kind::truncated, "file too short for a checkpoint header");
  if (std::memcmp(in.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError(Kind::bad_magic, "not a checkpoint file (bad magic)");
  if (in.size() < kHeader) throw CheckpointError(Kind::truncated, "checkpoint header truncated");
  const auto version = get<std::uint32_t>(in, sizeof(kCheckpointMagic));
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version_mismatch, "checkpoint format version " + std::to_string(version) +
                                                      ", expected " + std::to_string(kCheckpointVersion));
  const auto manifest_len = get<std::uint64_t>(in, sizeof(kCheckpointMagic) + sizeof(std::uint32_t));
  if (manifest_len > in.size() - kHeader || in.size() - kHeader - manifest_len < sizeof(std::uint64_t))
    throw CheckpointError(Kind::truncated, "checkpoint manifest truncated");
  const std::string manifest = in.substr(kHeader, manifest_len);
  const std::size_t payload_pos = kHeader + manifest_len + sizeof(std::uint64_t);
  const auto payload_len = get<std::uint64_t>(in, kHeader + manifest_len);
  if (in.size() - payload_pos < payload_len)
    throw CheckpointError(Kind::truncated, "payload holds " + std::to_string(in.size() - payload_pos) +
                                               " bytes, manifest declares " + std::to_string(payload_len));
  if (in.size() - payload_pos != payload_len)
    throw CheckpointError(Kind::inconsistent, "payload holds " + std::to_string(in.size() - payload_pos) +
                                                  " bytes, manifest declares " + std::to_string(payload_len));

  CheckpointData data;
  std::istringstream lines(manifest);
  std::string line;
  std::uint64_t covered = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream rec(line);
    std::string kind;
    rec >> kind;
    if (kind == "meta") {
      std::string key;
      rec >> key;
      std::string value;
      std::getline(rec, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      data.meta[key] = value;
    } else if (kind == "tensor") {
      NamedTensor t;
      std::string dtype, dims;
      std::uint64_t offset = 0, bytes = 0;
      if (!(rec >> t.name >> dtype >> dims >> offset >> bytes))
        throw CheckpointError(Kind::inconsistent, "malformed manifest line: " + line);
      if (dtype != "f32") throw CheckpointError(Kind::inconsistent, "unsupported element type " + dtype);
      if (dims != "-") {
        std::istringstream ds(dims);
        std::string tok;
        while (std::getline(ds, tok, ',')) {
          try {
            t.shape.push_back(std::stoi(tok));
          } catch (const std::exception&) {
            throw CheckpointError(Kind::inconsistent, "bad shape for tensor " + t.name);
          }
        }
      }
      const std::size_t count = element_count(t.shape);
      if (bytes != count * sizeof(float) || offset > payload_len || bytes > payload_len - offset)
        throw CheckpointError(Kind::inconsistent, "tensor " + t.name + " does not fit the payload");
      t.data.resize(count);
      std::memcpy(t.data.data(), in.data() + payload_pos + offset, bytes);
      covered += bytes;
      data.tensors.push_back(std::move(t));
    } else {
      throw CheckpointError(Kind::inconsistent, "unknown manifest record: " + kind);
    }
  }
  if (covered != payload_len)
    throw CheckpointError(Kind::inconsistent, "manifest tensors do not cover the payload");
  return data;
}

}  // namespace multidiff
