#pragma once

// LFC1 checkpoint files: magic "LFC1", u32 LE version, u32 LE header length,
// JSON header, then raw little-endian float32 tensors in table order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "leafcam/error.hpp"
#include "leafcam/model.hpp"

namespace leafcam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  std::vector<std::string> class_names;
  ModelParams params;
};

enum class CheckpointFault {
  bad_magic,
  version_mismatch,
  truncated_header,
  malformed_header,
  truncated_payload,
  count_mismatch,
};

const char* to_string(CheckpointFault fault);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& message, std::string tensor = {})
      : Error(ErrorKind::format, std::string(to_string(fault)) + ": " + message),
        fault_(fault),
        tensor_(std::move(tensor)) {}

  CheckpointFault fault() const noexcept { return fault_; }
  // Set for truncated_payload.
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  CheckpointFault fault_;
  std::string tensor_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws CheckpointError; never returns a partially filled checkpoint.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace leafcam
