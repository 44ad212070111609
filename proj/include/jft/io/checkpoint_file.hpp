#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jft/encoders/checkpoint.hpp"
#include "jft/fusion/fusion_model.hpp"

namespace jft::io {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// In-memory image of a checkpoint file. The config block is kept verbatim so
// that parse followed by serialize reproduces the input bytes.
struct CheckpointFile {
  std::uint16_t version = kCheckpointVersion;
  std::string config;
  std::vector<NamedTensor> tensors;
};

std::string serialize(const CheckpointFile& file);
CheckpointFile parse(std::string_view bytes);

std::string read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::string_view bytes);

CheckpointFile to_file(const encoders::EncoderCheckpoint& ckpt);
CheckpointFile to_file(const fusion::FusionModel& model);
encoders::EncoderCheckpoint encoder_from_file(const CheckpointFile& file);
fusion::FusionModel model_from_file(const CheckpointFile& file);

void save_encoder(const std::filesystem::path& path, const encoders::EncoderCheckpoint& ckpt);
encoders::EncoderCheckpoint load_encoder(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const fusion::FusionModel& model);
fusion::FusionModel load_model(const std::filesystem::path& path);

}  // namespace jft::io
