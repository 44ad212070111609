#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "jft/encoders/encoders.hpp"

namespace jft::encoders {

enum class Modality { text, image };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view name);

struct PretrainMetadata {
  std::string task;
  std::uint64_t corpus_seed = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;

  friend bool operator==(const PretrainMetadata&, const PretrainMetadata&) = default;
};

// One pretrained unimodal encoder. Parameters are held at single precision
// (values exactly representable as float), which is what checkpoint files store.
struct EncoderCheckpoint {
  Modality modality = Modality::text;
  TextEncoderConfig text_config;
  ImageEncoderConfig image_config;
  std::optional<TextEncoderParams> text;
  std::optional<ImageEncoderParams> image;
  PretrainMetadata metadata;
};

Tensor round_to_float(const Tensor& t);

EncoderCheckpoint make_checkpoint(const TextEncoderConfig& config, TextEncoderParams params, PretrainMetadata metadata);
EncoderCheckpoint make_checkpoint(const ImageEncoderConfig& config, ImageEncoderParams params,
                                  PretrainMetadata metadata);

std::size_t param_count(const EncoderCheckpoint& ckpt);

}  // namespace jft::encoders
