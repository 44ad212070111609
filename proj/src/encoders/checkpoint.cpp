#include "jft/encoders/checkpoint.hpp"

#include <stdexcept>
#include <string>

namespace jft::encoders {

std::string_view to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

Modality modality_from_string(std::string_view name) {
  if (name == "text") return Modality::text;
  if (name == "image") return Modality::image;
  throw std::invalid_argument("unknown modality '" + std::string(name) + "'");
}

Tensor round_to_float(const Tensor& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(t[i]));
  return Tensor(t.shape(), std::move(v));
}

EncoderCheckpoint make_checkpoint(const TextEncoderConfig& config, TextEncoderParams params, PretrainMetadata metadata) {
  visit(params, "", [](const std::string&, Tensor& t) { t = round_to_float(t); });
  EncoderCheckpoint c;
  c.modality = Modality::text;
  c.text_config = config;
  c.text = std::move(params);
  c.metadata = std::move(metadata);
  return c;
}

EncoderCheckpoint make_checkpoint(const ImageEncoderConfig& config, ImageEncoderParams params,
                                  PretrainMetadata metadata) {
  visit(params, "", [](const std::string&, Tensor& t) { t = round_to_float(t); });
  EncoderCheckpoint c;
  c.modality = Modality::image;
  c.image_config = config;
  c.image = std::move(params);
  c.metadata = std::move(metadata);
  return c;
}

std::size_t param_count(const EncoderCheckpoint& ckpt) {
  if (ckpt.text) return param_count(*ckpt.text);
  if (ckpt.image) return param_count(*ckpt.image);
  return 0;
}

}  // namespace jft::encoders
