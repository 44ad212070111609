#include "jft/encoders/encoders.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "jft/autograd/ops.hpp"

namespace jft::encoders {

void TextEncoderConfig::validate() const {
  if (vocab_size <= kFirstWordToken) throw std::invalid_argument("text encoder: vocab_size must exceed 2");
  if (max_len == 0) throw std::invalid_argument("text encoder: max_len must be positive");
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("text encoder: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (pad_token >= vocab_size) throw std::invalid_argument("text encoder: pad_token outside vocabulary");
}

void ImageEncoderConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("image encoder: needs at least one conv block");
  std::size_t s = size;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw std::invalid_argument("image encoder: channel counts must be positive");
    if (kernel == 0 || kernel > s) {
      throw std::invalid_argument("image encoder: kernel " + std::to_string(kernel) + " larger than block " +
                                  std::to_string(i + 1) + " input " + std::to_string(s));
    }
    s = (s - kernel + 1) / 2;
    if (s == 0) throw std::invalid_argument("image encoder: spatial size vanishes after block " + std::to_string(i + 1));
  }
}

TextEncoderParams init_text_encoder(const TextEncoderConfig& config, Rng& rng) {
  config.validate();
  TextEncoderParams p;
  const std::size_t d = config.width;
  p.token_embedding = nn::glorot_uniform({config.vocab_size, d}, config.vocab_size, d, rng);
  p.position_embedding = nn::glorot_uniform({config.max_len, d}, config.max_len, d, rng);
  for (std::size_t i = 0; i < config.blocks; ++i) p.blocks.push_back(nn::init_transformer_block(d, config.heads, rng));
  return p;
}

ImageEncoderParams init_image_encoder(const ImageEncoderConfig& config, Rng& rng) {
  config.validate();
  ImageEncoderParams p;
  std::size_t in = 1;
  for (std::size_t out : config.channels) {
    p.convs.push_back(nn::init_conv(in, out, config.kernel, rng));
    in = out;
  }
  return p;
}

TokenBatch make_token_batch(std::span<const std::vector<std::size_t>> sequences, const TextEncoderConfig& config) {
  TokenBatch batch;
  batch.batch = sequences.size();
  batch.max_len = config.max_len;
  batch.ids.assign(batch.batch * config.max_len, config.pad_token);
  batch.keep.assign(batch.batch * config.max_len, 0.0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& seq = sequences[b];
    if (seq.empty()) throw std::invalid_argument("text encoder: empty token sequence");
    if (seq.size() > config.max_len) {
      throw std::invalid_argument("text encoder: sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                                  std::to_string(config.max_len));
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] >= config.vocab_size) {
        throw std::out_of_range("text encoder: token id " + std::to_string(seq[i]) + " >= vocab_size " +
                                std::to_string(config.vocab_size));
      }
      batch.ids[b * config.max_len + i] = seq[i];
      batch.keep[b * config.max_len + i] = seq[i] == config.pad_token ? 0.0 : 1.0;
    }
  }
  return batch;
}

Tensor text_token_states(const TokenBatch& tokens, const TextEncoderParams& params, const TextEncoderConfig& config) {
  const std::size_t b = tokens.batch, len = tokens.max_len, d = config.width;
  std::vector<std::size_t> positions(b * len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % len;
  Tensor x = add(embedding_lookup(params.token_embedding, tokens.ids, {b, len}),
                 embedding_lookup(params.position_embedding, positions, {b, len}));
  std::vector<double> mask(b * len * d);
  for (std::size_t i = 0; i < b * len; ++i)
    for (std::size_t j = 0; j < d; ++j) mask[i * d + j] = tokens.keep[i];
  x = mul(x, Tensor({b, len, d}, std::move(mask)));
  for (const auto& block : params.blocks) x = nn::transformer_block(x, block);
  return x;
}

Tensor text_encode_batch(const TokenBatch& tokens, const TextEncoderParams& params, const TextEncoderConfig& config) {
  const std::size_t b = tokens.batch, len = tokens.max_len;
  Tensor states = text_token_states(tokens, params, config);
  std::vector<double> pool(b * len, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    double count = 0.0;
    for (std::size_t i = 0; i < len; ++i) count += tokens.keep[r * len + i];
    if (count == 0.0) throw std::invalid_argument("text encoder: sequence contains only padding");
    for (std::size_t i = 0; i < len; ++i) pool[r * len + i] = tokens.keep[r * len + i] / count;
  }
  Tensor pooled = matmul(Tensor({b, 1, len}, std::move(pool)), states);
  return reshape(pooled, {b, config.width});
}

Tensor text_encode(std::span<const std::size_t> tokens, const TextEncoderParams& params,
                   const TextEncoderConfig& config) {
  std::vector<std::vector<std::size_t>> one{{tokens.begin(), tokens.end()}};
  return reshape(text_encode_batch(make_token_batch(one, config), params, config), {config.width});
}

Tensor image_encode_batch(const Tensor& images, const ImageEncoderParams& params, const ImageEncoderConfig& config) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != config.size || images.dim(3) != config.size) {
    throw ShapeError("image encoder: expected [b, 1, " + std::to_string(config.size) + ", " +
                     std::to_string(config.size) + "], got " + shape_str(images.shape()));
  }
  for (double v : images.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("image encoder: non-finite pixel value");
  }
  Tensor x = images;
  for (const auto& conv : params.convs) x = nn::conv_block(x, conv);
  const std::size_t b = x.dim(0), c = x.dim(1), area = x.dim(2) * x.dim(3);
  return mean(reshape(x, {b, c, area}), 2);
}

Tensor image_encode(const Tensor& image, const ImageEncoderParams& params, const ImageEncoderConfig& config) {
  if (image.rank() != 3) {
    throw ShapeError("image encoder: expected [1, " + std::to_string(config.size) + ", " +
                     std::to_string(config.size) + "], got " + shape_str(image.shape()));
  }
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  Tensor out = image_encode_batch(reshape(image, batched), params, config);
  return reshape(out, {config.output_width()});
}

}  // namespace jft::encoders
