#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "jft/autograd/tensor.hpp"
#include "jft/nn/layers.hpp"
#include "jft/util/rng.hpp"

namespace jft::encoders {

inline constexpr std::size_t kPadToken = 0;
inline constexpr std::size_t kMaskToken = 1;
// First id available to ordinary tokens.
inline constexpr std::size_t kFirstWordToken = 2;

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t max_len = 16;
  std::size_t width = 48;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t pad_token = kPadToken;

  void validate() const;
  friend bool operator==(const TextEncoderConfig&, const TextEncoderConfig&) = default;
};

struct ImageEncoderConfig {
  std::size_t size = 16;
  std::vector<std::size_t> channels = {8, 32};
  std::size_t kernel = 3;

  void validate() const;
  std::size_t output_width() const { return channels.back(); }
  friend bool operator==(const ImageEncoderConfig&, const ImageEncoderConfig&) = default;
};

struct TextEncoderParams {
  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_len, d]
  std::vector<nn::TransformerBlockParams> blocks;
};

struct ImageEncoderParams {
  std::vector<nn::ConvParams> convs;
};

template <nn::ParamsOf<TextEncoderParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  f(prefix + "token_embedding", p.token_embedding);
  f(prefix + "position_embedding", p.position_embedding);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    nn::visit(p.blocks[i], prefix + "blocks." + std::to_string(i) + ".", f);
  }
}

template <nn::ParamsOf<ImageEncoderParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.convs.size(); ++i) {
    nn::visit(p.convs[i], prefix + "conv" + std::to_string(i + 1) + ".", f);
  }
}

template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  visit(p, "", [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

TextEncoderParams init_text_encoder(const TextEncoderConfig& config, Rng& rng);
ImageEncoderParams init_image_encoder(const ImageEncoderConfig& config, Rng& rng);

// Token sequences of a batch, each padded with the pad token to max_len.
// Throws on empty or over-long sequences and on ids outside the vocabulary.
struct TokenBatch {
  std::vector<std::size_t> ids;   // [batch * max_len]
  std::vector<double> keep;       // 1 for real tokens, 0 for padding
  std::size_t batch = 0;
  std::size_t max_len = 0;
};
TokenBatch make_token_batch(std::span<const std::vector<std::size_t>> sequences, const TextEncoderConfig& config);

// Per-position states [b, max_len, d]. Pad positions enter the blocks as zero
// vectors (token and position embeddings both masked out).
Tensor text_token_states(const TokenBatch& tokens, const TextEncoderParams& params, const TextEncoderConfig& config);
// Mean over non-pad positions of the token states, [b, d].
Tensor text_encode_batch(const TokenBatch& tokens, const TextEncoderParams& params, const TextEncoderConfig& config);
Tensor text_encode(std::span<const std::size_t> tokens, const TextEncoderParams& params,
                   const TextEncoderConfig& config);

// images [b, 1, size, size] -> [b, d_v] via conv blocks and global average pooling.
Tensor image_encode_batch(const Tensor& images, const ImageEncoderParams& params, const ImageEncoderConfig& config);
Tensor image_encode(const Tensor& image, const ImageEncoderParams& params, const ImageEncoderConfig& config);

}  // namespace jft::encoders
