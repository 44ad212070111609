#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jft/autograd/tensor.hpp"
#include "jft/encoders/encoders.hpp"
#include "jft/nn/layers.hpp"
#include "jft/util/rng.hpp"

namespace jft::fusion {

// Which forward path a classifier uses. `fusion` is the full architecture;
// the others are the ablation baselines.
enum class Architecture { text_only, image_only, concat, fusion };

std::string_view to_string(Architecture arch);
Architecture architecture_from_string(std::string_view name);

struct FusionConfig {
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t classes = 3;

  void validate() const;
  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

// Both encoders plus projection, attention and head parameters. Components
// that an architecture does not use are absent.
struct FusionModel {
  Architecture arch = Architecture::fusion;
  FusionConfig config;
  encoders::TextEncoderConfig text_config;
  encoders::ImageEncoderConfig image_config;

  std::optional<encoders::TextEncoderParams> text;
  std::optional<encoders::ImageEncoderParams> image;
  std::optional<nn::LinearParams> project_text;   // [d_t -> d]
  std::optional<nn::LinearParams> project_image;  // [d_v -> d]
  std::optional<nn::MhaParams> attention;         // over the 2-token sequence
  nn::LinearParams head;                          // [2d -> C], or [d_m -> C] for one modality

  bool uses_text() const { return arch != Architecture::image_only; }
  bool uses_image() const { return arch != Architecture::text_only; }
};

// Fresh projection/attention/head parameters around the given encoders.
FusionModel build_model(Architecture arch, const FusionConfig& config, const encoders::TextEncoderConfig& text_config,
                        const encoders::ImageEncoderConfig& image_config,
                        std::optional<encoders::TextEncoderParams> text,
                        std::optional<encoders::ImageEncoderParams> image, Rng& rng);

// Component groups, in checkpoint order.
template <nn::ParamsOf<FusionModel> M, class F>
void visit(M&& m, F&& f) {
  if (m.text) encoders::visit(*m.text, "text.", f);
  if (m.image) encoders::visit(*m.image, "image.", f);
  if (m.project_text) nn::visit(*m.project_text, "project_text.", f);
  if (m.project_image) nn::visit(*m.project_image, "project_image.", f);
  if (m.attention) nn::visit(*m.attention, "attention.", f);
  nn::visit(m.head, "head.", f);
}

struct ParamBreakdown {
  std::size_t text_encoder = 0;
  std::size_t image_encoder = 0;
  std::size_t projections = 0;
  std::size_t attention = 0;
  std::size_t head = 0;

  std::size_t total() const { return text_encoder + image_encoder + projections + attention + head; }
};

ParamBreakdown param_breakdown(const FusionModel& model);
std::size_t param_count(const FusionModel& model);

struct AttentionRecord {
  Tensor weights;  // [h, 2, 2], post-softmax; token 0 is text, token 1 is image
  double text_share = 0.0;
  double image_share = 0.0;
};

// Mean attention mass on the text token over heads and both query rows; the
// image share is its complement.
AttentionRecord make_attention_record(Tensor weights);
std::pair<double, double> modality_attention_share(const AttentionRecord& record);

// Batched output of any architecture.
struct ForwardOutput {
  Tensor logits;                  // [b, C]
  std::optional<Tensor> weights;  // [b, h, 2, 2], fusion only
};

// Linear map of one modality's encoding to the common width.
Tensor project(const Tensor& features, const nn::LinearParams& p);

// Classifier from already-encoded modalities ([b, d_t] and/or [b, d_v]).
ForwardOutput forward_features(const FusionModel& model, const Tensor* text_features, const Tensor* image_features);

// Encodes then classifies a batch. images is [b, 1, s, s].
ForwardOutput forward_batch(const FusionModel& model, std::span<const std::vector<std::size_t>> tokens,
                            const Tensor& images);

struct FuseResult {
  Tensor logits;  // [C]
  std::optional<AttentionRecord> attention;
};

// Single pair through the full architecture: encode, project to d, stack as
// [text; image], self-attention over the two tokens, flatten to 2d, linear head.
FuseResult fuse_forward(std::span<const std::size_t> tokens, const Tensor& image, const FusionModel& model);

// Mean cross-entropy over rows of logits; the single training loss.
Tensor loss(const Tensor& logits, std::span<const std::size_t> labels);
Tensor loss(const Tensor& logits, std::size_t label);

}  // namespace jft::fusion
