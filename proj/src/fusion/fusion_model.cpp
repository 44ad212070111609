#include "jft/fusion/fusion_model.hpp"

#include <stdexcept>
#include <string>

#include "jft/autograd/ops.hpp"

namespace jft::fusion {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::text_only: return "text_only";
    case Architecture::image_only: return "image_only";
    case Architecture::concat: return "concat";
    case Architecture::fusion: return "fusion";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view name) {
  for (auto a : {Architecture::text_only, Architecture::image_only, Architecture::concat, Architecture::fusion}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

void FusionConfig::validate() const {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("fusion: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (classes < 2) throw std::invalid_argument("fusion: need at least 2 classes");
}

FusionModel build_model(Architecture arch, const FusionConfig& config, const encoders::TextEncoderConfig& text_config,
                        const encoders::ImageEncoderConfig& image_config,
                        std::optional<encoders::TextEncoderParams> text,
                        std::optional<encoders::ImageEncoderParams> image, Rng& rng) {
  config.validate();
  FusionModel m;
  m.arch = arch;
  m.config = config;
  m.text_config = text_config;
  m.image_config = image_config;
  if (m.uses_text()) {
    if (!text) throw std::invalid_argument(std::string(to_string(arch)) + " model needs text encoder parameters");
    m.text = std::move(text);
  }
  if (m.uses_image()) {
    if (!image) throw std::invalid_argument(std::string(to_string(arch)) + " model needs image encoder parameters");
    m.image = std::move(image);
  }
  const std::size_t d = config.width;
  switch (arch) {
    case Architecture::text_only:
      m.head = nn::init_linear(text_config.width, config.classes, rng);
      break;
    case Architecture::image_only:
      m.head = nn::init_linear(image_config.output_width(), config.classes, rng);
      break;
    case Architecture::concat:
    case Architecture::fusion:
      m.project_text = nn::init_linear(text_config.width, d, rng);
      m.project_image = nn::init_linear(image_config.output_width(), d, rng);
      if (arch == Architecture::fusion) m.attention = nn::init_mha(d, config.heads, rng);
      m.head = nn::init_linear(2 * d, config.classes, rng);
      break;
  }
  return m;
}

ParamBreakdown param_breakdown(const FusionModel& model) {
  ParamBreakdown b;
  if (model.text) b.text_encoder = encoders::param_count(*model.text);
  if (model.image) b.image_encoder = encoders::param_count(*model.image);
  if (model.project_text) b.projections += nn::param_count(*model.project_text);
  if (model.project_image) b.projections += nn::param_count(*model.project_image);
  if (model.attention) b.attention = nn::param_count(*model.attention);
  b.head = nn::param_count(model.head);
  return b;
}

std::size_t param_count(const FusionModel& model) {
  std::size_t n = 0;
  visit(model, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

AttentionRecord make_attention_record(Tensor weights) {
  if (weights.rank() != 3 || weights.dim(1) != 2 || weights.dim(2) != 2) {
    throw ShapeError("attention record: expected [h, 2, 2], got " + shape_str(weights.shape()));
  }
  const std::size_t heads = weights.dim(0);
  double text = 0.0;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t q = 0; q < 2; ++q) text += weights[(h * 2 + q) * 2 + 0];
  AttentionRecord r;
  r.text_share = text / static_cast<double>(2 * heads);
  r.image_share = 1.0 - r.text_share;
  r.weights = std::move(weights);
  return r;
}

std::pair<double, double> modality_attention_share(const AttentionRecord& record) {
  return {record.text_share, record.image_share};
}

Tensor project(const Tensor& features, const nn::LinearParams& p) { return nn::linear_forward(features, p); }

ForwardOutput forward_features(const FusionModel& model, const Tensor* text_features, const Tensor* image_features) {
  if (model.uses_text() && !text_features) throw std::invalid_argument("forward: text features required");
  if (model.uses_image() && !image_features) throw std::invalid_argument("forward: image features required");
  ForwardOutput out;
  switch (model.arch) {
    case Architecture::text_only:
      out.logits = nn::linear_forward(*text_features, model.head);
      return out;
    case Architecture::image_only:
      out.logits = nn::linear_forward(*image_features, model.head);
      return out;
    case Architecture::concat: {
      Tensor parts[] = {project(*text_features, *model.project_text), project(*image_features, *model.project_image)};
      out.logits = nn::linear_forward(concat(parts, 1), model.head);
      return out;
    }
    case Architecture::fusion: {
      const std::size_t b = text_features->dim(0), d = model.config.width;
      if (image_features->dim(0) != b) throw ShapeError("forward: text and image batch sizes differ");
      Tensor tokens[] = {reshape(project(*text_features, *model.project_text), {b, 1, d}),
                         reshape(project(*image_features, *model.project_image), {b, 1, d})};
      auto attended = nn::multi_head_attention(concat(tokens, 1), *model.attention);
      out.logits = nn::linear_forward(reshape(attended.output, {b, 2 * d}), model.head);
      out.weights = std::move(attended.weights);
      return out;
    }
  }
  throw std::logic_error("forward: unhandled architecture");
}

ForwardOutput forward_batch(const FusionModel& model, std::span<const std::vector<std::size_t>> tokens,
                            const Tensor& images) {
  std::optional<Tensor> text, image;
  if (model.uses_text()) {
    text = encoders::text_encode_batch(encoders::make_token_batch(tokens, model.text_config), *model.text,
                                       model.text_config);
  }
  if (model.uses_image()) image = encoders::image_encode_batch(images, *model.image, model.image_config);
  return forward_features(model, text ? &*text : nullptr, image ? &*image : nullptr);
}

FuseResult fuse_forward(std::span<const std::size_t> tokens, const Tensor& image, const FusionModel& model) {
  std::vector<std::vector<std::size_t>> one{{tokens.begin(), tokens.end()}};
  if (image.rank() != 3) throw ShapeError("fuse_forward: image must be [1, s, s], got " + shape_str(image.shape()));
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  auto out = forward_batch(model, one, reshape(image, batched));
  FuseResult r;
  r.logits = reshape(out.logits, {model.config.classes});
  if (out.weights) {
    const auto& w = *out.weights;
    r.attention = make_attention_record(Tensor({w.dim(1), 2, 2}, {w.values().begin(), w.values().end()}));
  }
  return r;
}

Tensor loss(const Tensor& logits, std::span<const std::size_t> labels) { return cross_entropy(logits, labels); }

Tensor loss(const Tensor& logits, std::size_t label) { return cross_entropy(logits, label); }

}  // namespace jft::fusion
