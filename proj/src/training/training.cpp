#include "jft/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "jft/autograd/ops.hpp"
#include "jft/autograd/tape.hpp"

namespace jft::training {
namespace {

constexpr std::size_t kEvalBatch = 64;
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Parameters registered on a tape, paired with the tensors they update.
struct Bound {
  std::vector<Tensor*> targets;
  std::vector<Tensor> watched;

  std::vector<const Tensor*> gradients(const GradientMap& grads) const {
    std::vector<const Tensor*> out;
    out.reserve(watched.size());
    for (const auto& w : watched) out.push_back(Tape::find(grads, w));
    return out;
  }
};

template <class Params, class Pred>
Bound bind(Params& model, Params& bound_copy, Tape& tape, Pred trainable) {
  Bound b;
  visit(model, [&](const std::string& name, Tensor& t) {
    if (trainable(name)) b.targets.push_back(&t);
  });
  visit(bound_copy, [&](const std::string& name, Tensor& t) {
    if (trainable(name)) {
      t = tape.watch(t);
      b.watched.push_back(t);
    }
  });
  return b;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

Tensor gather_rows(const Tensor& rows, std::span<const std::size_t> index) {
  const std::size_t d = rows.dim(1);
  std::vector<double> v;
  v.reserve(index.size() * d);
  for (auto i : index) v.insert(v.end(), rows.values().begin() + i * d, rows.values().begin() + (i + 1) * d);
  return Tensor({index.size(), d}, std::move(v));
}

// Masked-token pretraining graph: encoder states gathered at masked positions.
struct TextPretrainModel {
  encoders::TextEncoderParams encoder;
  nn::LinearParams head;
};

template <nn::ParamsOf<TextPretrainModel> P, class F>
void visit(P&& p, F&& f) {
  encoders::visit(p.encoder, "encoder.", f);
  nn::visit(p.head, "head.", f);
}

struct ImagePretrainModel {
  encoders::ImageEncoderParams encoder;
  nn::LinearParams head;
};

template <nn::ParamsOf<ImagePretrainModel> P, class F>
void visit(P&& p, F&& f) {
  encoders::visit(p.encoder, "encoder.", f);
  nn::visit(p.head, "head.", f);
}

Tensor masked_logits(const TextPretrainModel& m, const encoders::TextEncoderConfig& config,
                     std::span<const data::TextCorpusSample* const> batch, std::vector<std::size_t>& targets) {
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::size_t> rows;
  targets.clear();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    seqs.push_back(batch[b]->tokens);
    for (std::size_t k = 0; k < batch[b]->masked.size(); ++k) {
      rows.push_back(b * config.max_len + batch[b]->masked[k]);
      targets.push_back(batch[b]->targets[k]);
    }
  }
  auto tokens = encoders::make_token_batch(seqs, config);
  Tensor states = encoders::text_token_states(tokens, m.encoder, config);
  Tensor flat = reshape(states, {batch.size() * config.max_len, config.width});
  return nn::linear_forward(embedding_lookup(flat, rows, {rows.size()}), m.head);
}

Tensor pattern_logits(const ImagePretrainModel& m, const encoders::ImageEncoderConfig& config,
                      std::span<const data::ImageCorpusSample* const> batch) {
  std::vector<const std::vector<double>*> images;
  for (const auto* s : batch) images.push_back(&s->image);
  return nn::linear_forward(encoders::image_encode_batch(data::image_batch(images), m.encoder, config), m.head);
}

// Generic mini-batch loop shared by both pretraining tasks.
template <class Model, class Sample, class LossFn>
double run_pretraining(Model& model, std::span<const Sample> corpus, const PretrainConfig& cfg, LossFn loss_fn) {
  AdamState state;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  Rng shuffle(cfg.seed ^ kShuffleStream);
  auto order = iota_n(corpus.size());
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&corpus[order[i]]);
      Tape tape;
      TapeScope scope(tape);
      Model bound_copy = model;
      Bound bound = bind(model, bound_copy, tape, [](const std::string&) { return true; });
      Tensor loss = loss_fn(bound_copy, std::span<const Sample* const>(batch));
      auto grads = tape.backward(loss);
      adam_step(bound.targets, bound.gradients(grads), state, adam);
      total += loss.item() * static_cast<double>(batch.size());
    }
    last = total / static_cast<double>(corpus.size());
  }
  return last;
}

std::string mismatch(const char* what, std::size_t got, std::size_t want) {
  return std::string("architecture mismatch: ") + what + " is " + std::to_string(got) + " in checkpoint but " +
         std::to_string(want) + " in config";
}

}  // namespace

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in length");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i]->size() || (grads[i] && grads[i]->shape() != params[i]->shape())) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i]->shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<double> w(params[i]->values().begin(), params[i]->values().end());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i] ? (*grads[i])[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      w[j] -= config.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.eps);
    }
    *params[i] = Tensor(params[i]->shape(), std::move(w));
  }
}

void TrainConfig::validate() const {
  if (min_epochs < kMinEpochsFloor) {
    throw std::invalid_argument("min_epochs must be at least " + std::to_string(kMinEpochsFloor));
  }
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (patience == 0) throw std::invalid_argument("patience must be positive");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("tolerance must be non-negative");
}

bool early_stop_decision(std::span<const double> losses, const TrainConfig& config) {
  if (losses.size() < config.min_epochs) return false;
  double best = losses[0];
  std::size_t stale = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (best - losses[i] > config.tolerance) {
      best = losses[i];
      stale = 0;
    } else {
      ++stale;
    }
  }
  return stale >= config.patience;
}

TextPretrainResult pretrain_text(std::span<const data::TextCorpusSample> corpus,
                                 const encoders::TextEncoderConfig& config, const PretrainConfig& pretrain) {
  if (corpus.empty()) throw std::invalid_argument("pretrain_text: empty corpus");
  Rng rng(pretrain.seed);
  TextPretrainModel model{encoders::init_text_encoder(config, rng), nn::init_linear(config.width, config.vocab_size, rng)};
  double final_loss = run_pretraining(model, corpus, pretrain, [&](const TextPretrainModel& m, auto batch) {
    std::vector<std::size_t> targets;
    Tensor logits = masked_logits(m, config, batch, targets);
    return cross_entropy(logits, targets);
  });
  TextPretrainResult r;
  r.checkpoint = encoders::make_checkpoint(config, std::move(model.encoder),
                                           {"masked-token", pretrain.corpus_seed, pretrain.epochs, final_loss});
  r.head = model.head;
  r.final_loss = final_loss;
  return r;
}

ImagePretrainResult pretrain_image(std::span<const data::ImageCorpusSample> corpus,
                                   const encoders::ImageEncoderConfig& config, const PretrainConfig& pretrain) {
  if (corpus.empty()) throw std::invalid_argument("pretrain_image: empty corpus");
  Rng rng(pretrain.seed);
  ImagePretrainModel model{encoders::init_image_encoder(config, rng),
                           nn::init_linear(config.output_width(), data::kPatternClasses, rng)};
  double final_loss = run_pretraining(model, corpus, pretrain, [&](const ImagePretrainModel& m, auto batch) {
    std::vector<std::size_t> labels;
    for (const auto* s : batch) labels.push_back(s->label);
    return cross_entropy(pattern_logits(m, config, batch), labels);
  });
  ImagePretrainResult r;
  r.checkpoint = encoders::make_checkpoint(config, std::move(model.encoder),
                                           {"pattern-4class", pretrain.corpus_seed, pretrain.epochs, final_loss});
  r.head = model.head;
  r.final_loss = final_loss;
  return r;
}

double masked_token_accuracy(const encoders::EncoderCheckpoint& ckpt, const nn::LinearParams& head,
                             std::span<const data::TextCorpusSample> corpus) {
  if (!ckpt.text) throw std::invalid_argument("masked_token_accuracy: not a text checkpoint");
  TextPretrainModel m{*ckpt.text, head};
  std::size_t hits = 0, total = 0;
  for (std::size_t start = 0; start < corpus.size(); start += kEvalBatch) {
    std::vector<const data::TextCorpusSample*> batch;
    for (std::size_t i = start; i < std::min(corpus.size(), start + kEvalBatch); ++i) batch.push_back(&corpus[i]);
    std::vector<std::size_t> targets;
    Tensor logits = masked_logits(m, ckpt.text_config, batch, targets);
    const std::size_t v = logits.dim(1);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      auto row = logits.values().subspan(r * v, v);
      hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == targets[r];
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double pattern_accuracy(const encoders::EncoderCheckpoint& ckpt, const nn::LinearParams& head,
                        std::span<const data::ImageCorpusSample> corpus) {
  if (!ckpt.image) throw std::invalid_argument("pattern_accuracy: not an image checkpoint");
  ImagePretrainModel m{*ckpt.image, head};
  std::size_t hits = 0;
  for (std::size_t start = 0; start < corpus.size(); start += kEvalBatch) {
    std::vector<const data::ImageCorpusSample*> batch;
    for (std::size_t i = start; i < std::min(corpus.size(), start + kEvalBatch); ++i) batch.push_back(&corpus[i]);
    Tensor logits = pattern_logits(m, ckpt.image_config, batch);
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      auto row = logits.values().subspan(r * c, c);
      hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == batch[r]->label;
    }
  }
  return corpus.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(corpus.size());
}

void check_architecture(const encoders::EncoderCheckpoint& ckpt, const encoders::TextEncoderConfig& expected) {
  if (ckpt.modality != encoders::Modality::text || !ckpt.text) {
    throw ArchitectureMismatch("architecture mismatch: expected a text encoder checkpoint");
  }
  const auto& c = ckpt.text_config;
  if (c.vocab_size != expected.vocab_size) throw ArchitectureMismatch(mismatch("text vocab_size", c.vocab_size, expected.vocab_size));
  if (c.max_len != expected.max_len) throw ArchitectureMismatch(mismatch("text max_len", c.max_len, expected.max_len));
  if (c.width != expected.width) throw ArchitectureMismatch(mismatch("text width", c.width, expected.width));
  if (c.blocks != expected.blocks) throw ArchitectureMismatch(mismatch("text blocks", c.blocks, expected.blocks));
  if (c.heads != expected.heads) throw ArchitectureMismatch(mismatch("text heads", c.heads, expected.heads));
  if (c.pad_token != expected.pad_token) throw ArchitectureMismatch(mismatch("text pad_token", c.pad_token, expected.pad_token));
}

void check_architecture(const encoders::EncoderCheckpoint& ckpt, const encoders::ImageEncoderConfig& expected) {
  if (ckpt.modality != encoders::Modality::image || !ckpt.image) {
    throw ArchitectureMismatch("architecture mismatch: expected an image encoder checkpoint");
  }
  const auto& c = ckpt.image_config;
  if (c.size != expected.size) throw ArchitectureMismatch(mismatch("image size", c.size, expected.size));
  if (c.kernel != expected.kernel) throw ArchitectureMismatch(mismatch("image kernel", c.kernel, expected.kernel));
  if (c.channels.size() != expected.channels.size()) {
    throw ArchitectureMismatch(mismatch("image conv block count", c.channels.size(), expected.channels.size()));
  }
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    if (c.channels[i] != expected.channels[i]) {
      auto what = "image block " + std::to_string(i + 1) + " channels";
      throw ArchitectureMismatch(mismatch(what.c_str(), c.channels[i], expected.channels[i]));
    }
  }
}

Tensor encode_text(const fusion::FusionModel& model, std::span<const data::PairedSample* const> samples) {
  std::vector<double> out;
  out.reserve(samples.size() * model.text_config.width);
  for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
    std::vector<std::vector<std::size_t>> seqs;
    for (std::size_t i = start; i < std::min(samples.size(), start + kEvalBatch); ++i) seqs.push_back(samples[i]->text);
    Tensor f = encoders::text_encode_batch(encoders::make_token_batch(seqs, model.text_config), *model.text,
                                           model.text_config);
    out.insert(out.end(), f.values().begin(), f.values().end());
  }
  return Tensor({samples.size(), model.text_config.width}, std::move(out));
}

Tensor encode_image(const fusion::FusionModel& model, std::span<const data::PairedSample* const> samples) {
  std::vector<double> out;
  const std::size_t d = model.image_config.output_width();
  out.reserve(samples.size() * d);
  for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
    std::vector<const std::vector<double>*> imgs;
    for (std::size_t i = start; i < std::min(samples.size(), start + kEvalBatch); ++i) imgs.push_back(&samples[i]->image);
    Tensor f = encoders::image_encode_batch(data::image_batch(imgs), *model.image, model.image_config);
    out.insert(out.end(), f.values().begin(), f.values().end());
  }
  return Tensor({samples.size(), d}, std::move(out));
}

FinetuneResult joint_finetune(std::span<const data::PairedSample> train, const encoders::EncoderCheckpoint* text_ckpt,
                              const encoders::EncoderCheckpoint* image_ckpt, const ModelSpec& spec,
                              const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("joint_finetune: empty training set");
  const bool uses_text = spec.arch != fusion::Architecture::image_only;
  const bool uses_image = spec.arch != fusion::Architecture::text_only;
  if (uses_text) {
    if (!text_ckpt) throw std::invalid_argument("joint_finetune: text checkpoint required");
    check_architecture(*text_ckpt, spec.text);
  }
  if (uses_image) {
    if (!image_ckpt) throw std::invalid_argument("joint_finetune: image checkpoint required");
    check_architecture(*image_ckpt, spec.image);
  }
  for (const auto& s : train) {
    if (s.label >= spec.fusion.classes) {
      throw std::invalid_argument("joint_finetune: sample " + std::to_string(s.id) + " label outside " +
                                  std::to_string(spec.fusion.classes) + " classes");
    }
  }

  Rng init_rng(config.seed);
  FinetuneResult result;
  auto& model = result.model;
  model = fusion::build_model(spec.arch, spec.fusion, spec.text, spec.image,
                              uses_text ? text_ckpt->text : std::nullopt, uses_image ? image_ckpt->image : std::nullopt,
                              init_rng);

  const bool text_frozen = uses_text && config.freeze_text;
  const bool image_frozen = uses_image && config.freeze_image;
  std::vector<const data::PairedSample*> all;
  for (const auto& s : train) all.push_back(&s);
  std::optional<Tensor> text_cache, image_cache;
  if (text_frozen && config.max_epochs > 0) text_cache = encode_text(model, all);
  if (image_frozen && config.max_epochs > 0) image_cache = encode_image(model, all);

  auto trainable = [&](const std::string& name) {
    if (starts_with(name, "text.")) return !config.freeze_text;
    if (starts_with(name, "image.")) return !config.freeze_image;
    return true;
  };

  AdamState state;
  Rng shuffle(config.seed ^ kShuffleStream);
  auto order = iota_n(train.size());
  auto& history = result.history;
  history.stop_reason = "max_epochs";
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    double loss_sum = 0.0, share_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<const data::PairedSample*> batch;
      std::vector<std::size_t> labels;
      for (auto i : idx) {
        batch.push_back(&train[i]);
        labels.push_back(train[i].label);
      }

      Tape tape;
      TapeScope scope(tape);
      fusion::FusionModel bound_model = model;
      Bound bound = bind(model, bound_model, tape, trainable);

      std::optional<Tensor> text_features, image_features;
      if (uses_text) {
        if (text_cache) {
          text_features = gather_rows(*text_cache, idx);
        } else {
          std::vector<std::vector<std::size_t>> seqs;
          for (const auto* s : batch) seqs.push_back(s->text);
          text_features = encoders::text_encode_batch(encoders::make_token_batch(seqs, model.text_config),
                                                      *bound_model.text, model.text_config);
        }
      }
      if (uses_image) {
        if (image_cache) {
          image_features = gather_rows(*image_cache, idx);
        } else {
          std::vector<const std::vector<double>*> imgs;
          for (const auto* s : batch) imgs.push_back(&s->image);
          image_features = encoders::image_encode_batch(data::image_batch(imgs), *bound_model.image, model.image_config);
        }
      }
      auto out = fusion::forward_features(bound_model, text_features ? &*text_features : nullptr,
                                          image_features ? &*image_features : nullptr);
      Tensor loss = fusion::loss(out.logits, labels);
      auto grads = tape.backward(loss);
      adam_step(bound.targets, bound.gradients(grads), state, config.adam);

      loss_sum += loss.item() * static_cast<double>(batch.size());
      if (out.weights) {
        const auto& w = *out.weights;
        const std::size_t per = w.size() / batch.size();
        for (std::size_t b = 0; b < batch.size(); ++b) {
          std::vector<double> one(w.values().begin() + b * per, w.values().begin() + (b + 1) * per);
          share_sum += fusion::make_attention_record(Tensor({per / 4, 2, 2}, std::move(one))).text_share;
        }
      }
    }
    const double n = static_cast<double>(train.size());
    history.losses.push_back(loss_sum / n);
    if (spec.arch == fusion::Architecture::fusion) history.text_shares.push_back(share_sum / n);
    history.epochs_run = epoch + 1;
    if (!std::isfinite(history.losses.back())) throw std::runtime_error("joint_finetune: training loss diverged");
    if (early_stop_decision(history.losses, config)) {
      history.stop_reason = "early_stop";
      break;
    }
  }
  return result;
}

}  // namespace jft::training
