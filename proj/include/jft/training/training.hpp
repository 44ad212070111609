#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jft/data/dataset.hpp"
#include "jft/encoders/checkpoint.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/nn/layers.hpp"

namespace jft::training {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update. grads[i] == nullptr means a zero gradient.
// State buffers are created on the first call and must keep their shapes.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamConfig& config);

// Protocol floor on the number of epochs before early stopping may trigger.
inline constexpr std::size_t kMinEpochsFloor = 3;

struct TrainConfig {
  std::size_t max_epochs = 4;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::size_t min_epochs = kMinEpochsFloor;
  std::size_t patience = 2;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  bool freeze_text = false;
  bool freeze_image = false;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> losses;       // mean training loss per epoch
  std::vector<double> text_shares;  // mean text attention share per epoch (fusion only)
  std::size_t epochs_run = 0;
  std::string stop_reason;          // "early_stop", "max_epochs"
};

// False before min_epochs; afterwards true iff the last `patience` epochs all
// failed to beat the running best by more than tolerance. The best only moves
// on such an improvement.
bool early_stop_decision(std::span<const double> losses, const TrainConfig& config);

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::uint64_t corpus_seed = 0;  // recorded in the checkpoint metadata
};

struct TextPretrainResult {
  encoders::EncoderCheckpoint checkpoint;
  nn::LinearParams head;  // vocabulary head; not part of the checkpoint
  double final_loss = 0.0;
};

struct ImagePretrainResult {
  encoders::EncoderCheckpoint checkpoint;
  nn::LinearParams head;  // 4-way texture head; not part of the checkpoint
  double final_loss = 0.0;
};

// Masked-token reconstruction with a temporary vocabulary head.
TextPretrainResult pretrain_text(std::span<const data::TextCorpusSample> corpus,
                                 const encoders::TextEncoderConfig& config, const PretrainConfig& pretrain);
// 4-class texture recognition with a temporary linear head.
ImagePretrainResult pretrain_image(std::span<const data::ImageCorpusSample> corpus,
                                   const encoders::ImageEncoderConfig& config, const PretrainConfig& pretrain);

double masked_token_accuracy(const encoders::EncoderCheckpoint& ckpt, const nn::LinearParams& head,
                             std::span<const data::TextCorpusSample> corpus);
double pattern_accuracy(const encoders::EncoderCheckpoint& ckpt, const nn::LinearParams& head,
                        std::span<const data::ImageCorpusSample> corpus);

class ArchitectureMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws ArchitectureMismatch naming the first differing dimension.
void check_architecture(const encoders::EncoderCheckpoint& ckpt, const encoders::TextEncoderConfig& expected);
void check_architecture(const encoders::EncoderCheckpoint& ckpt, const encoders::ImageEncoderConfig& expected);

struct ModelSpec {
  fusion::Architecture arch = fusion::Architecture::fusion;
  fusion::FusionConfig fusion;
  encoders::TextEncoderConfig text;
  encoders::ImageEncoderConfig image;
};

struct FinetuneResult {
  fusion::FusionModel model;
  TrainHistory history;
};

// Builds the classifier from the checkpoints (fresh projection, attention and
// head parameters) and trains it on mean cross-entropy. Each step updates every
// non-frozen parameter, both encoders included, from the single batch loss.
// A checkpoint is required only for the modalities the architecture uses.
FinetuneResult joint_finetune(std::span<const data::PairedSample> train, const encoders::EncoderCheckpoint* text_ckpt,
                              const encoders::EncoderCheckpoint* image_ckpt, const ModelSpec& spec,
                              const TrainConfig& config);

// Encodes samples without recording gradients, [n, d] per modality; used for
// frozen encoders and for evaluation.
Tensor encode_text(const fusion::FusionModel& model, std::span<const data::PairedSample* const> samples);
Tensor encode_image(const fusion::FusionModel& model, std::span<const data::PairedSample* const> samples);

}  // namespace jft::training
