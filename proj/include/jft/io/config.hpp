#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "jft/data/dataset.hpp"
#include "jft/encoders/encoders.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/training/training.hpp"
#include "json.hpp"

namespace jft::io {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PretrainSettings {
  std::size_t text_corpus_size = 2000;
  std::size_t image_corpus_size = 2000;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;

  friend bool operator==(const PretrainSettings&, const PretrainSettings&) = default;
};

struct RunConfig {
  data::GeneratorSpec data;
  encoders::TextEncoderConfig text_encoder;
  encoders::ImageEncoderConfig image_encoder;
  fusion::FusionConfig fusion;
  training::TrainConfig train;
  PretrainSettings pretrain;
  std::size_t folds = 10;
  std::uint64_t seed = 42;

  void validate() const;
};

// Seeds of the individual stages, all derived from RunConfig::seed.
struct SeedPlan {
  std::uint64_t text_corpus;
  std::uint64_t image_corpus;
  std::uint64_t text_pretrain;
  std::uint64_t image_pretrain;
  std::uint64_t folds;
  std::uint64_t finetune(std::size_t fold) const { return finetune_base + fold; }
  std::uint64_t finetune_base;
};

SeedPlan seed_plan(std::uint64_t seed);

nlohmann::ordered_json to_json(const RunConfig& config);
// Missing keys take defaults; unknown keys and wrongly typed values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
// An empty path yields the defaults. JFT_SEED, when set, replaces the seed.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_seed_override(RunConfig& config);

training::PretrainConfig pretrain_config(const RunConfig& config, std::uint64_t seed, std::uint64_t corpus_seed);

nlohmann::ordered_json text_encoder_json(const encoders::TextEncoderConfig& c);
nlohmann::ordered_json image_encoder_json(const encoders::ImageEncoderConfig& c);
nlohmann::ordered_json fusion_json(const fusion::FusionConfig& c);
encoders::TextEncoderConfig text_encoder_from_json(const nlohmann::json& j, const std::string& where);
encoders::ImageEncoderConfig image_encoder_from_json(const nlohmann::json& j, const std::string& where);
fusion::FusionConfig fusion_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace jft::io
