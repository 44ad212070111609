#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "jft/data/dataset.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/io/config.hpp"
#include "jft/metrics/metrics.hpp"
#include "jft/training/training.hpp"

namespace jft::cli {

struct AblationMethod {
  std::string name;
  fusion::Architecture arch;
  bool freeze_encoders;
};

// image_only, text_only, concat_frozen, concat_finetuned, fusion.
const std::vector<AblationMethod>& ablation_methods();

struct MethodOutcome {
  AblationMethod method;
  metrics::RunReport report;
  fusion::ParamBreakdown params;
  std::vector<training::TrainHistory> histories;
};

struct AblationResult {
  std::vector<MethodOutcome> methods;
  double text_pretrain_loss = 0.0;
  double image_pretrain_loss = 0.0;
};

// Pretrains one text and one image encoder on generated corpora, then runs
// k-fold cross-validation of every method on the dataset.
AblationResult run_ablation(const data::Dataset& dataset, const io::RunConfig& config, std::ostream* log = nullptr);

nlohmann::ordered_json method_json(const MethodOutcome& outcome);
nlohmann::ordered_json params_json(const AblationResult& result);
std::string params_table(const AblationResult& result);

// Writes <method>.json, report.json, report.txt, params.json and config.resolved.json.
void write_ablation(const std::filesystem::path& dir, const AblationResult& result, const io::RunConfig& config);

}  // namespace jft::cli
